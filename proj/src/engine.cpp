#include "bzsim/engine.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "parallel.hpp"

namespace bzsim {

namespace {

// Stream tags. Each random consumer gets its own stream so results do not
// depend on how work is scheduled.
enum : std::uint64_t {
  kTagMeans = 1,
  kTagTrainSet,
  kTagTestSet,
  kTagValidationSet,
  kTagServerShard,
  kTagPartition,
  kTagDataAttack,
  kTagInit,
  kTagLocalTraining,
  kTagParameterAttack,
  kTagServer,
};

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  check(cfg.clients >= 1, "clients must be >= 1");
  check(cfg.rounds >= 0, "rounds must be >= 0");
  check(cfg.attacker_fraction >= 0.0 && cfg.attacker_fraction < 1.0,
        "attacker_fraction must lie in [0, 1)");
  check(is_known_aggregator(cfg.aggregator.name),
        "unknown aggregator '" + cfg.aggregator.name + "'");
  check(cfg.train.epochs >= 1, "train.epochs must be >= 1");
  check(cfg.train.batch_size >= 1, "train.batch_size must be >= 1");
  check(cfg.train.learning_rate >= 0.0 && std::isfinite(cfg.train.learning_rate),
        "train.learning_rate must be finite and >= 0");
  check(cfg.train.architecture == "softmax" || cfg.train.architecture == "mlp",
        "train.architecture must be 'softmax' or 'mlp'");
  check(cfg.train.architecture != "mlp" || cfg.train.hidden_width >= 1,
        "train.hidden_width must be >= 1");
  check(cfg.data.classes >= 2, "data.classes must be >= 2");
  check(cfg.data.features >= 1, "data.features must be >= 1");
  check(cfg.data.train_per_class >= 1 && cfg.data.test_per_class >= 1,
        "data.train_per_class and data.test_per_class must be >= 1");
  check(cfg.data.spread > 0.0, "data.spread must be positive");
  check(cfg.data.mean_scale >= 0.0, "data.mean_scale must be >= 0");
  check(cfg.data.partition == "iid" || cfg.data.partition == "dirichlet",
        "data.partition must be 'iid' or 'dirichlet'");
  check(cfg.data.alpha > 0.0, "data.alpha must be positive");
  check(cfg.sizes.regular_true >= 1, "sizes.regular_true must be >= 1");
  check(!cfg.sizes.attacker_true || *cfg.sizes.attacker_true >= 1,
        "sizes.attacker_true must be >= 1");
  check(!cfg.sizes.attacker_declared || *cfg.sizes.attacker_declared >= 1,
        "sizes.attacker_declared must be >= 1");
  check(cfg.attack.weight_case == 1 || cfg.attack.weight_case == 2,
        "attack.case must be 1 or 2");
  check(cfg.attack.sigma > 0.0, "attack.sigma must be positive");
  check(cfg.attack.sigma_data >= 0.0, "attack.sigma_data must be >= 0");
  check(cfg.attack.copies_of < cfg.clients, "attack.copies_of must name a client or be -1");
  check(cfg.aggregator.epsilon > 0.0, "aggregator.epsilon must be positive");
  check(cfg.aggregator.weiszfeld_iters >= 0, "aggregator.weiszfeld_iters must be >= 0");
  check(cfg.aggregator.rho >= 0.0, "aggregator.rho must be >= 0");
  check(!cfg.aggregator.f || *cfg.aggregator.f >= 0, "aggregator.f must be >= 0");
}

ExperimentConfig resolve(const ExperimentConfig& input) {
  validate(input);
  ExperimentConfig cfg = input;
  const int k = cfg.clients;
  const int attackers = attacker_count(k, cfg.attacker_fraction);
  check(cfg.attack.kind == AttackKind::None || attackers > 0 ||
            cfg.attacker_fraction == 0.0,
        "attack configured but attacker_fraction yields no attackers");

  auto& a = cfg.aggregator;
  if (!a.f) a.f = attackers;
  const int f = *a.f;
  if (!a.m) a.m = std::max(1, k - f);
  if (!a.beta) a.beta = std::min(f, (k - 1) / 2);
  if (!a.k_near) a.k_near = std::max(1, k - 2 * f);
  if (!a.gamma) a.gamma = cfg.train.learning_rate;
  if (!a.zeno_keep) a.zeno_keep = std::max(1, k - f);
  check(*a.m >= 1 && *a.m <= k, "aggregator.m must lie in [1, clients]");
  check(*a.beta >= 0 && 2 * *a.beta < k, "aggregator.beta must satisfy 2*beta < clients");
  check(*a.k_near >= 1 && *a.k_near <= k, "aggregator.k_near must lie in [1, clients]");
  check(*a.zeno_keep >= 1 && *a.zeno_keep <= k, "aggregator.zeno_keep must lie in [1, clients]");
  if (a.name == "faba") check(f < k, "faba needs f < clients");
  if (a.name == "bulyan") check(k > 4 * f, "bulyan needs clients > 4f");

  auto& s = cfg.sizes;
  if (cfg.attack.kind == AttackKind::WeightAttack) {
    if (cfg.attack.weight_case == 1) {
      if (!s.attacker_true) s.attacker_true = std::max<std::int64_t>(1, s.regular_true / 25);
      if (!s.attacker_declared) s.attacker_declared = s.regular_true;
    } else {
      if (!s.attacker_true) s.attacker_true = s.regular_true;
      if (!s.attacker_declared) s.attacker_declared = 10 * s.regular_true;
    }
  } else {
    if (!s.attacker_true) s.attacker_true = s.regular_true;
    if (!s.attacker_declared) s.attacker_declared = *s.attacker_true;
  }

  if (cfg.data.partition == "iid") {
    const auto needed = static_cast<std::int64_t>(k - attackers) * s.regular_true +
                        static_cast<std::int64_t>(attackers) * *s.attacker_true;
    const auto available =
        static_cast<std::int64_t>(cfg.data.train_per_class) * cfg.data.classes;
    check(needed <= available, "client sizes need " + std::to_string(needed) +
                                   " training samples but only " + std::to_string(available) +
                                   " are generated");
  }
  return cfg;
}

AggregatorConfig aggregator_config(const ExperimentConfig& r) {
  const auto& a = r.aggregator;
  return {.f = a.f.value(),
          .m = a.m.value(),
          .beta = a.beta.value(),
          .k_near = a.k_near.value(),
          .gamma = a.gamma.value(),
          .rho = a.rho,
          .epsilon = a.epsilon,
          .weiszfeld_iters = a.weiszfeld_iters,
          .zeno_keep = a.zeno_keep.value()};
}

TrainConfig train_config(const ExperimentConfig& r) {
  TrainConfig t;
  t.epochs = r.train.epochs;
  t.batch_size = r.train.batch_size;
  t.learning_rate = r.train.learning_rate;
  t.architecture = r.train.architecture == "mlp"
                       ? Architecture::mlp(r.data.features, r.data.classes, r.train.hidden_width)
                       : Architecture::softmax(r.data.features, r.data.classes);
  return t;
}

AttackSpec attack_spec(const ExperimentConfig& r) {
  AttackSpec spec;
  spec.kind = r.attack.kind;
  spec.factor = r.attack.factor;
  spec.sigma = r.attack.sigma;
  spec.sigma_data = r.attack.sigma_data;
  spec.copies_of = r.attack.copies_of;
  spec.weight_case = r.attack.weight_case;
  spec.declared_size = r.sizes.attacker_declared.value();
  spec.attacker_ids = attacker_ids_for(r.clients, r.attacker_fraction);
  return spec;
}

bool RoundRecord::same_outcome(const RoundRecord& o) const {
  return round == o.round && test_accuracy == o.test_accuracy &&
         mean_test_loss == o.mean_test_loss && accepted_ids == o.accepted_ids &&
         attacker_accepted_count == o.attacker_accepted_count && op_counts == o.op_counts &&
         aggregation_failed == o.aggregation_failed;
}

bool converged_predicate(const std::vector<RoundRecord>& records) {
  if (records.empty()) return true;
  const std::size_t n = std::min<std::size_t>(10, records.size());
  double mean = 0.0;
  for (std::size_t i = records.size() - n; i < records.size(); ++i) mean += records[i].test_accuracy;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = records.size() - n; i < records.size(); ++i) {
    const double d = records[i].test_accuracy - mean;
    var += d * d;
  }
  return std::sqrt(var / static_cast<double>(n)) < 0.02;
}

Simulation::Simulation(const ExperimentConfig& cfg, int workers)
    : cfg_(resolve(cfg)), workers_(workers) {
  train_ = train_config(cfg_);
  agg_ = aggregator_config(cfg_);
  attack_ = attack_spec(cfg_);
  const auto seed = cfg_.seed;
  const auto& d = cfg_.data;

  RngStream means_rng(seed, stream_key(kTagMeans));
  const BlobSource source(d.classes, d.features, d.spread, d.mean_scale, means_rng);
  RngStream train_rng(seed, stream_key(kTagTrainSet));
  RngStream test_rng(seed, stream_key(kTagTestSet));
  RngStream val_rng(seed, stream_key(kTagValidationSet));
  RngStream server_rng(seed, stream_key(kTagServerShard));
  train_set_ = source.draw(d.train_per_class, train_rng);
  test_set_ = source.draw(d.test_per_class, test_rng);
  validation_set_ = source.draw(std::max<std::size_t>(1, d.validation_per_class), val_rng);
  server_shard_ = source.draw(std::max<std::size_t>(1, d.server_per_class), server_rng);

  const int k = cfg_.clients;
  RngStream part_rng(seed, stream_key(kTagPartition));
  Partition partition;
  if (d.partition == "iid") {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
      sizes[c] = static_cast<std::size_t>(attack_.attacker_ids.contains(c)
                                              ? *cfg_.sizes.attacker_true
                                              : cfg_.sizes.regular_true);
    }
    partition = partition_iid(train_set_, sizes, part_rng);
  } else {
    partition = partition_dirichlet(train_set_, k, d.alpha, part_rng);
  }

  for (int c = 0; c < k; ++c) {
    RngStream attack_rng(seed, stream_key(kTagDataAttack, static_cast<std::uint64_t>(c)));
    shards_.push_back(apply_data_attack(attack_, c, subset(train_set_, partition.assignment[c]),
                                        attack_rng));
    true_sizes_.push_back(static_cast<std::int64_t>(partition.assignment[c].size()));
  }

  RngStream init_rng(seed, stream_key(kTagInit));
  initial_ = init_params(train_.architecture, init_rng);
  history_.assign(static_cast<std::size_t>(k), UpdateVector::zeros(initial_.dim()));
}

std::vector<ClientReport> Simulation::client_reports(const UpdateVector& global,
                                                     int round_idx) const {
  const auto k = static_cast<std::size_t>(cfg_.clients);
  std::vector<UpdateVector> local(k);
  detail::parallel_for(k, workers_, [&](std::size_t c) {
    RngStream rng(cfg_.seed, stream_key(kTagLocalTraining, static_cast<std::uint64_t>(round_idx), c));
    try {
      local[c] = train_local(global, shards_[c], train_, rng);
    } catch (const TrainingError& e) {
      std::ostringstream msg;
      msg << "round " << round_idx << ", client " << c << ": " << e.what();
      throw TrainingError(msg.str());
    }
  });

  std::vector<ClientReport> reports;
  reports.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    reports.push_back({.client_id = static_cast<int>(c),
                       .update = std::move(local[c]),
                       .declared_size = true_sizes_[c],
                       .true_size = true_sizes_[c]});
  }
  RngStream attack_rng(cfg_.seed,
                       stream_key(kTagParameterAttack, static_cast<std::uint64_t>(round_idx)));
  return apply_parameter_attack(attack_, std::move(reports), attack_rng);
}

std::pair<UpdateVector, RoundRecord> Simulation::run_round(const UpdateVector& global,
                                                           int round_idx) {
  require_finite(global.values(), "global model");
  const auto started = std::chrono::steady_clock::now();

  const auto reports = client_reports(global, round_idx);
  // The server only ever sees (id, update, declared size).
  std::vector<SubmittedUpdate> submitted;
  submitted.reserve(reports.size());
  for (const auto& r : reports) submitted.push_back(r.submitted());

  for (std::size_t c = 0; c < submitted.size(); ++c) {
    history_[c] = vector_add(history_[c], vector_sub(submitted[c].update, global));
  }

  ServerSideAssets assets{.validation_set = &validation_set_,
                          .server_shard = &server_shard_,
                          .previous_global = global,
                          .train = train_,
                          .server_seed = cfg_.seed ^ stream_key(kTagServer,
                                                                static_cast<std::uint64_t>(round_idx))};
  RoundRecord record;
  record.round = round_idx;
  UpdateVector next = global;
  try {
    auto result = aggregate(cfg_.aggregator.name, submitted, agg_,
                            {.assets = &assets, .history = history_});
    next = std::move(result.aggregate);
    record.accepted_ids = std::move(result.accepted_ids);
    record.op_counts = result.op_counts;
  } catch (const AggregationError&) {
    record.aggregation_failed = true;
  }
  record.attacker_accepted_count = static_cast<int>(std::ranges::count_if(
      record.accepted_ids, [&](int id) { return attack_.attacker_ids.contains(id); }));

  const auto eval = evaluate(train_.architecture, next, test_set_);
  record.test_accuracy = eval.accuracy;
  record.mean_test_loss = eval.mean_loss;
  record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             started)
                       .count();
  return {std::move(next), std::move(record)};
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, int workers) {
  ExperimentResult result;
  result.config = resolve(cfg);
  Simulation sim(result.config, workers);
  UpdateVector global = sim.initial_model();
  result.initial_accuracy = evaluate(sim.architecture(), global, sim.test_set()).accuracy;
  result.final_accuracy = result.initial_accuracy;
  try {
    for (int r = 0; r < result.config.rounds; ++r) {
      auto [next, record] = sim.run_round(global, r);
      global = std::move(next);
      result.final_accuracy = record.test_accuracy;
      result.records.push_back(std::move(record));
    }
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  result.converged = converged_predicate(result.records);
  return result;
}

std::uint64_t sweep_seed(std::uint64_t base_seed, double fraction, const std::string& aggregator) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : aggregator) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return base_seed ^ stream_key(0x5eed, std::bit_cast<std::uint64_t>(fraction), h);
}

namespace {

ExperimentResult run_guarded(const ExperimentConfig& cfg) {
  try {
    return run_experiment(cfg, 1);
  } catch (const std::exception& e) {
    ExperimentResult failed;
    failed.config = cfg;
    failed.error = e.what();
    return failed;
  }
}

}  // namespace

std::vector<ExperimentResult> sweep(const ExperimentConfig& base,
                                    const std::vector<double>& fractions,
                                    const std::vector<std::string>& aggregators, int workers) {
  std::vector<ExperimentConfig> configs;
  for (double fraction : fractions) {
    for (const auto& name : aggregators) {
      ExperimentConfig cfg = base;
      cfg.attacker_fraction = fraction;
      cfg.aggregator.name = name;
      cfg.seed = sweep_seed(base.seed, fraction, name);
      if (fraction == 0.0) cfg.attack.kind = AttackKind::None;
      configs.push_back(std::move(cfg));
    }
  }
  std::vector<ExperimentResult> results(configs.size());
  detail::parallel_for(configs.size(), workers,
                       [&](std::size_t i) { results[i] = run_guarded(configs[i]); });
  return results;
}

AttackComparison compare_attacks(const ExperimentConfig& base, int workers) {
  AttackComparison cmp;
  cmp.attacks = {"none", "label_flip", "sign_flip", "weight_attack"};
  cmp.aggregators = {"multikrum", "faba"};

  std::vector<ExperimentConfig> configs;
  for (const auto& agg : cmp.aggregators) {
    for (const auto& attack : cmp.attacks) {
      ExperimentConfig cfg = base;
      cfg.attacker_fraction = 0.4;
      cfg.aggregator.name = agg;
      cfg.attack.kind = *parse_attack_kind(attack);
      if (cfg.attack.kind == AttackKind::SignFlip) cfg.attack.factor = -4.0;
      if (cfg.attack.kind == AttackKind::WeightAttack) {
        cfg.attack.weight_case = 1;
      } else {
        // Other attacks run with regular-sized, honestly declared shards.
        cfg.sizes.attacker_true.reset();
        cfg.sizes.attacker_declared.reset();
      }
      configs.push_back(std::move(cfg));
    }
  }
  cmp.runs.resize(configs.size());
  detail::parallel_for(configs.size(), workers,
                       [&](std::size_t i) { cmp.runs[i] = run_guarded(configs[i]); });

  const std::size_t per = cmp.attacks.size();
  for (std::size_t a = 0; a < cmp.aggregators.size(); ++a) {
    const double reference = cmp.runs[a * per].final_accuracy;
    std::vector<double> row;
    for (std::size_t k = 0; k < per; ++k) row.push_back(reference - cmp.runs[a * per + k].final_accuracy);
    cmp.degradation.push_back(std::move(row));
  }
  return cmp;
}

}  // namespace bzsim
