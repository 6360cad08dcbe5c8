#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"

#include "bzsim/engine.hpp"

using namespace bzsim;

// The server-facing type carries no ground truth.
template <typename T>
concept CarriesTrueSize = requires(T t) { t.true_size; };
static_assert(!CarriesTrueSize<SubmittedUpdate>);
static_assert(CarriesTrueSize<ClientReport>);

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.clients = 10;
  cfg.rounds = 6;
  cfg.data.train_per_class = 100;
  cfg.data.test_per_class = 30;
  cfg.sizes.regular_true = 80;
  cfg.seed = 17;
  return cfg;
}

void check_same_records(const ExperimentResult& a, const ExperimentResult& b) {
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i].same_outcome(b.records[i]));
  CHECK(a.final_accuracy == b.final_accuracy);
}

}  // namespace

TEST_CASE("resolve fills defaults from K and the attacker count") {
  ExperimentConfig cfg;
  cfg.attacker_fraction = 0.4;
  cfg.attack.kind = AttackKind::WeightAttack;
  const auto r = resolve(cfg);
  CHECK(*r.aggregator.f == 8);
  CHECK(*r.aggregator.m == 12);
  CHECK(*r.aggregator.beta == 8);
  CHECK(*r.aggregator.k_near == 4);
  CHECK(*r.aggregator.zeno_keep == 12);
  CHECK(*r.aggregator.gamma == cfg.train.learning_rate);
  CHECK(*r.sizes.attacker_true == 20);
  CHECK(*r.sizes.attacker_declared == 500);

  cfg.attack.weight_case = 2;
  const auto r2 = resolve(cfg);
  CHECK(*r2.sizes.attacker_true == 500);
  CHECK(*r2.sizes.attacker_declared == 5000);

  cfg.attack.kind = AttackKind::SignFlip;
  CHECK(*resolve(cfg).sizes.attacker_declared == 500);

  cfg.aggregator.f = 3;
  CHECK(*resolve(cfg).aggregator.m == 17);
  CHECK(resolve(resolve(cfg)) == resolve(cfg));
}

TEST_CASE("validate rejects bad configs") {
  auto bad = [](auto mutate) {
    ExperimentConfig cfg;
    mutate(cfg);
    return cfg;
  };
  CHECK_THROWS_AS(resolve(bad([](auto& c) { c.attacker_fraction = 1.0; })), ConfigError);
  CHECK_THROWS_AS(resolve(bad([](auto& c) { c.clients = 0; })), ConfigError);
  CHECK_THROWS_AS(resolve(bad([](auto& c) { c.aggregator.name = "rsa"; })), ConfigError);
  CHECK_THROWS_AS(resolve(bad([](auto& c) { c.sizes.regular_true = 600; })), ConfigError);
  CHECK_THROWS_AS(resolve(bad([](auto& c) { c.train.architecture = "cnn"; })), ConfigError);
  CHECK_THROWS_AS(resolve(bad([](auto& c) {
                    c.aggregator.name = "bulyan";
                    c.attacker_fraction = 0.3;
                  })),
                  ConfigError);
  CHECK_THROWS_AS(resolve(bad([](auto& c) { c.aggregator.beta = 10; })), ConfigError);
}

TEST_CASE("single client fedavg adopts the local model") {
  auto cfg = small_config();
  cfg.clients = 1;
  Simulation sim(resolve(cfg));
  const auto reports = sim.client_reports(sim.initial_model(), 0);
  REQUIRE(reports.size() == 1);
  const auto [next, record] = sim.run_round(sim.initial_model(), 0);
  CHECK(next == reports[0].update);
  CHECK(record.accepted_ids == std::vector<int>{0});
}

TEST_CASE("zero learning rate is a fixed point for every rule") {
  for (const auto& name : aggregator_names()) {
    CAPTURE(name);
    auto cfg = small_config();
    cfg.rounds = 3;
    cfg.train.learning_rate = 0.0;
    cfg.aggregator.name = name;
    Simulation sim(resolve(cfg));
    UpdateVector global = sim.initial_model();
    for (int r = 0; r < 3; ++r) {
      auto [next, record] = sim.run_round(global, r);
      CHECK(next == sim.initial_model());
      global = next;
    }
  }
}

TEST_CASE("weight attack hands attackers 40% of the weight") {
  ExperimentConfig cfg;
  cfg.attacker_fraction = 0.4;
  cfg.attack.kind = AttackKind::WeightAttack;
  cfg.rounds = 1;
  Simulation sim(resolve(cfg));
  const auto reports = sim.client_reports(sim.initial_model(), 0);
  double declared_total = 0, attacker_declared = 0, true_total = 0, attacker_true = 0;
  for (const auto& r : reports) {
    declared_total += static_cast<double>(r.declared_size);
    true_total += static_cast<double>(r.true_size);
    if (r.client_id >= 12) {
      attacker_declared += static_cast<double>(r.declared_size);
      attacker_true += static_cast<double>(r.true_size);
    }
  }
  CHECK(attacker_declared / declared_total == doctest::Approx(0.4));
  CHECK(attacker_true / true_total == doctest::Approx(160.0 / 6160.0));
  for (int i = 0; i < 20; ++i) {
    CHECK(sim.shards()[i].size() == (i >= 12 ? 20u : 500u));
    CHECK(sim.true_sizes()[i] == (i >= 12 ? 20 : 500));
  }

  std::vector<SubmittedUpdate> submitted;
  for (const auto& r : reports) submitted.push_back(r.submitted());
  const auto result = fedavg(submitted);
  double share = 0.0;
  for (const auto& w : result.weights) {
    if (w.client_id >= 12) share += w.weight;
  }
  double total = 0.0;
  for (const auto& w : result.weights) total += w.weight;
  CHECK(share / total == doctest::Approx(0.4));
}

TEST_CASE("parameter attacks act on the trained model") {
  auto cfg = small_config();
  cfg.attacker_fraction = 0.3;
  cfg.attack.kind = AttackKind::SignFlip;
  Simulation attacked(resolve(cfg));
  cfg.attack.kind = AttackKind::None;
  Simulation clean(resolve(cfg));
  const auto a = attacked.client_reports(attacked.initial_model(), 2);
  const auto c = clean.client_reports(clean.initial_model(), 2);
  for (int i = 0; i < 10; ++i) {
    if (i < 7) {
      CHECK(a[i].update == c[i].update);
    } else {
      CHECK(a[i].update == vector_scale(c[i].update, -4.0));
    }
  }
}

TEST_CASE("run_experiment") {
  SUBCASE("worker count does not change anything") {
    auto cfg = small_config();
    cfg.attacker_fraction = 0.3;
    cfg.attack.kind = AttackKind::GaussianUpdate;
    cfg.aggregator.name = "median";
    check_same_records(run_experiment(cfg, 1), run_experiment(cfg, 4));
    cfg.data.partition = "dirichlet";
    cfg.attack.kind = AttackKind::NoiseData;
    check_same_records(run_experiment(cfg, 1), run_experiment(cfg, 3));
  }
  SUBCASE("zero rounds") {
    auto cfg = small_config();
    cfg.rounds = 0;
    const auto r = run_experiment(cfg);
    CHECK(r.records.empty());
    CHECK(r.final_accuracy == r.initial_accuracy);
    CHECK(r.ok());
  }
  SUBCASE("records are ordered and consistent") {
    auto cfg = small_config();
    cfg.attacker_fraction = 0.2;
    cfg.attack.kind = AttackKind::LabelFlip;
    cfg.aggregator.name = "multikrum";
    const auto r = run_experiment(cfg);
    REQUIRE(r.records.size() == 6);
    for (std::size_t i = 0; i < r.records.size(); ++i) {
      CHECK(r.records[i].round == static_cast<int>(i));
      CHECK(r.records[i].attacker_accepted_count <= static_cast<int>(r.records[i].accepted_ids.size()));
      CHECK(r.records[i].wall_ms >= 0.0);
    }
    CHECK(r.final_accuracy == r.records.back().test_accuracy);
    CHECK(r.config.aggregator.f.has_value());
  }
  SUBCASE("a diverging run keeps partial records") {
    auto cfg = small_config();
    cfg.train.learning_rate = 1e200;
    cfg.train.epochs = 5;
    const auto r = run_experiment(cfg);
    CHECK(!r.ok());
    CHECK(r.records.size() < 6);
  }
  SUBCASE("fltrust with no usable server signal keeps the old model") {
    auto cfg = small_config();
    cfg.aggregator.name = "fltrust";
    cfg.train.learning_rate = 0.0;
    const auto r = run_experiment(cfg);
    REQUIRE(r.records.size() == 6);
    for (const auto& rec : r.records) CHECK(rec.aggregation_failed);
  }
}

TEST_CASE("converged predicate") {
  std::vector<RoundRecord> flat(15);
  for (auto& r : flat) r.test_accuracy = 0.8;
  CHECK(converged_predicate(flat));
  std::vector<RoundRecord> wobbly(15);
  for (std::size_t i = 0; i < wobbly.size(); ++i) wobbly[i].test_accuracy = i % 2 ? 0.2 : 0.6;
  CHECK(!converged_predicate(wobbly));
  // Only the last ten rounds count.
  wobbly.resize(25);
  for (std::size_t i = 15; i < 25; ++i) wobbly[i].test_accuracy = 0.9 + 0.001 * static_cast<double>(i % 3);
  CHECK(converged_predicate(wobbly));
}

TEST_CASE("sweep") {
  auto cfg = small_config();
  cfg.rounds = 3;
  cfg.attack.kind = AttackKind::WeightAttack;
  cfg.sizes.regular_true = 50;
  const std::vector<double> fractions{0.0, 0.3};
  const std::vector<std::string> aggs{"fedavg", "median"};
  const auto results = sweep(cfg, fractions, aggs, 2);
  REQUIRE(results.size() == 4);
  CHECK(results[0].config.attack.kind == AttackKind::None);
  CHECK(results[1].config.aggregator.name == "median");
  CHECK(results[2].config.attacker_fraction == 0.3);
  CHECK(results[3].config.attack.kind == AttackKind::WeightAttack);
  for (const auto& r : results) CHECK(r.ok());
  CHECK(results[0].config.seed != results[1].config.seed);

  const auto again = sweep(cfg, fractions, aggs, 1);
  for (std::size_t i = 0; i < 4; ++i) check_same_records(results[i], again[i]);

  CHECK(sweep(cfg, fractions, {}, 2).empty());
  CHECK(sweep_seed(1, 0.2, "faba") != sweep_seed(1, 0.3, "faba"));
  CHECK(sweep_seed(1, 0.2, "faba") != sweep_seed(1, 0.2, "zeno"));
  CHECK(sweep_seed(1, 0.2, "faba") == sweep_seed(1, 0.2, "faba"));

  auto broken = cfg;
  broken.train.learning_rate = 1e200;
  broken.train.epochs = 5;
  const auto failed = sweep(broken, {0.0}, {"fedavg"}, 1);
  REQUIRE(failed.size() == 1);
  CHECK(!failed[0].ok());
}

TEST_CASE("compare_attacks layout") {
  auto cfg = small_config();
  cfg.rounds = 2;
  cfg.sizes.regular_true = 50;
  const auto cmp = compare_attacks(cfg, 2);
  CHECK(cmp.aggregators == std::vector<std::string>{"multikrum", "faba"});
  CHECK(cmp.attacks == std::vector<std::string>{"none", "label_flip", "sign_flip", "weight_attack"});
  REQUIRE(cmp.runs.size() == 8);
  for (std::size_t a = 0; a < 2; ++a) {
    CHECK(cmp.degradation[a][0] == 0.0);
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& run = cmp.runs[a * 4 + k];
      CHECK(run.config.aggregator.name == cmp.aggregators[a]);
      CHECK(run.config.attacker_fraction == 0.4);
      CHECK(run.config.seed == cfg.seed);
      CHECK(cmp.degradation[a][k] == cmp.runs[a * 4].final_accuracy - run.final_accuracy);
    }
  }
  CHECK(cmp.runs[2].config.attack.factor == -4.0);
}
