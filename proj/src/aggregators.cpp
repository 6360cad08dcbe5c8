#include "bzsim/aggregators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace bzsim {

OpCounts& OpCounts::operator+=(const OpCounts& other) {
  distance_evals += other.distance_evals;
  coordinate_sorts += other.coordinate_sorts;
  sort_comparisons += other.sort_comparisons;
  loss_evals += other.loss_evals;
  return *this;
}

namespace {

// Reports reordered by ascending client id. Every rule works on this order,
// which makes results independent of the order reports arrived in.
struct Canonical {
  std::vector<int> ids;
  std::vector<UpdateVector> updates;
  std::vector<double> declared;
  std::vector<std::size_t> source;  // position in the caller's list

  std::size_t size() const { return ids.size(); }
};

Canonical canonicalize(std::span<const SubmittedUpdate> reports) {
  if (reports.empty()) throw AggregationError("no reports to aggregate");
  std::vector<std::size_t> order(reports.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::sort(order, {}, [&](std::size_t i) { return reports[i].client_id; });

  Canonical c;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& r = reports[order[k]];
    if (k > 0 && r.client_id == c.ids.back()) {
      throw std::invalid_argument("duplicate client id " + std::to_string(r.client_id));
    }
    if (r.declared_size < 1) throw std::invalid_argument("declared size must be >= 1");
    c.ids.push_back(r.client_id);
    c.updates.push_back(r.update);
    c.declared.push_back(static_cast<double>(r.declared_size));
    c.source.push_back(order[k]);
  }
  require_uniform_dimension(c.updates);
  return c;
}

AggregationResult finish(const Canonical& c, UpdateVector aggregate, std::vector<double> weights,
                         OpCounts counts) {
  require_finite(aggregate.values(), "aggregate");
  AggregationResult out;
  out.aggregate = std::move(aggregate);
  out.op_counts = counts;
  for (std::size_t k = 0; k < c.size(); ++k) {
    out.weights.push_back({c.ids[k], weights[k]});
    if (weights[k] > 0.0) out.accepted_ids.push_back(c.ids[k]);
  }
  if (out.accepted_ids.empty()) throw AggregationError("empty acceptance set");
  return out;
}

// Declared-size weighted mean over the selected canonical positions.
AggregationResult mean_of_selected(const Canonical& c, const std::vector<bool>& selected,
                                   OpCounts counts) {
  std::vector<double> weights(c.size(), 0.0);
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (selected[k]) weights[k] = c.declared[k];
  }
  UpdateVector agg;
  try {
    agg = weighted_mean(c.updates, weights);
  } catch (const std::invalid_argument& e) {
    throw AggregationError(e.what());
  }
  return finish(c, std::move(agg), std::move(weights), counts);
}

// Sorts `idx` by (value, position) and counts comparisons.
void sort_coordinate(std::vector<std::size_t>& idx, const std::vector<double>& column,
                     OpCounts& counts) {
  std::int64_t comparisons = 0;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    ++comparisons;
    if (column[a] != column[b]) return column[a] < column[b];
    return a < b;
  });
  counts.coordinate_sorts += 1;
  counts.sort_comparisons += comparisons;
}

std::vector<double> column_of(const Canonical& c, std::size_t coord,
                              const std::vector<std::size_t>& members) {
  std::vector<double> column(c.size(), 0.0);
  for (std::size_t k : members) column[k] = c.updates[k][coord];
  return column;
}

double median_of_sorted(const std::vector<std::size_t>& sorted, const std::vector<double>& column) {
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return column[sorted[n / 2]];
  return 0.5 * (column[sorted[n / 2 - 1]] + column[sorted[n / 2]]);
}

// Per coordinate: average the `keep` member values closest to the member
// median. Distance ties go to the smaller value, then to the lower id.
// `usage[k]` accumulates how many coordinates used member k.
UpdateVector mean_around_median_impl(const Canonical& c, const std::vector<std::size_t>& members,
                                     std::size_t keep, OpCounts& counts,
                                     std::vector<double>& usage) {
  const std::size_t d = c.updates.front().dim();
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto column = column_of(c, j, members);
    std::vector<std::size_t> sorted(members);
    sort_coordinate(sorted, column, counts);
    const double med = median_of_sorted(sorted, column);

    // Stable partial order by distance; `sorted` is already ascending by
    // (value, id), so stability resolves ties as required.
    std::vector<std::size_t> nearest(sorted);
    std::stable_sort(nearest.begin(), nearest.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(column[a] - med) < std::abs(column[b] - med);
    });
    nearest.resize(keep);
    std::ranges::sort(nearest, [&](std::size_t a, std::size_t b) {
      if (column[a] != column[b]) return column[a] < column[b];
      return a < b;
    });
    double acc = 0.0;
    for (std::size_t k : nearest) {
      acc += column[k];
      usage[k] += 1.0;
    }
    out[j] = acc / static_cast<double>(keep);
  }
  return UpdateVector(std::move(out));
}

std::vector<std::size_t> all_positions(const Canonical& c) {
  std::vector<std::size_t> v(c.size());
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::vector<double> usage_to_weights(std::vector<double> usage, std::size_t d) {
  for (double& u : usage) u /= static_cast<double>(d);
  return usage;
}

// Lowest score wins; equal scores go to the lower position (= lower id).
std::size_t argmin_score(const std::vector<double>& scores, const std::vector<std::size_t>& among) {
  std::size_t best = among.front();
  for (std::size_t k : among) {
    if (scores[k] < scores[best] || (scores[k] == scores[best] && k < best)) best = k;
  }
  return best;
}

std::size_t krum_neighbors(std::size_t count, int f) {
  if (count <= 1) return 0;
  const long n = static_cast<long>(count) - f - 2;
  return static_cast<std::size_t>(std::clamp<long>(n, 1, static_cast<long>(count) - 1));
}

// Krum scores restricted to `members` (positions into sq_dist).
std::vector<double> krum_scores_among(const DistanceMatrix& sq_dist,
                                      const std::vector<std::size_t>& members, int f) {
  std::vector<double> scores(sq_dist.size(), 0.0);
  const std::size_t neighbors = krum_neighbors(members.size(), f);
  std::vector<double> row;
  for (std::size_t i : members) {
    row.clear();
    for (std::size_t j : members) {
      if (j != i) row.push_back(sq_dist[i][j]);
    }
    std::ranges::sort(row);
    scores[i] = std::accumulate(row.begin(), row.begin() + static_cast<long>(neighbors), 0.0);
  }
  return scores;
}

std::int64_t pair_count(std::size_t k) {
  return static_cast<std::int64_t>(k * (k - 1) / 2);
}

}  // namespace

AggregationResult fedavg(std::span<const SubmittedUpdate> reports) {
  const auto c = canonicalize(reports);
  return mean_of_selected(c, std::vector<bool>(c.size(), true), {});
}

std::vector<double> krum_scores(const DistanceMatrix& sq_dist, int f) {
  std::vector<std::size_t> members(sq_dist.size());
  std::iota(members.begin(), members.end(), std::size_t{0});
  return krum_scores_among(sq_dist, members, f);
}

AggregationResult krum(std::span<const SubmittedUpdate> reports, int f) {
  const auto c = canonicalize(reports);
  const auto dist = pairwise_sq_distances(c.updates);
  const auto scores = krum_scores(dist, f);
  const std::size_t best = argmin_score(scores, all_positions(c));
  std::vector<double> weights(c.size(), 0.0);
  weights[best] = 1.0;
  return finish(c, c.updates[best], std::move(weights), {.distance_evals = pair_count(c.size())});
}

AggregationResult multi_krum(std::span<const SubmittedUpdate> reports, int f, int m) {
  const auto c = canonicalize(reports);
  if (m < 1 || static_cast<std::size_t>(m) > c.size()) {
    throw AggregationError("multi_krum: m must lie in [1, K]");
  }
  const auto dist = pairwise_sq_distances(c.updates);
  const auto scores = krum_scores(dist, f);
  auto order = all_positions(c);
  std::ranges::stable_sort(order, {}, [&](std::size_t k) { return scores[k]; });
  std::vector<bool> selected(c.size(), false);
  for (int i = 0; i < m; ++i) selected[order[static_cast<std::size_t>(i)]] = true;
  return mean_of_selected(c, selected, {.distance_evals = pair_count(c.size())});
}

AggregationResult faba(std::span<const SubmittedUpdate> reports, int f) {
  const auto c = canonicalize(reports);
  if (f < 0 || static_cast<std::size_t>(f) >= c.size()) {
    throw AggregationError("faba: f must leave at least one survivor");
  }
  OpCounts counts;
  std::vector<bool> alive(c.size(), true);
  const std::vector<double> unit(c.size(), 1.0);
  for (int round = 0; round < f; ++round) {
    std::vector<double> w(c.size(), 0.0);
    for (std::size_t k = 0; k < c.size(); ++k) w[k] = alive[k] ? unit[k] : 0.0;
    const auto center = weighted_mean(c.updates, w);
    std::size_t worst = c.size();
    double worst_dist = -1.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (!alive[k]) continue;
      const double dk = distance(c.updates[k], center);
      ++counts.distance_evals;
      if (dk > worst_dist) {  // strict: equal distances keep the lower id
        worst_dist = dk;
        worst = k;
      }
    }
    alive[worst] = false;
  }
  return mean_of_selected(c, alive, counts);
}

AggregationResult coordinate_median(std::span<const SubmittedUpdate> reports) {
  const auto c = canonicalize(reports);
  const std::size_t d = c.updates.front().dim();
  const auto members = all_positions(c);
  const std::size_t n = c.size();
  OpCounts counts;
  std::vector<double> usage(n, 0.0);
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto column = column_of(c, j, members);
    auto sorted = members;
    sort_coordinate(sorted, column, counts);
    out[j] = median_of_sorted(sorted, column);
    if (n % 2 == 1) {
      usage[sorted[n / 2]] += 1.0;
    } else {
      usage[sorted[n / 2 - 1]] += 1.0;
      usage[sorted[n / 2]] += 1.0;
    }
  }
  return finish(c, UpdateVector(std::move(out)), usage_to_weights(std::move(usage), d), counts);
}

AggregationResult trimmed_mean(std::span<const SubmittedUpdate> reports, int beta) {
  const auto c = canonicalize(reports);
  if (beta < 0 || 2 * static_cast<std::size_t>(beta) >= c.size()) {
    throw AggregationError("trimmed_mean: 2*beta must be smaller than K");
  }
  const std::size_t d = c.updates.front().dim();
  const auto members = all_positions(c);
  const auto b = static_cast<std::size_t>(beta);
  const std::size_t kept = c.size() - 2 * b;
  OpCounts counts;
  std::vector<double> usage(c.size(), 0.0);
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto column = column_of(c, j, members);
    auto sorted = members;
    sort_coordinate(sorted, column, counts);
    double acc = 0.0;
    for (std::size_t r = b; r < b + kept; ++r) {
      acc += column[sorted[r]];
      usage[sorted[r]] += 1.0;
    }
    out[j] = acc / static_cast<double>(kept);
  }
  return finish(c, UpdateVector(std::move(out)), usage_to_weights(std::move(usage), d), counts);
}

AggregationResult mean_around_median(std::span<const SubmittedUpdate> reports, int k_near) {
  const auto c = canonicalize(reports);
  if (k_near < 1 || static_cast<std::size_t>(k_near) > c.size()) {
    throw AggregationError("mean_around_median: k_near must lie in [1, K]");
  }
  OpCounts counts;
  std::vector<double> usage(c.size(), 0.0);
  auto agg = mean_around_median_impl(c, all_positions(c), static_cast<std::size_t>(k_near),
                                     counts, usage);
  const std::size_t d = agg.dim();
  return finish(c, std::move(agg), usage_to_weights(std::move(usage), d), counts);
}

namespace {

struct WeiszfeldRun {
  std::vector<UpdateVector> iterates;
  std::vector<double> final_weights;
  std::int64_t distance_evals = 0;
};

WeiszfeldRun run_weiszfeld(const Canonical& c, double epsilon, int max_iters) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("geometric_median: epsilon must be positive");
  if (max_iters < 0) throw std::invalid_argument("geometric_median: negative iteration budget");
  WeiszfeldRun run;
  run.iterates.push_back(weighted_mean(c.updates, c.declared));
  run.final_weights = c.declared;
  const std::size_t d = c.updates.front().dim();
  for (int it = 0; it < max_iters; ++it) {
    const auto& current = run.iterates.back();
    std::vector<double> beta(c.size());
    for (std::size_t k = 0; k < c.size(); ++k) {
      beta[k] = c.declared[k] / std::max(epsilon, distance(c.updates[k], current));
      ++run.distance_evals;
    }
    run.final_weights = beta;
    const double total = std::accumulate(beta.begin(), beta.end(), 0.0);
    std::vector<double> next(d, 0.0);
    for (std::size_t k = 0; k < c.size(); ++k) {
      const auto v = c.updates[k].values();
      for (std::size_t i = 0; i < d; ++i) next[i] += beta[k] * v[i];
    }
    for (double& x : next) x /= total;
    UpdateVector step_to(std::move(next));
    const double step = distance(step_to, current);
    run.iterates.push_back(std::move(step_to));
    if (step < 1e-9) break;
  }
  return run;
}

}  // namespace

AggregationResult geometric_median(std::span<const SubmittedUpdate> reports, double epsilon,
                                   int weiszfeld_iters) {
  const auto c = canonicalize(reports);
  auto run = run_weiszfeld(c, epsilon, weiszfeld_iters);
  return finish(c, std::move(run.iterates.back()), std::move(run.final_weights),
                {.distance_evals = run.distance_evals});
}

std::vector<UpdateVector> weiszfeld_trace(std::span<const SubmittedUpdate> reports, double epsilon,
                                          int max_iters) {
  return run_weiszfeld(canonicalize(reports), epsilon, max_iters).iterates;
}

double weighted_distance_sum(std::span<const SubmittedUpdate> reports, const UpdateVector& point) {
  double acc = 0.0;
  for (const auto& r : reports) acc += static_cast<double>(r.declared_size) * distance(r.update, point);
  return acc;
}

AggregationResult bulyan(std::span<const SubmittedUpdate> reports, int f) {
  const auto c = canonicalize(reports);
  const long k = static_cast<long>(c.size());
  const long theta = k - 2L * f;
  const long beta = theta - 2L * f;
  if (f < 0 || beta < 1) throw AggregationError("bulyan: requires K > 4f");

  const auto dist = pairwise_sq_distances(c.updates);
  OpCounts counts{.distance_evals = pair_count(c.size())};

  std::vector<std::size_t> remaining = all_positions(c);
  std::vector<std::size_t> selected;
  while (static_cast<long>(selected.size()) < theta) {
    const auto scores = krum_scores_among(dist, remaining, f);
    const std::size_t best = argmin_score(scores, remaining);
    selected.push_back(best);
    std::erase(remaining, best);
  }
  std::ranges::sort(selected);

  std::vector<double> usage(c.size(), 0.0);
  auto agg = mean_around_median_impl(c, selected, static_cast<std::size_t>(beta), counts, usage);
  const std::size_t d = agg.dim();
  return finish(c, std::move(agg), usage_to_weights(std::move(usage), d), counts);
}

AggregationResult foolsgold(std::span<const SubmittedUpdate> reports,
                            std::span<const UpdateVector> history) {
  if (history.size() != reports.size()) {
    throw std::invalid_argument("foolsgold: one history vector per report required");
  }
  const auto c = canonicalize(reports);
  std::vector<UpdateVector> hist;
  for (std::size_t src : c.source) hist.push_back(history[src]);
  require_uniform_dimension(hist);

  const std::size_t n = c.size();
  std::vector<double> max_sim(n, -1.0);
  OpCounts counts;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = cosine(hist[i], hist[j]);
      ++counts.distance_evals;
      max_sim[i] = std::max(max_sim[i], s);
      max_sim[j] = std::max(max_sim[j], s);
    }
  }
  std::vector<double> trust(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double cs = n == 1 ? 0.0 : max_sim[i];
    trust[i] = std::clamp(1.0 - cs, 0.0, 1.0);
  }
  const double top = *std::ranges::max_element(trust);
  if (!(top > 0.0)) throw AggregationError("foolsgold: every client looks like a sybil");
  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) weights[i] = (trust[i] / top) * c.declared[i];
  auto agg = weighted_mean(c.updates, weights);
  return finish(c, std::move(agg), std::move(weights), counts);
}

namespace {

std::vector<double> zeno_scores_impl(const Canonical& c, const UpdateVector& previous_global,
                                     const LossFn& validation_loss, double gamma, double rho,
                                     OpCounts& counts) {
  if (previous_global.dim() != c.updates.front().dim()) {
    throw DimensionError("zeno: previous global model has the wrong dimension");
  }
  const double base = validation_loss(previous_global);
  ++counts.loss_evals;
  std::vector<double> scores(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) {
    const auto g = vector_sub(previous_global, c.updates[k]);
    const auto probe = vector_sub(previous_global, vector_scale(g, gamma));
    const double probed = validation_loss(probe);
    ++counts.loss_evals;
    scores[k] = base - probed - rho * g.squared_norm();
    if (std::isnan(scores[k])) scores[k] = -std::numeric_limits<double>::infinity();
  }
  return scores;
}

}  // namespace

std::vector<double> zeno_scores(std::span<const SubmittedUpdate> reports,
                                const UpdateVector& previous_global, const LossFn& validation_loss,
                                double gamma, double rho) {
  OpCounts counts;
  return zeno_scores_impl(canonicalize(reports), previous_global, validation_loss, gamma, rho,
                          counts);
}

AggregationResult zeno(std::span<const SubmittedUpdate> reports,
                       const UpdateVector& previous_global, const LossFn& validation_loss,
                       double gamma, double rho, int zeno_keep) {
  const auto c = canonicalize(reports);
  if (zeno_keep < 1 || static_cast<std::size_t>(zeno_keep) > c.size()) {
    throw AggregationError("zeno: zeno_keep must lie in [1, K]");
  }
  OpCounts counts;
  const auto scores = zeno_scores_impl(c, previous_global, validation_loss, gamma, rho, counts);
  auto order = all_positions(c);
  // Highest score first; stable sort keeps lower ids ahead on ties.
  std::ranges::stable_sort(order, std::greater<>{}, [&](std::size_t k) { return scores[k]; });
  std::vector<double> weights(c.size(), 0.0);
  for (int i = 0; i < zeno_keep; ++i) weights[order[static_cast<std::size_t>(i)]] = 1.0;
  auto agg = weighted_mean(c.updates, weights);
  return finish(c, std::move(agg), std::move(weights), counts);
}

AggregationResult zeno(std::span<const SubmittedUpdate> reports, const ServerSideAssets& assets,
                       double gamma, double rho, int zeno_keep) {
  if (assets.validation_set == nullptr) throw std::invalid_argument("zeno needs a validation set");
  const auto& arch = assets.train.architecture;
  const Dataset& val = *assets.validation_set;
  return zeno(
      reports, assets.previous_global,
      [&](const UpdateVector& params) { return mean_loss(arch, params, val); }, gamma, rho,
      zeno_keep);
}

AggregationResult fltrust(std::span<const SubmittedUpdate> reports,
                          const UpdateVector& previous_global,
                          const UpdateVector& server_update) {
  const auto c = canonicalize(reports);
  if (previous_global.dim() != c.updates.front().dim() ||
      server_update.dim() != previous_global.dim()) {
    throw DimensionError("fltrust: dimension mismatch against the server model");
  }
  const double server_norm = server_update.norm();
  const std::size_t d = previous_global.dim();
  OpCounts counts;
  std::vector<double> trust(c.size(), 0.0);
  std::vector<double> acc(d, 0.0);
  for (std::size_t k = 0; k < c.size(); ++k) {
    const auto delta = vector_sub(c.updates[k], previous_global);
    trust[k] = std::max(0.0, cosine(delta, server_update));
    ++counts.distance_evals;
    if (trust[k] == 0.0) continue;
    const double rescale = trust[k] * server_norm / delta.norm();
    const auto v = delta.values();
    for (std::size_t i = 0; i < d; ++i) acc[i] += rescale * v[i];
  }
  const double total = std::accumulate(trust.begin(), trust.end(), 0.0);
  if (!(total > 0.0)) throw AggregationError("fltrust: every trust score is zero");
  for (std::size_t i = 0; i < d; ++i) acc[i] = previous_global[i] + acc[i] / total;
  return finish(c, UpdateVector(std::move(acc)), std::move(trust), counts);
}

AggregationResult fltrust(std::span<const SubmittedUpdate> reports,
                          const ServerSideAssets& assets) {
  if (assets.server_shard == nullptr) throw std::invalid_argument("fltrust needs a server shard");
  RngStream rng(assets.server_seed, stream_key(0x5e77e7));
  const auto trained = train_local(assets.previous_global, *assets.server_shard, assets.train, rng);
  return fltrust(reports, assets.previous_global, vector_sub(trained, assets.previous_global));
}

const std::vector<std::string>& aggregator_names() {
  static const std::vector<std::string> names{
      "fedavg", "krum",   "multikrum", "faba",      "median", "trimmed_mean",
      "mean_around_median", "geomed", "bulyan", "foolsgold", "zeno",   "fltrust"};
  return names;
}

bool is_known_aggregator(std::string_view name) {
  return std::ranges::find(aggregator_names(), name) != aggregator_names().end();
}

AggregationResult aggregate(std::string_view name, std::span<const SubmittedUpdate> reports,
                            const AggregatorConfig& cfg, const AggregatorContext& context) {
  if (name == "fedavg") return fedavg(reports);
  if (name == "krum") return krum(reports, cfg.f);
  if (name == "multikrum") return multi_krum(reports, cfg.f, cfg.m);
  if (name == "faba") return faba(reports, cfg.f);
  if (name == "median") return coordinate_median(reports);
  if (name == "trimmed_mean") return trimmed_mean(reports, cfg.beta);
  if (name == "mean_around_median") return mean_around_median(reports, cfg.k_near);
  if (name == "geomed") return geometric_median(reports, cfg.epsilon, cfg.weiszfeld_iters);
  if (name == "bulyan") return bulyan(reports, cfg.f);
  if (name == "foolsgold") return foolsgold(reports, context.history);
  if (name == "zeno" || name == "fltrust") {
    if (context.assets == nullptr) {
      throw std::invalid_argument(std::string(name) + " needs server-side assets");
    }
    if (name == "zeno") return zeno(reports, *context.assets, cfg.gamma, cfg.rho, cfg.zeno_keep);
    return fltrust(reports, *context.assets);
  }
  throw std::invalid_argument("unknown aggregator '" + std::string(name) + "'");
}

}  // namespace bzsim
