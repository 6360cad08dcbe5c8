#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bzsim/core.hpp"
#include "bzsim/data.hpp"

namespace bzsim {

/// Signals that a rule ended up with nothing to aggregate (all weights or
/// trust scores zero, or a trim/selection count that leaves no survivors).
class AggregationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Work counters used to check the asymptotic cost of each rule.
struct OpCounts {
  std::int64_t distance_evals = 0;    // d-dimensional distance or cosine evaluations
  std::int64_t coordinate_sorts = 0;  // per-coordinate sorts performed
  std::int64_t sort_comparisons = 0;  // comparisons made inside those sorts
  std::int64_t loss_evals = 0;        // validation-loss evaluations

  OpCounts& operator+=(const OpCounts& other);
  bool operator==(const OpCounts&) const = default;
};

struct ClientWeight {
  int client_id = 0;
  double weight = 0.0;
  bool operator==(const ClientWeight&) const = default;
};

struct AggregationResult {
  UpdateVector aggregate;
  std::vector<int> accepted_ids;        // ascending
  std::vector<ClientWeight> weights;    // one per input report, ascending id
  OpCounts op_counts;
};

/// Clean data and state the server holds on its own.
struct ServerSideAssets {
  const Dataset* validation_set = nullptr;
  const Dataset* server_shard = nullptr;
  UpdateVector previous_global;
  TrainConfig train;
  std::uint64_t server_seed = 0;
};

using LossFn = std::function<double(const UpdateVector&)>;

AggregationResult fedavg(std::span<const SubmittedUpdate> reports);

/// Krum score of each report, in input order: sum of the K-f-2 smallest
/// squared distances to the other reports (clamped to [1, K-1]).
std::vector<double> krum_scores(const DistanceMatrix& sq_dist, int f);

AggregationResult krum(std::span<const SubmittedUpdate> reports, int f);
AggregationResult multi_krum(std::span<const SubmittedUpdate> reports, int f, int m);
AggregationResult faba(std::span<const SubmittedUpdate> reports, int f);
AggregationResult coordinate_median(std::span<const SubmittedUpdate> reports);
AggregationResult trimmed_mean(std::span<const SubmittedUpdate> reports, int beta);
AggregationResult mean_around_median(std::span<const SubmittedUpdate> reports, int k_near);
AggregationResult geometric_median(std::span<const SubmittedUpdate> reports, double epsilon,
                                   int weiszfeld_iters);
AggregationResult bulyan(std::span<const SubmittedUpdate> reports, int f);

/// `history` holds one cumulative update per report, in the same order.
AggregationResult foolsgold(std::span<const SubmittedUpdate> reports,
                            std::span<const UpdateVector> history);

/// Zeno suspicion scores, one per report in ascending id order:
/// L(w) - L(w - gamma * g) - rho * ||g||^2 with g = w - update.
std::vector<double> zeno_scores(std::span<const SubmittedUpdate> reports,
                                const UpdateVector& previous_global, const LossFn& validation_loss,
                                double gamma, double rho);

/// Zeno against an arbitrary validation loss. `previous_global` is the
/// broadcast model the reports were trained from.
AggregationResult zeno(std::span<const SubmittedUpdate> reports,
                       const UpdateVector& previous_global, const LossFn& validation_loss,
                       double gamma, double rho, int zeno_keep);
AggregationResult zeno(std::span<const SubmittedUpdate> reports, const ServerSideAssets& assets,
                       double gamma, double rho, int zeno_keep);

/// FLTrust with an already computed server update.
AggregationResult fltrust(std::span<const SubmittedUpdate> reports,
                          const UpdateVector& previous_global, const UpdateVector& server_update);
/// FLTrust that first trains on the server shard to get the server update.
AggregationResult fltrust(std::span<const SubmittedUpdate> reports, const ServerSideAssets& assets);

/// Objective minimized by the geometric median: sum_i w_i * ||u_i - point||.
double weighted_distance_sum(std::span<const SubmittedUpdate> reports, const UpdateVector& point);

/// Weiszfeld iterates starting from the declared-size weighted mean; the
/// first entry is the starting point.
std::vector<UpdateVector> weiszfeld_trace(std::span<const SubmittedUpdate> reports,
                                          double epsilon, int max_iters);

const std::vector<std::string>& aggregator_names();
bool is_known_aggregator(std::string_view name);

struct AggregatorContext {
  const ServerSideAssets* assets = nullptr;
  std::span<const UpdateVector> history;
};

/// Dispatch by configured name.
AggregationResult aggregate(std::string_view name, std::span<const SubmittedUpdate> reports,
                            const AggregatorConfig& cfg, const AggregatorContext& context = {});

}  // namespace bzsim
