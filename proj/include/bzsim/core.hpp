#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bzsim {

/// Raised whenever a non-finite value would cross a module boundary.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat parameter vector. Entries are always finite; every mutating entry
/// point re-checks this.
class UpdateVector {
 public:
  UpdateVector() = default;
  explicit UpdateVector(std::vector<double> values);
  UpdateVector(std::initializer_list<double> values);

  static UpdateVector zeros(std::size_t dim);

  std::size_t dim() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& raw() const { return values_; }

  double norm() const;
  double squared_norm() const;

  bool operator==(const UpdateVector&) const = default;

 private:
  std::vector<double> values_;
};

/// What the server receives. Deliberately has no true size or attacker flag.
struct SubmittedUpdate {
  int client_id = 0;
  UpdateVector update;
  std::int64_t declared_size = 1;
};

/// Harness-side report: the submitted triple plus the ground-truth shard size.
struct ClientReport {
  int client_id = 0;
  UpdateVector update;
  std::int64_t declared_size = 1;
  std::int64_t true_size = 1;

  SubmittedUpdate submitted() const { return {client_id, update, declared_size}; }
};

/// Hyperparameters shared by all aggregation rules. Negative integer
/// fields mean "not set" and are resolved by the engine from K and f.
struct AggregatorConfig {
  int f = 0;
  int m = 1;
  int beta = 0;
  int k_near = 1;
  double gamma = 0.1;
  double rho = 5e-4;
  double epsilon = 1e-6;
  int weiszfeld_iters = 3;
  int zeno_keep = 1;
};

/// Deterministic random stream keyed by (master_seed, stream_id). The
/// generator is mt19937_64 and the variate transforms are implemented
/// here so sequences do not depend on the standard library vendor.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double gamma(double shape);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_int(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Builds a stream id from a purpose tag and up to two indices.
std::uint64_t stream_key(std::uint64_t tag, std::uint64_t a = 0, std::uint64_t b = 0);

void require_finite(std::span<const double> values, const std::string& where);

UpdateVector vector_add(const UpdateVector& a, const UpdateVector& b);
UpdateVector vector_sub(const UpdateVector& a, const UpdateVector& b);
UpdateVector vector_scale(const UpdateVector& a, double factor);
double dot(const UpdateVector& a, const UpdateVector& b);
double squared_distance(const UpdateVector& a, const UpdateVector& b);
double distance(const UpdateVector& a, const UpdateVector& b);
/// Cosine similarity; zero when either vector has zero norm.
double cosine(const UpdateVector& a, const UpdateVector& b);

/// Throws std::invalid_argument when there are no positive weights.
UpdateVector weighted_mean(std::span<const UpdateVector> updates, std::span<const double> weights);
UpdateVector weighted_mean(std::span<const ClientReport> reports, std::span<const double> weights);

using DistanceMatrix = std::vector<std::vector<double>>;

DistanceMatrix pairwise_sq_distances(std::span<const UpdateVector> updates);
DistanceMatrix pairwise_sq_distances(std::span<const ClientReport> reports);

void require_uniform_dimension(std::span<const UpdateVector> updates);

}  // namespace bzsim
