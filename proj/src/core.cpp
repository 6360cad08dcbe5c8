#include "bzsim/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace bzsim {

UpdateVector::UpdateVector(std::vector<double> values) : values_(std::move(values)) {
  require_finite(values_, "UpdateVector");
}

UpdateVector::UpdateVector(std::initializer_list<double> values)
    : UpdateVector(std::vector<double>(values)) {}

UpdateVector UpdateVector::zeros(std::size_t dim) {
  return UpdateVector(std::vector<double>(dim, 0.0));
}

double UpdateVector::squared_norm() const {
  double acc = 0.0;
  for (double v : values_) acc += v * v;
  return acc;
}

double UpdateVector::norm() const { return std::sqrt(squared_norm()); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_key(std::uint64_t tag, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(tag) ^ a) ^ b);
}

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
    : engine_(splitmix64(master_seed ^ splitmix64(stream_id))) {}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: empty range");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 is kept away from zero.
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost to shape+1 and rescale (Marsaglia & Tsang).
    double u = 0.0;
    do {
      u = uniform();
    } while (u <= 0.0);
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

void require_finite(std::span<const double> values, const std::string& where) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream msg;
      msg << where << ": non-finite value at index " << i;
      throw NonFiniteError(msg.str());
    }
  }
}

namespace {

void check_same_dim(const UpdateVector& a, const UpdateVector& b, const char* op) {
  if (a.dim() != b.dim()) {
    std::ostringstream msg;
    msg << op << ": dimension mismatch (" << a.dim() << " vs " << b.dim() << ")";
    throw DimensionError(msg.str());
  }
}

}  // namespace

UpdateVector vector_add(const UpdateVector& a, const UpdateVector& b) {
  check_same_dim(a, b, "vector_add");
  std::vector<double> out(a.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return UpdateVector(std::move(out));
}

UpdateVector vector_sub(const UpdateVector& a, const UpdateVector& b) {
  check_same_dim(a, b, "vector_sub");
  std::vector<double> out(a.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return UpdateVector(std::move(out));
}

UpdateVector vector_scale(const UpdateVector& a, double factor) {
  std::vector<double> out(a.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return UpdateVector(std::move(out));
}

double dot(const UpdateVector& a, const UpdateVector& b) {
  check_same_dim(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance(const UpdateVector& a, const UpdateVector& b) {
  check_same_dim(a, b, "squared_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

double distance(const UpdateVector& a, const UpdateVector& b) {
  return std::sqrt(squared_distance(a, b));
}

double cosine(const UpdateVector& a, const UpdateVector& b) {
  const double sa = a.squared_norm();
  const double sb = b.squared_norm();
  if (sa == 0.0 || sb == 0.0) return 0.0;
  // sqrt(sa * sb) is exact when a == b, so identical vectors score exactly 1.
  double denom = std::sqrt(sa * sb);
  if (!std::isfinite(denom) || denom == 0.0) denom = std::sqrt(sa) * std::sqrt(sb);
  return std::clamp(dot(a, b) / denom, -1.0, 1.0);
}

void require_uniform_dimension(std::span<const UpdateVector> updates) {
  if (updates.empty()) return;
  const std::size_t d = updates.front().dim();
  if (d == 0) throw DimensionError("update vectors must have positive dimension");
  for (const auto& u : updates) {
    if (u.dim() != d) {
      std::ostringstream msg;
      msg << "dimension mismatch across updates (" << d << " vs " << u.dim() << ")";
      throw DimensionError(msg.str());
    }
  }
}

UpdateVector weighted_mean(std::span<const UpdateVector> updates,
                           std::span<const double> weights) {
  if (updates.size() != weights.size()) {
    throw std::invalid_argument("weighted_mean: one weight per update required");
  }
  require_uniform_dimension(updates);
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("weighted_mean: weights must be finite and nonnegative");
    }
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("weighted_mean: empty acceptance set");

  std::vector<double> out(updates.front().dim(), 0.0);
  for (std::size_t k = 0; k < updates.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const double share = weights[k] / total;
    const auto v = updates[k].values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += share * v[i];
  }
  return UpdateVector(std::move(out));
}

UpdateVector weighted_mean(std::span<const ClientReport> reports,
                           std::span<const double> weights) {
  std::vector<UpdateVector> updates;
  updates.reserve(reports.size());
  for (const auto& r : reports) updates.push_back(r.update);
  return weighted_mean(updates, weights);
}

DistanceMatrix pairwise_sq_distances(std::span<const UpdateVector> updates) {
  require_uniform_dimension(updates);
  const std::size_t k = updates.size();
  DistanceMatrix m(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      m[i][j] = m[j][i] = squared_distance(updates[i], updates[j]);
    }
  }
  return m;
}

DistanceMatrix pairwise_sq_distances(std::span<const ClientReport> reports) {
  std::vector<UpdateVector> updates;
  updates.reserve(reports.size());
  for (const auto& r : reports) updates.push_back(r.update);
  return pairwise_sq_distances(updates);
}

}  // namespace bzsim
