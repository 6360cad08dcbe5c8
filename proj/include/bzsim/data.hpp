#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bzsim/core.hpp"

namespace bzsim {

/// Row-major feature matrix plus integer labels in [0, classes).
struct Dataset {
  std::size_t input_dim = 0;
  int classes = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * input_dim, input_dim};
  }
  std::span<double> row(std::size_t i) { return {features.data() + i * input_dim, input_dim}; }

  bool operator==(const Dataset&) const = default;
};

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);
Dataset concatenate(std::span<const Dataset> parts);

/// Gaussian class clusters. The class means are drawn once at construction;
/// draw() can then produce any number of independent sample sets from the
/// same distribution (train/test/validation splits share the means).
class BlobSource {
 public:
  BlobSource(int classes, std::size_t input_dim, double spread, double mean_scale, RngStream& rng);

  Dataset draw(std::size_t per_class, RngStream& rng) const;

  int classes() const { return classes_; }
  std::size_t input_dim() const { return input_dim_; }
  const std::vector<double>& means() const { return means_; }

 private:
  int classes_;
  std::size_t input_dim_;
  double spread_;
  std::vector<double> means_;
};

Dataset generate_blobs(int classes, std::size_t input_dim, std::size_t per_class, double spread,
                       RngStream& rng, double mean_scale = 1.0);

/// Index lists into a global dataset, one per client.
struct Partition {
  std::vector<std::vector<std::size_t>> assignment;

  std::size_t clients() const { return assignment.size(); }
};

class PartitionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Partition partition_iid(const Dataset& ds, std::span<const std::size_t> sizes, RngStream& rng);
Partition partition_dirichlet(const Dataset& ds, int clients, double alpha, RngStream& rng,
                              int max_retries = 100);

struct Architecture {
  enum class Kind { Softmax, Mlp };
  Kind kind = Kind::Softmax;
  std::size_t input_dim = 0;
  int classes = 0;
  std::size_t hidden = 0;

  static Architecture softmax(std::size_t input_dim, int classes) {
    return {Kind::Softmax, input_dim, classes, 0};
  }
  static Architecture mlp(std::size_t input_dim, int classes, std::size_t hidden) {
    return {Kind::Mlp, input_dim, classes, hidden};
  }

  /// Softmax: W[C][d_in], b[C]. MLP: W1[h][d_in], b1[h], W2[C][h], b2[C].
  std::size_t param_count() const;
};

struct TrainConfig {
  int epochs = 1;
  std::size_t batch_size = 32;
  double learning_rate = 0.1;
  Architecture architecture;
};

/// Raised when local training produces a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Softmax starts at zero; the MLP gets scaled Gaussian weights.
UpdateVector init_params(const Architecture& arch, RngStream& rng);

/// Mean cross-entropy over `rows` of `data` and its gradient (written into
/// `grad`, which is resized and overwritten).
double loss_and_gradient(const Architecture& arch, std::span<const double> params,
                         const Dataset& data, std::span<const std::size_t> rows,
                         std::vector<double>& grad);

double mean_loss(const Architecture& arch, const UpdateVector& params, const Dataset& data);

/// Class scores for one input.
std::vector<double> logits(const Architecture& arch, std::span<const double> params,
                           std::span<const double> x);

/// Mini-batch SGD. Sample order is reshuffled every epoch from `rng`; a
/// batch size larger than the shard means full-batch steps.
UpdateVector train_local(const UpdateVector& start, const Dataset& shard, const TrainConfig& cfg,
                         RngStream& rng);

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Argmax accuracy (ties go to the lowest class index) and mean loss.
Evaluation evaluate(const Architecture& arch, const UpdateVector& params, const Dataset& test);

/// Flat little-endian dump: "BZSIM1", u32 N, u32 d_in, u32 C, f64 features, u32 labels.
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace bzsim
