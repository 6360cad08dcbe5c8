#include "bzsim/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace bzsim {

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.input_dim = ds.input_dim;
  out.classes = ds.classes;
  out.features.reserve(indices.size() * ds.input_dim);
  out.labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    if (idx >= ds.size()) throw std::out_of_range("subset: index out of range");
    const auto r = ds.row(idx);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(ds.labels[idx]);
  }
  return out;
}

Dataset concatenate(std::span<const Dataset> parts) {
  Dataset out;
  if (parts.empty()) return out;
  out.input_dim = parts.front().input_dim;
  out.classes = parts.front().classes;
  for (const auto& p : parts) {
    if (p.input_dim != out.input_dim || p.classes != out.classes) {
      throw DimensionError("concatenate: incompatible datasets");
    }
    out.features.insert(out.features.end(), p.features.begin(), p.features.end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

BlobSource::BlobSource(int classes, std::size_t input_dim, double spread, double mean_scale,
                       RngStream& rng)
    : classes_(classes), input_dim_(input_dim), spread_(spread) {
  if (classes < 2) throw std::invalid_argument("blobs need at least two classes");
  if (input_dim == 0) throw std::invalid_argument("blobs need a positive feature dimension");
  if (!(spread > 0.0)) throw std::invalid_argument("blob spread must be positive");
  means_.resize(static_cast<std::size_t>(classes) * input_dim);
  for (double& m : means_) m = mean_scale * rng.normal();
}

Dataset BlobSource::draw(std::size_t per_class, RngStream& rng) const {
  Dataset ds;
  ds.input_dim = input_dim_;
  ds.classes = classes_;
  ds.features.reserve(per_class * classes_ * input_dim_);
  ds.labels.reserve(per_class * classes_);
  for (int c = 0; c < classes_; ++c) {
    const double* mean = means_.data() + static_cast<std::size_t>(c) * input_dim_;
    for (std::size_t n = 0; n < per_class; ++n) {
      for (std::size_t j = 0; j < input_dim_; ++j) {
        ds.features.push_back(mean[j] + spread_ * rng.normal());
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

Dataset generate_blobs(int classes, std::size_t input_dim, std::size_t per_class, double spread,
                       RngStream& rng, double mean_scale) {
  const BlobSource source(classes, input_dim, spread, mean_scale, rng);
  return source.draw(per_class, rng);
}

Partition partition_iid(const Dataset& ds, std::span<const std::size_t> sizes, RngStream& rng) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total > ds.size()) {
    std::ostringstream msg;
    msg << "partition_iid: requested " << total << " samples but dataset has " << ds.size();
    throw PartitionError(msg.str());
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  Partition p;
  p.assignment.reserve(sizes.size());
  std::size_t cursor = 0;
  for (std::size_t s : sizes) {
    p.assignment.emplace_back(order.begin() + cursor, order.begin() + cursor + s);
    cursor += s;
  }
  return p;
}

Partition partition_dirichlet(const Dataset& ds, int clients, double alpha, RngStream& rng,
                              int max_retries) {
  if (clients < 1) throw PartitionError("partition_dirichlet: need at least one client");
  if (!(alpha > 0.0)) throw PartitionError("partition_dirichlet: alpha must be positive");

  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  const auto k = static_cast<std::size_t>(clients);
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    Partition p;
    p.assignment.assign(k, {});
    for (auto members : by_class) {
      rng.shuffle(members);
      std::vector<double> share(k);
      double total = 0.0;
      for (auto& s : share) {
        s = rng.gamma(alpha);
        total += s;
      }
      // Cut points from cumulative proportions; the last client takes the rest.
      std::size_t begin = 0;
      double cumulative = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        cumulative += share[c];
        std::size_t end = (c + 1 == k || total <= 0.0)
                              ? members.size()
                              : static_cast<std::size_t>(
                                    std::floor(cumulative / total * members.size()));
        end = std::clamp(end, begin, members.size());
        p.assignment[c].insert(p.assignment[c].end(), members.begin() + begin,
                               members.begin() + end);
        begin = end;
      }
    }
    const bool all_nonempty = std::ranges::none_of(
        p.assignment, [](const auto& idx) { return idx.empty(); });
    if (all_nonempty) {
      for (auto& idx : p.assignment) std::ranges::sort(idx);
      return p;
    }
  }
  throw PartitionError("partition_dirichlet: could not give every client a sample");
}

std::size_t Architecture::param_count() const {
  const auto c = static_cast<std::size_t>(classes);
  if (kind == Kind::Softmax) return c * input_dim + c;
  return hidden * input_dim + hidden + c * hidden + c;
}

UpdateVector init_params(const Architecture& arch, RngStream& rng) {
  std::vector<double> p(arch.param_count(), 0.0);
  if (arch.kind == Architecture::Kind::Mlp) {
    const std::size_t w1 = arch.hidden * arch.input_dim;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(arch.input_dim));
    for (std::size_t i = 0; i < w1; ++i) p[i] = s1 * rng.normal();
    const std::size_t w2_begin = w1 + arch.hidden;
    const std::size_t w2 = static_cast<std::size_t>(arch.classes) * arch.hidden;
    const double s2 = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
    for (std::size_t i = 0; i < w2; ++i) p[w2_begin + i] = s2 * rng.normal();
  }
  return UpdateVector(std::move(p));
}

namespace {

// Forward pass for one sample. Fills `hidden` (MLP only) and `scores`.
void forward(const Architecture& arch, std::span<const double> params, std::span<const double> x,
             std::vector<double>& hidden, std::vector<double>& scores) {
  const std::size_t classes = static_cast<std::size_t>(arch.classes);
  scores.assign(classes, 0.0);
  if (arch.kind == Architecture::Kind::Softmax) {
    const double* w = params.data();
    const double* b = params.data() + classes * arch.input_dim;
    for (std::size_t c = 0; c < classes; ++c) {
      double z = b[c];
      const double* wc = w + c * arch.input_dim;
      for (std::size_t j = 0; j < arch.input_dim; ++j) z += wc[j] * x[j];
      scores[c] = z;
    }
    return;
  }
  const std::size_t h = arch.hidden;
  const double* w1 = params.data();
  const double* b1 = w1 + h * arch.input_dim;
  const double* w2 = b1 + h;
  const double* b2 = w2 + classes * h;
  hidden.assign(h, 0.0);
  for (std::size_t u = 0; u < h; ++u) {
    double a = b1[u];
    const double* wu = w1 + u * arch.input_dim;
    for (std::size_t j = 0; j < arch.input_dim; ++j) a += wu[j] * x[j];
    hidden[u] = std::tanh(a);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    double z = b2[c];
    const double* wc = w2 + c * h;
    for (std::size_t u = 0; u < h; ++u) z += wc[u] * hidden[u];
    scores[c] = z;
  }
}

// Turns scores into probabilities in place; returns -log p[label].
double softmax_xent(std::vector<double>& scores, int label) {
  const double top = *std::ranges::max_element(scores);
  double total = 0.0;
  for (double& s : scores) {
    s = std::exp(s - top);
    total += s;
  }
  for (double& s : scores) s /= total;
  const double p = scores[static_cast<std::size_t>(label)];
  return p > 0.0 ? -std::log(p) : std::numeric_limits<double>::infinity();
}

}  // namespace

std::vector<double> logits(const Architecture& arch, std::span<const double> params,
                           std::span<const double> x) {
  std::vector<double> hidden;
  std::vector<double> scores;
  forward(arch, params, x, hidden, scores);
  return scores;
}

double loss_and_gradient(const Architecture& arch, std::span<const double> params,
                         const Dataset& data, std::span<const std::size_t> rows,
                         std::vector<double>& grad) {
  if (params.size() != arch.param_count()) {
    throw DimensionError("parameter vector does not match architecture");
  }
  if (rows.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
  grad.assign(params.size(), 0.0);
  const std::size_t classes = static_cast<std::size_t>(arch.classes);
  const double scale = 1.0 / static_cast<double>(rows.size());
  std::vector<double> hidden;
  std::vector<double> probs;
  std::vector<double> dhidden;
  double loss = 0.0;

  for (std::size_t r : rows) {
    const auto x = data.row(r);
    const int label = data.labels[r];
    forward(arch, params, x, hidden, probs);
    loss += softmax_xent(probs, label);
    probs[static_cast<std::size_t>(label)] -= 1.0;  // dL/dz

    if (arch.kind == Architecture::Kind::Softmax) {
      double* gw = grad.data();
      double* gb = grad.data() + classes * arch.input_dim;
      for (std::size_t c = 0; c < classes; ++c) {
        const double dz = probs[c] * scale;
        double* gwc = gw + c * arch.input_dim;
        for (std::size_t j = 0; j < arch.input_dim; ++j) gwc[j] += dz * x[j];
        gb[c] += dz;
      }
      continue;
    }

    const std::size_t h = arch.hidden;
    const double* w2 = params.data() + h * arch.input_dim + h;
    double* gw1 = grad.data();
    double* gb1 = gw1 + h * arch.input_dim;
    double* gw2 = gb1 + h;
    double* gb2 = gw2 + classes * h;
    dhidden.assign(h, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      const double dz = probs[c] * scale;
      double* gw2c = gw2 + c * h;
      const double* w2c = w2 + c * h;
      for (std::size_t u = 0; u < h; ++u) {
        gw2c[u] += dz * hidden[u];
        dhidden[u] += dz * w2c[u];
      }
      gb2[c] += dz;
    }
    for (std::size_t u = 0; u < h; ++u) {
      const double da = dhidden[u] * (1.0 - hidden[u] * hidden[u]);
      double* gw1u = gw1 + u * arch.input_dim;
      for (std::size_t j = 0; j < arch.input_dim; ++j) gw1u[j] += da * x[j];
      gb1[u] += da;
    }
  }
  return loss * scale;
}

double mean_loss(const Architecture& arch, const UpdateVector& params, const Dataset& data) {
  return evaluate(arch, params, data).mean_loss;
}

UpdateVector train_local(const UpdateVector& start, const Dataset& shard, const TrainConfig& cfg,
                         RngStream& rng) {
  if (shard.empty()) throw std::invalid_argument("train_local: empty shard");
  if (cfg.epochs < 1 || cfg.batch_size < 1) {
    throw std::invalid_argument("train_local: epochs and batch_size must be positive");
  }
  std::vector<double> params(start.raw());
  std::vector<double> grad;
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::min(cfg.batch_size, shard.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(begin + batch, order.size());
      const double loss = loss_and_gradient(
          cfg.architecture, params, shard, std::span(order).subspan(begin, end - begin), grad);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch starting " << begin;
        throw TrainingError(msg.str());
      }
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.learning_rate * grad[i];
    }
  }
  for (double v : params) {
    if (!std::isfinite(v)) throw TrainingError("local training produced non-finite parameters");
  }
  return UpdateVector(std::move(params));
}

Evaluation evaluate(const Architecture& arch, const UpdateVector& params, const Dataset& test) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (params.dim() != arch.param_count()) {
    throw DimensionError("parameter vector does not match architecture");
  }
  std::vector<double> hidden;
  std::vector<double> scores;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    forward(arch, params.values(), test.row(i), hidden, scores);
    // max_element returns the first maximum, i.e. the lowest class index.
    const auto predicted = std::ranges::max_element(scores) - scores.begin();
    if (predicted == test.labels[i]) ++correct;
    loss += softmax_xent(scores, test.labels[i]);
  }
  const double n = static_cast<double>(test.size());
  return {static_cast<double>(correct) / n, loss / n};
}

namespace {

constexpr std::array<char, 6> kMagic{'B', 'Z', 'S', 'I', 'M', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::ranges::reverse(bytes);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw std::runtime_error("dataset file truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::ranges::reverse(bytes);
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.input_dim));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.classes));
  for (double v : ds.features) put_le<double>(out, v);
  for (int y : ds.labels) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(y));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 6> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error(path.string() + ": bad magic");
  }
  Dataset ds;
  const auto n = get_le<std::uint32_t>(in);
  ds.input_dim = get_le<std::uint32_t>(in);
  ds.classes = static_cast<int>(get_le<std::uint32_t>(in));
  ds.features.resize(static_cast<std::size_t>(n) * ds.input_dim);
  for (double& v : ds.features) v = get_le<double>(in);
  ds.labels.resize(n);
  for (int& y : ds.labels) {
    y = static_cast<int>(get_le<std::uint32_t>(in));
    if (y < 0 || y >= ds.classes) throw std::runtime_error(path.string() + ": label out of range");
  }
  require_finite(ds.features, path.string());
  return ds;
}

}  // namespace bzsim
