#include "bzsim/attacks.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace bzsim {

namespace {

constexpr std::array<std::pair<AttackKind, std::string_view>, 7> kNames{{
    {AttackKind::None, "none"},
    {AttackKind::LabelFlip, "label_flip"},
    {AttackKind::NoiseData, "noise_data"},
    {AttackKind::SignFlip, "sign_flip"},
    {AttackKind::GaussianUpdate, "gaussian_update"},
    {AttackKind::Sybil, "sybil"},
    {AttackKind::WeightAttack, "weight_attack"},
}};

}  // namespace

std::string_view to_string(AttackKind kind) {
  for (const auto& [k, name] : kNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<AttackKind> parse_attack_kind(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

bool is_data_attack(AttackKind kind) {
  return kind == AttackKind::LabelFlip || kind == AttackKind::NoiseData;
}

int attacker_count(int clients, double fraction) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw std::invalid_argument("attacker fraction must lie in [0, 1)");
  }
  // 0.3 * 20 is 6.000000000000001 in binary; don't let that round up to 7.
  return static_cast<int>(std::ceil(fraction * clients - 1e-9));
}

std::set<int> attacker_ids_for(int clients, double fraction) {
  const int count = attacker_count(clients, fraction);
  std::set<int> ids;
  for (int i = clients - count; i < clients; ++i) ids.insert(i);
  return ids;
}

Dataset flip_labels(Dataset shard) {
  for (int& y : shard.labels) y = shard.classes - 1 - y;
  return shard;
}

Dataset corrupt_with_noise(Dataset shard, double sigma_data, RngStream& rng) {
  if (sigma_data < 0.0) throw std::invalid_argument("noise sigma must be nonnegative");
  if (sigma_data == 0.0) return shard;
  for (double& v : shard.features) v += sigma_data * rng.normal();
  return shard;
}

ClientReport sign_flip(ClientReport report, double factor) {
  report.update = vector_scale(report.update, factor);
  return report;
}

ClientReport gaussian_update(ClientReport report, double sigma, RngStream& rng) {
  std::vector<double> values(report.update.dim());
  for (double& v : values) v = sigma * rng.normal();
  report.update = UpdateVector(std::move(values));
  return report;
}

std::vector<ClientReport> make_sybils(std::vector<ClientReport> reports,
                                      const std::set<int>& attacker_ids, RngStream& rng,
                                      double sigma, int copies_of) {
  if (attacker_ids.empty()) throw std::invalid_argument("make_sybils: no attackers");
  if (reports.empty()) return reports;

  UpdateVector shared;
  if (copies_of >= 0) {
    bool found = false;
    for (const auto& r : reports) {
      if (r.client_id == copies_of) {
        shared = r.update;
        found = true;
      }
    }
    if (!found) throw std::invalid_argument("make_sybils: copies_of names no reporting client");
  } else {
    std::vector<double> values(reports.front().update.dim());
    for (double& v : values) v = sigma * rng.normal();
    shared = UpdateVector(std::move(values));
  }
  for (auto& r : reports) {
    if (attacker_ids.contains(r.client_id)) r.update = shared;
  }
  return reports;
}

ClientReport weight_attack(ClientReport report, int weight_case, std::int64_t declared) {
  if (weight_case != 1 && weight_case != 2) {
    throw std::invalid_argument("weight_attack: case must be 1 or 2");
  }
  if (declared < 1) throw std::invalid_argument("weight_attack: declared size must be >= 1");
  report.declared_size = declared;
  return report;
}

Dataset apply_data_attack(const AttackSpec& spec, int client_id, Dataset shard, RngStream& rng) {
  if (!spec.attacker_ids.contains(client_id)) return shard;
  switch (spec.kind) {
    case AttackKind::LabelFlip:
      return flip_labels(std::move(shard));
    case AttackKind::NoiseData:
      return corrupt_with_noise(std::move(shard), spec.sigma_data, rng);
    default:
      return shard;
  }
}

std::vector<ClientReport> apply_parameter_attack(const AttackSpec& spec,
                                                 std::vector<ClientReport> reports,
                                                 RngStream& rng) {
  if (spec.kind == AttackKind::None || is_data_attack(spec.kind)) return reports;
  if (spec.kind == AttackKind::Sybil) {
    return make_sybils(std::move(reports), spec.attacker_ids, rng, spec.sigma, spec.copies_of);
  }
  for (auto& r : reports) {
    if (!spec.attacker_ids.contains(r.client_id)) continue;
    switch (spec.kind) {
      case AttackKind::SignFlip:
        r = sign_flip(std::move(r), spec.factor);
        break;
      case AttackKind::GaussianUpdate: {
        RngStream own(rng.next_u64(), static_cast<std::uint64_t>(r.client_id));
        r = gaussian_update(std::move(r), spec.sigma, own);
        break;
      }
      case AttackKind::WeightAttack:
        r = weight_attack(std::move(r), spec.weight_case, spec.declared_size);
        break;
      default:
        break;
    }
  }
  return reports;
}

}  // namespace bzsim
