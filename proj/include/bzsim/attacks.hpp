#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "bzsim/core.hpp"
#include "bzsim/data.hpp"

namespace bzsim {

enum class AttackKind { None, LabelFlip, NoiseData, SignFlip, GaussianUpdate, Sybil, WeightAttack };

std::string_view to_string(AttackKind kind);
std::optional<AttackKind> parse_attack_kind(std::string_view name);

/// Data attacks rewrite the attacker's shard before training; all other
/// kinds rewrite the finished report.
bool is_data_attack(AttackKind kind);

struct AttackSpec {
  AttackKind kind = AttackKind::None;
  double factor = -4.0;      // sign_flip
  double sigma = 1.0;        // gaussian_update, sybil
  double sigma_data = 1.0;   // noise_data
  int copies_of = -1;        // sybil: client to copy, or -1 for a shared Gaussian draw
  int weight_case = 1;       // weight_attack misreport case (1 or 2)
  std::int64_t declared_size = 500;  // weight_attack
  std::set<int> attacker_ids;
};

/// The last ceil(fraction * K) client ids.
std::set<int> attacker_ids_for(int clients, double fraction);
int attacker_count(int clients, double fraction);

/// y -> C-1-y. An involution.
Dataset flip_labels(Dataset shard);
Dataset corrupt_with_noise(Dataset shard, double sigma_data, RngStream& rng);

ClientReport sign_flip(ClientReport report, double factor);
ClientReport gaussian_update(ClientReport report, double sigma, RngStream& rng);

/// Every attacker report gets one shared update: a copy of client
/// `copies_of`'s update, or a single N(0, sigma^2) draw when copies_of < 0.
std::vector<ClientReport> make_sybils(std::vector<ClientReport> reports,
                                      const std::set<int>& attacker_ids, RngStream& rng,
                                      double sigma = 1.0, int copies_of = -1);

/// Misreports the dataset size. The update itself is left untouched.
ClientReport weight_attack(ClientReport report, int weight_case, std::int64_t declared);

/// Pre-training stage for one client. Identity for honest clients and
/// parameter-based kinds.
Dataset apply_data_attack(const AttackSpec& spec, int client_id, Dataset shard, RngStream& rng);

/// Post-training stage over the whole report list. `rng` is keyed to the
/// round; per-client draws are derived from it in id order.
std::vector<ClientReport> apply_parameter_attack(const AttackSpec& spec,
                                                 std::vector<ClientReport> reports,
                                                 RngStream& rng);

}  // namespace bzsim
