#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "bzsim/engine.hpp"

namespace bzsim {

inline constexpr const char* kMetricsHeader =
    "round,aggregator,attack,attacker_fraction,test_accuracy,test_loss,attackers_accepted,"
    "distance_evals,wall_ms";

struct MetricsRow {
  int round = 0;
  std::string aggregator;
  std::string attack;
  double attacker_fraction = 0.0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  int attackers_accepted = 0;
  std::int64_t distance_evals = 0;
  double wall_ms = 0.0;
};

/// Reals with 6 significant digits.
std::string format_real(double v);

/// One row per round per run, runs in the given order. wall_ms is written
/// as 0 unless `with_timing` is set, which keeps the file byte-stable.
void write_metrics_csv(std::ostream& out, const std::vector<ExperimentResult>& runs,
                       bool with_timing = false);
std::vector<MetricsRow> parse_metrics_csv(std::istream& in);

nlohmann::json summarize(const ExperimentResult& run);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (round, accuracy)
};

Series accuracy_series(const std::string& name, const ExperimentResult& run);

/// Standalone 800x500 SVG line chart of accuracy against round. Output
/// bytes depend only on the input. Throws on empty input.
std::string emit_svg(const std::vector<Series>& series, const std::string& title = "");

}  // namespace bzsim
