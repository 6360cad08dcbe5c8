#include "bzsim/report.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "bzsim/config.hpp"

namespace bzsim {

std::string format_real(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.6g", v);
  return buf.data();
}

void write_metrics_csv(std::ostream& out, const std::vector<ExperimentResult>& runs,
                       bool with_timing) {
  out << kMetricsHeader << '\n';
  for (const auto& run : runs) {
    const auto attack = std::string(to_string(run.config.attack.kind));
    for (const auto& r : run.records) {
      out << r.round << ',' << run.config.aggregator.name << ',' << attack << ','
          << format_real(run.config.attacker_fraction) << ',' << format_real(r.test_accuracy)
          << ',' << format_real(r.mean_test_loss) << ',' << r.attacker_accepted_count << ','
          << r.op_counts.distance_evals << ',' << format_real(with_timing ? r.wall_ms : 0.0)
          << '\n';
    }
  }
}

std::vector<MetricsRow> parse_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw std::runtime_error("metrics.csv: unexpected header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw std::runtime_error("metrics.csv: expected 9 columns: " + line);
    MetricsRow row;
    row.round = std::stoi(cells[0]);
    row.aggregator = cells[1];
    row.attack = cells[2];
    row.attacker_fraction = std::stod(cells[3]);
    row.test_accuracy = std::stod(cells[4]);
    row.test_loss = std::stod(cells[5]);
    row.attackers_accepted = std::stoi(cells[6]);
    row.distance_evals = std::stoll(cells[7]);
    row.wall_ms = std::stod(cells[8]);
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json summarize(const ExperimentResult& run) {
  nlohmann::json rounds = nlohmann::json::array();
  double total_ms = 0.0;
  int failures = 0;
  for (const auto& r : run.records) {
    total_ms += r.wall_ms;
    failures += r.aggregation_failed ? 1 : 0;
    rounds.push_back({{"round", r.round},
                      {"test_accuracy", r.test_accuracy},
                      {"accepted_ids", r.accepted_ids},
                      {"attackers_accepted", r.attacker_accepted_count},
                      {"aggregation_failed", r.aggregation_failed},
                      {"op_counts",
                       {{"distance_evals", r.op_counts.distance_evals},
                        {"coordinate_sorts", r.op_counts.coordinate_sorts},
                        {"sort_comparisons", r.op_counts.sort_comparisons},
                        {"loss_evals", r.op_counts.loss_evals}}},
                      {"wall_ms", r.wall_ms}});
  }
  return {{"config", config_to_json(run.config)},
          {"initial_accuracy", run.initial_accuracy},
          {"final_accuracy", run.final_accuracy},
          {"converged", run.converged},
          {"aggregation_failures", failures},
          {"total_wall_ms", total_ms},
          {"error", run.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(run.error)},
          {"rounds", std::move(rounds)}};
}

Series accuracy_series(const std::string& name, const ExperimentResult& run) {
  Series s{name, {}};
  for (const auto& r : run.records) s.points.emplace_back(r.round, r.test_accuracy);
  return s;
}

namespace {

constexpr double kWidth = 800;
constexpr double kHeight = 500;
constexpr double kLeft = 70;
constexpr double kRight = 620;  // legend lives to the right of this
constexpr double kTop = 40;
constexpr double kBottom = 440;

constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                              "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string fixed2(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.2f", v);
  return buf.data();
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string emit_svg(const std::vector<Series>& series, const std::string& title) {
  double x_min = 0.0;
  double x_max = 0.0;
  bool any = false;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x_min = any ? std::min(x_min, x) : x;
      x_max = any ? std::max(x_max, x) : x;
      any = true;
    }
  }
  if (!any) throw std::invalid_argument("emit_svg: no data points");
  if (x_max == x_min) {
    x_min -= 1.0;
    x_max += 1.0;
  }
  const auto px = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * (kRight - kLeft); };
  const auto py = [&](double y) { return kBottom - std::clamp(y, 0.0, 1.0) * (kBottom - kTop); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" "
         "viewBox=\"0 0 800 500\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" fill=\"white\"/>\n";
  if (!title.empty()) {
    svg << "<text x=\"" << fixed2((kLeft + kRight) / 2) << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-size=\"14\">" << escape(title) << "</text>\n";
  }
  // Axes and grid.
  svg << "<g stroke=\"#cccccc\" stroke-width=\"1\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = py(i / 5.0);
    svg << "<line x1=\"" << fixed2(kLeft) << "\" y1=\"" << fixed2(y) << "\" x2=\""
        << fixed2(kRight) << "\" y2=\"" << fixed2(y) << "\"/>\n";
  }
  svg << "</g>\n";
  svg << "<g stroke=\"black\" stroke-width=\"1\">\n"
      << "<line x1=\"" << fixed2(kLeft) << "\" y1=\"" << fixed2(kBottom) << "\" x2=\""
      << fixed2(kRight) << "\" y2=\"" << fixed2(kBottom) << "\"/>\n"
      << "<line x1=\"" << fixed2(kLeft) << "\" y1=\"" << fixed2(kTop) << "\" x2=\""
      << fixed2(kLeft) << "\" y2=\"" << fixed2(kBottom) << "\"/>\n"
      << "</g>\n";
  for (int i = 0; i <= 5; ++i) {
    svg << "<text x=\"" << fixed2(kLeft - 8) << "\" y=\"" << fixed2(py(i / 5.0) + 4)
        << "\" text-anchor=\"end\">" << fixed2(i / 5.0) << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double x = x_min + (x_max - x_min) * i / 4.0;
    svg << "<text x=\"" << fixed2(px(x)) << "\" y=\"" << fixed2(kBottom + 18)
        << "\" text-anchor=\"middle\">" << format_real(x) << "</text>\n";
  }
  svg << "<text x=\"" << fixed2((kLeft + kRight) / 2) << "\" y=\"480\" text-anchor=\"middle\">"
      << "round</text>\n";
  svg << "<text x=\"18\" y=\"" << fixed2((kTop + kBottom) / 2) << "\" text-anchor=\"middle\" "
      << "transform=\"rotate(-90 18 " << fixed2((kTop + kBottom) / 2) << ")\">test accuracy</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % kPalette.size()];
    if (s.points.size() == 1) {
      svg << "<circle cx=\"" << fixed2(px(s.points[0].first)) << "\" cy=\""
          << fixed2(py(s.points[0].second)) << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    } else if (s.points.size() > 1) {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.points.size(); ++i) {
        if (i > 0) svg << ' ';
        svg << fixed2(px(s.points[i].first)) << ',' << fixed2(py(s.points[i].second));
      }
      svg << "\"/>\n";
    }
    const double ly = kTop + 10 + 20.0 * static_cast<double>(k);
    svg << "<line x1=\"635\" y1=\"" << fixed2(ly) << "\" x2=\"660\" y2=\"" << fixed2(ly)
        << "\" stroke=\"" << color << "\" stroke-width=\"3\"/>\n";
    svg << "<text x=\"666\" y=\"" << fixed2(ly + 4) << "\">" << escape(s.name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace bzsim
