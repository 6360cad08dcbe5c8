#include "bzsim/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "bzsim/config.hpp"
#include "bzsim/engine.hpp"
#include "bzsim/report.hpp"

namespace bzsim {

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> rounds;
  bool chart = false;
  bool timing = false;
  int workers = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Experiment config (JSON); defaults apply if omitted");
  cmd->add_option("--out-dir", o.out_dir, "Directory for all outputs")->required();
  cmd->add_option("--seed", o.seed, "Override the config seed");
  cmd->add_option("--rounds", o.rounds, "Override the number of rounds");
  cmd->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--timing", o.timing, "Write measured wall_ms into metrics.csv");
}

ExperimentConfig load(const CommonOptions& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.rounds) cfg.rounds = *o.rounds;
  validate(cfg);
  return cfg;
}

fs::path prepare_out_dir(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_csv(const fs::path& path, const std::vector<ExperimentResult>& runs, bool timing) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_metrics_csv(out, runs, timing);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty entry in list '" + text + "'");
    items.push_back(item.substr(b, e - b + 1));
  }
  return items;
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("malformed fraction '" + item + "'");
    }
    if (used != item.size()) throw ConfigError("malformed fraction '" + item + "'");
    if (!(v >= 0.0 && v < 1.0)) throw ConfigError("fraction " + item + " is outside [0, 1)");
    out.push_back(v);
  }
  return out;
}

std::string percent_label(double fraction) {
  return std::to_string(static_cast<int>(std::lround(fraction * 100.0)));
}

int report_failures(const std::vector<ExperimentResult>& runs, std::ostream& err) {
  int failed = 0;
  for (const auto& r : runs) {
    if (r.ok()) continue;
    ++failed;
    err << "run failed (" << r.config.aggregator.name << ", fraction "
        << format_real(r.config.attacker_fraction) << "): " << r.error << '\n';
  }
  return failed == 0 ? kExitOk : kExitRuntimeError;
}

int cmd_run(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load(o);
  const auto result = run_experiment(cfg, o.workers);
  const auto dir = prepare_out_dir(o.out_dir);
  write_csv(dir / "metrics.csv", {result}, o.timing);
  write_text(dir / "summary.json", summarize(result).dump(2) + "\n");
  if (o.chart && !result.records.empty()) {
    const auto title = result.config.aggregator.name + ", " +
                       std::string(to_string(result.config.attack.kind));
    write_text(dir / "chart.svg", emit_svg({accuracy_series(result.config.aggregator.name, result)},
                                           title));
  }
  out << "final accuracy " << format_real(result.final_accuracy) << " after "
      << result.records.size() << " rounds\n";
  return report_failures({result}, err);
}

int cmd_sweep(const CommonOptions& o, const std::string& fractions_text,
              const std::string& aggregators_text, const std::string& attack, std::ostream& out,
              std::ostream& err) {
  auto cfg = load(o);
  const auto kind = parse_attack_kind(attack);
  if (!kind) throw ConfigError("unknown attack '" + attack + "'");
  cfg.attack.kind = *kind;
  const auto fractions = parse_fractions(fractions_text);
  const auto aggregators =
      aggregators_text.empty() ? std::vector<std::string>{} : split_list(aggregators_text);
  for (const auto& name : aggregators) {
    if (!is_known_aggregator(name)) throw ConfigError("unknown aggregator '" + name + "'");
  }

  const auto results = sweep(cfg, fractions, aggregators, o.workers);
  const auto dir = prepare_out_dir(o.out_dir);
  write_csv(dir / "metrics.csv", results, o.timing);
  nlohmann::json summary = {{"runs", nlohmann::json::array()}};
  for (const auto& r : results) summary["runs"].push_back(summarize(r));
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  for (std::size_t fi = 0; fi < fractions.size() && !aggregators.empty(); ++fi) {
    std::vector<Series> series;
    for (std::size_t ai = 0; ai < aggregators.size(); ++ai) {
      const auto& run = results[fi * aggregators.size() + ai];
      if (!run.records.empty()) series.push_back(accuracy_series(aggregators[ai], run));
    }
    if (series.empty()) continue;
    const auto label = percent_label(fractions[fi]);
    write_text(dir / ("fig2_" + label + ".svg"),
               emit_svg(series, label + "% attackers (" + attack + ")"));
  }
  out << results.size() << " runs written to " << dir.string() << '\n';
  return report_failures(results, err);
}

int cmd_compare(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load(o);
  const auto cmp = compare_attacks(cfg, o.workers);
  const auto dir = prepare_out_dir(o.out_dir);
  write_csv(dir / "metrics.csv", cmp.runs, o.timing);

  nlohmann::json table = nlohmann::json::object();
  nlohmann::json runs = nlohmann::json::array();
  const std::size_t per = cmp.attacks.size();
  for (std::size_t a = 0; a < cmp.aggregators.size(); ++a) {
    std::vector<Series> series;
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t k = 0; k < per; ++k) {
      const auto& run = cmp.runs[a * per + k];
      series.push_back(accuracy_series(cmp.attacks[k], run));
      row[cmp.attacks[k]] = {{"final_accuracy", run.final_accuracy},
                             {"degradation", cmp.degradation[a][k]}};
      runs.push_back(summarize(run));
      out << cmp.aggregators[a] << " / " << cmp.attacks[k] << ": accuracy "
          << format_real(run.final_accuracy) << ", degradation "
          << format_real(cmp.degradation[a][k]) << '\n';
    }
    table[cmp.aggregators[a]] = row;
    write_text(dir / ("fig3_" + cmp.aggregators[a] + ".svg"),
               emit_svg(series, cmp.aggregators[a] + ", 40% attackers"));
  }
  write_text(dir / "summary.json",
             nlohmann::json{{"degradation", table}, {"runs", runs}}.dump(2) + "\n");
  return report_failures(cmp.runs, err);
}

int cmd_dump(const CommonOptions& o, std::ostream& out) {
  const auto cfg = load(o);
  const Simulation sim(cfg, 1);
  const auto dir = prepare_out_dir(o.out_dir);
  write_dataset(sim.train_set(), dir / "train.bin");
  write_dataset(sim.test_set(), dir / "test.bin");
  out << "wrote " << sim.train_set().size() << " training and " << sim.test_set().size()
      << " test samples\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Byzantine-robust federated learning simulator"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "Run one experiment");
  add_common(run, run_opts);
  run->add_flag("--chart", run_opts.chart, "Also write chart.svg");

  CommonOptions sweep_opts;
  std::string fractions = "0.2,0.3,0.4,0.5";
  std::string aggregators = "multikrum,faba,zeno,median";
  std::string attack = "weight_attack";
  auto* sw = app.add_subcommand("sweep", "Run every (attacker fraction, aggregator) pair");
  add_common(sw, sweep_opts);
  sw->add_option("--fractions", fractions, "Comma-separated attacker fractions in [0, 1)");
  sw->add_option("--aggregators", aggregators, "Comma-separated aggregator names");
  sw->add_option("--attack", attack, "Attack used for fractions above zero");

  CommonOptions cmp_opts;
  auto* cmp = app.add_subcommand("compare-attacks",
                                 "Compare attacks at 40% attackers under Multi-Krum and FABA");
  add_common(cmp, cmp_opts);

  CommonOptions dump_opts;
  auto* dump = app.add_subcommand("dump-data", "Write the generated datasets as BZSIM1 files");
  add_common(dump, dump_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  }

  try {
    if (run->parsed()) return cmd_run(run_opts, out, err);
    if (sw->parsed()) return cmd_sweep(sweep_opts, fractions, aggregators, attack, out, err);
    if (cmp->parsed()) return cmd_compare(cmp_opts, out, err);
    return cmd_dump(dump_opts, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntimeError;
  }
}

}  // namespace bzsim
