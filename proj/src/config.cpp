#include "bzsim/config.hpp"

#include <fstream>
#include <set>

namespace bzsim {

using nlohmann::json;

namespace {

// Walks one JSON object, consuming known keys and rejecting the rest.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  void reject_unknown() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown key '" + key + "' at " + path_ + "/" + key);
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    out = convert<T>(node_.at(key), key);
  }

  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    const auto& value = node_.at(key);
    if (value.is_null()) {
      out.reset();
    } else {
      out = convert<T>(value, key);
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(node_.contains(key) ? node_.at(key) : empty, path_ + "/" + key);
  }

 private:
  std::string where() const { return path_.empty() ? "/" : path_; }

  template <typename T>
  T convert(const json& value, const std::string& key) const {
    const std::string at = path_ + "/" + key;
    if constexpr (std::is_same_v<T, std::string>) {
      if (!value.is_string()) throw ConfigError(at + ": expected a string");
      return value.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!value.is_number()) throw ConfigError(at + ": expected a number");
      return value.get<T>();
    } else {
      if (!value.is_number_integer()) throw ConfigError(at + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (value.is_number_unsigned()) return value.get<T>();
        if (value.get<std::int64_t>() < 0) throw ConfigError(at + ": must be >= 0");
      }
      return value.get<T>();
    }
  }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig cfg;
  {
    Section root(doc, "");
    root.get("clients", cfg.clients);
    root.get("rounds", cfg.rounds);
    root.get("attacker_fraction", cfg.attacker_fraction);
    root.get("seed", cfg.seed);
    {
      auto s = root.child("attack");
      std::string kind(to_string(cfg.attack.kind));
      s.get("kind", kind);
      const auto parsed = parse_attack_kind(kind);
      if (!parsed) throw ConfigError("/attack/kind: unknown attack '" + kind + "'");
      cfg.attack.kind = *parsed;
      s.get("factor", cfg.attack.factor);
      s.get("sigma", cfg.attack.sigma);
      s.get("sigma_data", cfg.attack.sigma_data);
      s.get("copies_of", cfg.attack.copies_of);
      s.get("case", cfg.attack.weight_case);
      s.reject_unknown();
    }
    {
      auto s = root.child("aggregator");
      auto& a = cfg.aggregator;
      s.get("name", a.name);
      s.get("f", a.f);
      s.get("m", a.m);
      s.get("beta", a.beta);
      s.get("k_near", a.k_near);
      s.get("gamma", a.gamma);
      s.get("rho", a.rho);
      s.get("epsilon", a.epsilon);
      s.get("weiszfeld_iters", a.weiszfeld_iters);
      s.get("zeno_keep", a.zeno_keep);
      s.reject_unknown();
    }
    {
      auto s = root.child("train");
      s.get("epochs", cfg.train.epochs);
      s.get("batch_size", cfg.train.batch_size);
      s.get("learning_rate", cfg.train.learning_rate);
      s.get("architecture", cfg.train.architecture);
      s.get("hidden_width", cfg.train.hidden_width);
      s.reject_unknown();
    }
    {
      auto s = root.child("data");
      auto& d = cfg.data;
      s.get("classes", d.classes);
      s.get("features", d.features);
      s.get("train_per_class", d.train_per_class);
      s.get("test_per_class", d.test_per_class);
      s.get("validation_per_class", d.validation_per_class);
      s.get("server_per_class", d.server_per_class);
      s.get("spread", d.spread);
      s.get("mean_scale", d.mean_scale);
      s.get("partition", d.partition);
      s.get("alpha", d.alpha);
      s.reject_unknown();
    }
    {
      auto s = root.child("sizes");
      s.get("regular_true", cfg.sizes.regular_true);
      s.get("attacker_true", cfg.sizes.attacker_true);
      s.get("attacker_declared", cfg.sizes.attacker_declared);
      s.reject_unknown();
    }
    root.reject_unknown();
  }
  validate(cfg);
  return cfg;
}

namespace {

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

json config_to_json(const ExperimentConfig& cfg) {
  const auto& a = cfg.aggregator;
  const auto& d = cfg.data;
  return json{
      {"clients", cfg.clients},
      {"rounds", cfg.rounds},
      {"attacker_fraction", cfg.attacker_fraction},
      {"seed", cfg.seed},
      {"attack",
       {{"kind", std::string(to_string(cfg.attack.kind))},
        {"factor", cfg.attack.factor},
        {"sigma", cfg.attack.sigma},
        {"sigma_data", cfg.attack.sigma_data},
        {"copies_of", cfg.attack.copies_of},
        {"case", cfg.attack.weight_case}}},
      {"aggregator",
       {{"name", a.name},
        {"f", optional_json(a.f)},
        {"m", optional_json(a.m)},
        {"beta", optional_json(a.beta)},
        {"k_near", optional_json(a.k_near)},
        {"gamma", optional_json(a.gamma)},
        {"rho", a.rho},
        {"epsilon", a.epsilon},
        {"weiszfeld_iters", a.weiszfeld_iters},
        {"zeno_keep", optional_json(a.zeno_keep)}}},
      {"train",
       {{"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"learning_rate", cfg.train.learning_rate},
        {"architecture", cfg.train.architecture},
        {"hidden_width", cfg.train.hidden_width}}},
      {"data",
       {{"classes", d.classes},
        {"features", d.features},
        {"train_per_class", d.train_per_class},
        {"test_per_class", d.test_per_class},
        {"validation_per_class", d.validation_per_class},
        {"server_per_class", d.server_per_class},
        {"spread", d.spread},
        {"mean_scale", d.mean_scale},
        {"partition", d.partition},
        {"alpha", d.alpha}}},
      {"sizes",
       {{"regular_true", cfg.sizes.regular_true},
        {"attacker_true", optional_json(cfg.sizes.attacker_true)},
        {"attacker_declared", optional_json(cfg.sizes.attacker_declared)}}},
  };
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return config_from_json(doc);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace bzsim
