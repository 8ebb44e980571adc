#include "isinv/harness/config.hpp"

#include <toml.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "isinv/core/errors.hpp"

namespace isinv {

AttackKind parse_attack_kind(const std::string& name) {
    if (name == "none") return AttackKind::none;
    if (name == "ts") return AttackKind::ts;
    if (name == "er") return AttackKind::er;
    if (name == "tbs") return AttackKind::tbs;
    if (name == "transfer") return AttackKind::transfer;
    if (name == "generate") return AttackKind::generate;
    throw ConfigError("unknown attack '" + name + "'");
}

const char* attack_kind_name(AttackKind kind) {
    switch (kind) {
        case AttackKind::none:
            return "none";
        case AttackKind::ts:
            return "ts";
        case AttackKind::er:
            return "er";
        case AttackKind::tbs:
            return "tbs";
        case AttackKind::transfer:
            return "transfer";
        case AttackKind::generate:
            return "generate";
    }
    return "?";
}

void ExperimentConfig::validate() const {
    if (model_path.empty()) throw ConfigError("model.path is required");
    if (dataset_path.empty() && is_path.empty()) throw ConfigError("experiment.dataset or experiment.is_container is required");
    if (layer == 0 && attack != AttackKind::none) throw ConfigError("experiment.layer must be at least 1");
    if (attack == AttackKind::transfer && surrogate_path.empty()) throw ConfigError("transfer needs experiment.surrogate");
    if (attack == AttackKind::generate && inverter_path.empty()) throw ConfigError("generate needs experiment.inverter");
    if (workers == 0) throw ConfigError("experiment.workers must be positive");
    attack_cfg.validate();
    defense.validate();
    metrics.validate();
}

void ExperimentConfig::check_paths() const {
    namespace fs = std::filesystem;
    auto need = [](const std::string& p, const char* what) {
        if (!p.empty() && !fs::exists(p)) throw ConfigError(std::string(what) + " '" + p + "' does not exist");
    };
    need(model_path, "model.path");
    need(dataset_path, "experiment.dataset");
    need(is_path, "experiment.is_container");
    need(surrogate_path, "experiment.surrogate");
    need(inverter_path, "experiment.inverter");
}

namespace {

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string quote(const std::string& s) {
    std::ostringstream os;
    os << toml::value<std::string>(s);
    return os.str();
}

struct Field {
    const char* key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define ISINV_STR(KEY, MEMBER)                                                          \
    Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = v; },        \
          [](const ExperimentConfig& c) { return quote(c.MEMBER); }}
#define ISINV_UINT(KEY, MEMBER)                                                                                  \
    Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = static_cast<decltype(c.MEMBER)>(to_uint(KEY, v)); }, \
          [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }}
#define ISINV_REAL(KEY, MEMBER)                                                         \
    Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_double(KEY, v); }, \
          [](const ExperimentConfig& c) { return fmt_double(c.MEMBER); }}
#define ISINV_BOOL(KEY, MEMBER)                                                         \
    Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); },   \
          [](const ExperimentConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        ISINV_STR("model.path", model_path),
        ISINV_UINT("experiment.layer", layer),
        ISINV_STR("experiment.dataset", dataset_path),
        ISINV_STR("experiment.is_container", is_path),
        ISINV_STR("experiment.surrogate", surrogate_path),
        ISINV_STR("experiment.inverter", inverter_path),
        ISINV_UINT("experiment.max_out", max_out),
        ISINV_STR("experiment.output_dir", output_dir),
        ISINV_UINT("experiment.seed", seed),
        ISINV_UINT("experiment.max_samples", max_samples),
        ISINV_UINT("experiment.workers", workers),
        ISINV_BOOL("experiment.record_wall_time", record_wall_time),
        Field{"attack.kind", [](ExperimentConfig& c, const std::string& v) { c.attack = parse_attack_kind(v); },
              [](const ExperimentConfig& c) { return quote(attack_kind_name(c.attack)); }},
        ISINV_REAL("attack.lr", attack_cfg.lr),
        ISINV_UINT("attack.steps", attack_cfg.steps),
        ISINV_REAL("attack.lambda", attack_cfg.lambda),
        Field{"attack.distance",
              [](ExperimentConfig& c, const std::string& v) { c.attack_cfg.distance = parse_distance(v); },
              [](const ExperimentConfig& c) { return quote(distance_name(c.attack_cfg.distance)); }},
        Field{"attack.basis", [](ExperimentConfig& c, const std::string& v) { c.attack_cfg.basis = parse_basis_kind(v); },
              [](const ExperimentConfig& c) { return quote(basis_kind_name(c.attack_cfg.basis)); }},
        ISINV_REAL("attack.alpha", attack_cfg.alpha),
        ISINV_REAL("attack.temperature", attack_cfg.temperature),
        ISINV_REAL("attack.beta1", attack_cfg.beta1),
        ISINV_REAL("attack.beta2", attack_cfg.beta2),
        ISINV_REAL("attack.weight_decay", attack_cfg.weight_decay),
        ISINV_UINT("attack.seed", attack_cfg.seed),
        ISINV_UINT("attack.dm_features", attack_cfg.dm_features),
        ISINV_UINT("attack.dm_batch", attack_cfg.dm_batch),
        ISINV_UINT("attack.dm_hidden", attack_cfg.dm_hidden),
        ISINV_UINT("attack.checkpoint_interval", attack_cfg.checkpoint_interval),
        ISINV_REAL("attack.stop_loss", attack_cfg.stop_loss),
        ISINV_REAL("attack.explode_threshold", attack_cfg.explode_threshold),
        Field{"defense.kind", [](ExperimentConfig& c, const std::string& v) { c.defense.kind = parse_defense_kind(v); },
              [](const ExperimentConfig& c) { return quote(defense_kind_name(c.defense.kind)); }},
        ISINV_REAL("defense.p", defense.p),
        ISINV_REAL("defense.sigma", defense.sigma),
        ISINV_REAL("defense.epsilon", defense.epsilon),
        ISINV_REAL("defense.clip", defense.clip),
        Field{"defense.bits",
              [](ExperimentConfig& c, const std::string& v) { c.defense.bits = static_cast<int>(to_uint("defense.bits", v)); },
              [](const ExperimentConfig& c) { return std::to_string(c.defense.bits); }},
        ISINV_UINT("defense.seed", defense.seed),
        Field{"defense.sweep",
              [](ExperimentConfig& c, const std::string& v) {
                  c.defense_sweep.clear();
                  std::stringstream ss(v);
                  std::string item;
                  while (std::getline(ss, item, ',')) {
                      const auto b = item.find_first_not_of(" []");
                      const auto e = item.find_last_not_of(" []");
                      if (b == std::string::npos) continue;
                      c.defense_sweep.push_back(to_double("defense.sweep", item.substr(b, e - b + 1)));
                  }
              },
              [](const ExperimentConfig& c) {
                  std::string out = "[";
                  for (std::size_t i = 0; i < c.defense_sweep.size(); ++i) {
                      if (i) out += ", ";
                      out += fmt_double(c.defense_sweep[i]);
                  }
                  return out + "]";
              }},
        ISINV_REAL("metrics.tau_s", metrics.tau_s),
        ISINV_REAL("metrics.tau_tm", metrics.tau_tm),
    };
    return table;
}

#undef ISINV_STR
#undef ISINV_UINT
#undef ISINV_REAL
#undef ISINV_BOOL

std::string leaf_text(const toml::node& node, const std::string& key) {
    if (auto s = node.value<std::string>(); s && node.is_string()) return *s;
    if (node.is_integer()) return std::to_string(*node.value<std::int64_t>());
    if (node.is_floating_point()) return fmt_double(*node.value<double>());
    if (node.is_boolean()) return *node.value<bool>() ? "true" : "false";
    if (const auto* arr = node.as_array()) {
        std::string out;
        for (const auto& item : *arr) {
            if (!out.empty()) out += ",";
            out += leaf_text(item, key);
        }
        return out;
    }
    throw ConfigError(key + ": unsupported value type");
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

ExperimentConfig parse_experiment_config(const std::string& toml_text, const std::string& source) {
    toml::table root;
    try {
        root = toml::parse(toml_text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << source << ": " << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(os.str());
    }
    ExperimentConfig cfg;
    for (const auto& [section, node] : root) {
        const auto* table = node.as_table();
        if (table == nullptr) throw ConfigError("top-level key '" + std::string(section.str()) + "' must be a table");
        for (const auto& [name, value] : *table) {
            const std::string key = std::string(section.str()) + "." + std::string(name.str());
            set_config_value(cfg, key, leaf_text(value, key));
        }
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str(), path);
}

std::string to_toml(const ExperimentConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        const std::string key = f.key;
        const auto dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

}  // namespace isinv
