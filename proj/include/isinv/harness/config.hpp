#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "isinv/attacks/attacks.hpp"
#include "isinv/defenses/defenses.hpp"
#include "isinv/metrics/metrics.hpp"

namespace isinv {

enum class AttackKind { none, ts, er, tbs, transfer, generate };

AttackKind parse_attack_kind(const std::string& name);
const char* attack_kind_name(AttackKind kind);

struct ExperimentConfig {
    std::string model_path;
    std::size_t layer = 1;
    AttackKind attack = AttackKind::tbs;
    AttackConfig attack_cfg;
    DefenseConfig defense;
    /// Values for the defense's main knob (p, sigma, epsilon or bits); one
    /// report row per (sample, value). Empty runs the single configured value.
    std::vector<double> defense_sweep;
    std::string dataset_path;
    /// Optional ISC1 container; its frames replace locally computed states.
    std::string is_path;
    /// Model attacked in place of the victim for `transfer`.
    std::string surrogate_path;
    /// Trained inverter for `generate`.
    std::string inverter_path;
    std::size_t max_out = 64;
    MetricsConfig metrics;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    std::size_t max_samples = 0;
    std::size_t workers = 1;
    /// Wall time makes reports non-reproducible, so it is written as 0 unless set.
    bool record_wall_time = false;

    /// Structural checks only; paths are checked by check_paths.
    void validate() const;
    void check_paths() const;
};

/// Reads a TOML file; missing keys keep their defaults, unknown keys are errors.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& toml_text, const std::string& source = "<string>");

/// Sets one field by its dotted TOML name, e.g. "attack.lr" = "1e-3".
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Every dotted key accepted by set_config_value, in canonical order.
std::vector<std::string> config_keys();

/// Canonical TOML rendering (round-trips through parse_experiment_config).
std::string to_toml(const ExperimentConfig& cfg);

}  // namespace isinv
