#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "isinv/harness/config.hpp"
#include "isinv/metrics/metrics.hpp"

namespace isinv {

struct ReportRow {
    std::string sample_id;
    std::string attack;
    std::string defense;
    std::size_t layer = 0;
    ScoreRow scores;
    double wall_time = 0.0;
    /// Loss of the returned reconstruction; unset for attacks without a loss.
    std::optional<double> loss_final;
    std::string error;

    std::string candidate;
    std::string reference;
    bool exploded = false;
    std::size_t steps_run = 0;
    /// (step, loss) pairs thinned to at most kTracePoints entries.
    std::vector<std::pair<std::size_t, double>> loss_trace;
};

inline constexpr std::size_t kTracePoints = 100;

struct ConditionSummary {
    std::string attack;
    std::string defense;
    std::size_t layer = 0;
    std::size_t n = 0;
    std::size_t errors = 0;
    MeanSem cs, bleu, rouge, em, f1;
    double success_rate = 0.0;
};

struct ExperimentReport {
    /// Sample-major; within a sample, sweep values in configured order.
    std::vector<ReportRow> rows;
    std::vector<ConditionSummary> summary;
    std::size_t skipped_lines = 0;

    bool has_errors() const;
    /// 0 when every row succeeded, 1 when some row carries an error.
    int exit_code() const;
};

/// Runs the configured attack on every sample. Configuration and loading
/// problems throw; failures inside one sample become an annotated row.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Label of the defense condition, e.g. "laplace_dp(epsilon=100)".
std::string defense_label(const DefenseConfig& cfg);
/// The defense with its main knob set to `value`.
DefenseConfig with_sweep_value(DefenseConfig cfg, double value);

std::vector<ConditionSummary> summarize(const std::vector<ReportRow>& rows);

inline constexpr const char* kReportColumns =
    "sample_id,attack,defense,layer,cs,bleu,rouge,em,f1,wall_time,loss_final,success,error";

/// Scores are written as percentages.
std::string report_csv(const ExperimentReport& report);
std::string report_json(const ExperimentReport& report, const ExperimentConfig& cfg);

/// Writes report.csv and report.json under cfg.output_dir.
void write_report(const ExperimentReport& report, const ExperimentConfig& cfg);

}  // namespace isinv
