#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "padapt/adapt.hpp"
#include "padapt/config.hpp"

namespace padapt {

struct DomainStat {
    int domain_index = 0;
    std::string corruption;
    int severity = 0;
    int round = 1;
    int batches = 0;
    double mean_error = 0.0;
    double source_mean_error = 0.0;
};

struct DetectorStats {
    int batches = 0;
    int boundaries = 0;          // interior true domain boundaries
    int detected_within_2 = 0;   // boundaries with a trigger at most 2 batches later
    int detections = 0;
    int false_triggers = 0;      // triggers not within 2 batches after any boundary
};

struct RunSummary {
    std::uint64_t seed = 7;
    double mean_error = 0.0;
    double source_mean_error = 0.0;
    double gain_pp = 0.0;  // (source - adapted) * 100, percentage points
    std::vector<DomainStat> domains;
    std::vector<double> round_means;  // rounds schedule only, index = round - 1
    std::vector<double> source_round_means;
    DetectorStats detector;
    double mean_loss_dsp = 0.0;
    double mean_loss_dap = 0.0;
    double mean_loss_penalty = 0.0;
    std::string model_checksum;
    std::string schedule_kind;
    nlohmann::json config;
};

struct AdaptRunResult {
    MetricsLog log;
    std::vector<double> source_errors;  // per batch, aligned with log.rows
    RunSummary summary;
    PromptPair prompts;  // student prompts at end of run
};

// In-process benchmark runner shared by the CLI and the acceptance suite.
AdaptRunResult run_adaptation(const RunConfig& cfg, const Classifier& frozen, const GlyphDataset& train,
                              const GlyphDataset& test);

RunSummary summarize(const RunConfig& cfg, const Classifier& frozen, const MetricsLog& log,
                     const std::vector<double>& source_errors);

std::string metrics_csv(const MetricsLog& log);
std::string events_csv(const MetricsLog& log);
nlohmann::json summary_json(const RunSummary& summary);
std::string report_text(const RunSummary& summary);

void write_text_file(const std::filesystem::path& path, const std::string& bytes);

// Evaluation over a dataset in fixed-size chunks (bounds tape memory).
double dataset_error(const Classifier& model, const Tensor& images, const std::vector<int>& labels,
                     int chunk = 100);

// Prompt serialization (same container format as classifier checkpoints).
void save_prompts(const std::filesystem::path& path, const PromptPair& pair);
PromptPair load_prompts(const std::filesystem::path& path);

// CLI command bodies. Each throws (ConfigError / MissingArtifactError /
// NumericError); the CLI maps exceptions to exit codes.
void cmd_gen_data(const RunConfig& cfg);
void cmd_train_source(const RunConfig& cfg, bool force);
void cmd_adapt(const RunConfig& cfg);
void cmd_sweep(const RunConfig& cfg);
void cmd_report(const std::vector<std::string>& run_dirs, const std::filesystem::path& out_dir);

}  // namespace padapt
