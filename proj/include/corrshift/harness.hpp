#pragma once

#include "corrshift/cmnist.hpp"
#include "corrshift/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace corrshift {

enum class ExperimentKind { synthA, synthB, cmnist_shift, ood_eval, prop1, closed_form };
enum class Method { correlation, vanilla, clp, gaussian_noise, pgd };

std::string to_string(ExperimentKind kind);
std::string to_string(Method method);

/// Every key with its default value. Loaded configs may only use these keys,
/// with the same value types.
const nlohmann::json& default_config();

/// Merge `overrides` into the defaults, rejecting unknown keys and type
/// mismatches with ConfigError naming the dotted key.
nlohmann::json resolve_config(const nlohmann::json& overrides);

/// Parse a JSON config file (ConfigError if unreadable or malformed).
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Apply one `dotted.key=value` override. The value is parsed as JSON when it
/// is valid JSON and taken as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Typed view of a resolved config.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::synthA;
    Method method = Method::vanilla;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;
    nlohmann::json resolved;

    ModelSpec model;
    RegularizedObjectiveConfig objective;
    BaselineRegSpec baseline;
    TrainConfig train;
    std::string early_stop_split;

    static ExperimentConfig from_json(const nlohmann::json& resolved);
};

/// FNV-1a over the canonical dump of the config without `output_dir`.
std::string config_hash(const nlohmann::json& resolved);

struct SplitBest {
    double accuracy = 0.0;
    std::size_t epoch = 0;
};

struct RunRecord {
    std::string config_hash;
    std::vector<MetricsRow> rows;
    std::map<std::string, SplitBest> best;
    /// Epoch of the selected checkpoint (early-stop split, else the last).
    std::optional<std::size_t> checkpoint_id;
    std::string early_stop_split;
    std::vector<std::size_t> checkpoints;
    double wall_clock_seconds = 0.0;
    nlohmann::json extra;

    /// Recompute `best` and `checkpoint_id` from the rows.
    void summarize();
    /// Throws Error if `best`/`checkpoint_id` disagree with the rows.
    void verify() const;
    nlohmann::json summary_json() const;
};

/// Checkpoint with the best accuracy on `split`; ties go to the earliest.
std::size_t early_stop_select(const RunRecord& record, const std::string& split);

struct SavedCheckpoint {
    Model model;
    std::size_t epoch = 0;
    std::uint64_t seed = 0;
    nlohmann::json config;
};

/// param_<i>.bin (f64 tensors) plus manifest.json with the model spec, sample
/// shape, epoch, seed and resolved config.
void save_checkpoint(const std::filesystem::path& dir, const Model& model, std::size_t epoch, std::uint64_t seed,
                     const nlohmann::json& config);
SavedCheckpoint load_checkpoint(const std::filesystem::path& dir);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Header `epoch,split,loss,accuracy`; values printed with round-trip precision.
std::string metrics_csv(std::span<const MetricsRow> rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

/// Sample the configured synthetic dataset into x.bin, y.bin and spec.json.
void generate_synthetic(const ExperimentConfig& cfg);

/// Build the C-MNIST corpus from the IDX files and save it to cfg.output_dir.
CMnistCorpus generate_cmnist_corpus(const ExperimentConfig& cfg);

/// Solve the regularized normal equations and write theta.json. Returns the
/// JSON written.
nlohmann::json solve_closed_form(const ExperimentConfig& cfg);

/// Run one experiment end to end, writing config.json, metrics.csv,
/// summary.json and experiment-specific outputs into cfg.output_dir.
RunRecord run_experiment(const ExperimentConfig& cfg);

struct SweepRow {
    std::string config_id;
    std::string method;
    double best_accuracy = 0.0;
    bool failed = false;
    std::string error;
};

struct SweepSpec {
    nlohmann::json base;
    /// Each entry: id plus overrides applied on top of `base`.
    std::vector<std::pair<std::string, nlohmann::json>> runs;
    /// Split whose best accuracy ranks the table.
    std::string metric_split = "test";
};

/// {"base": {...}, "metric_split": "test", "runs": [{"id": .., "set": {..}}],
///  "grid": {"id_prefix": .., "set": {..}, "axes": {"objective.beta": [..], ...}}}
SweepSpec parse_sweep(const nlohmann::json& j);

/// Runs every config (up to `jobs` at once), each in output_dir/<id>. Failed
/// runs are kept as failed rows. Sorted by best accuracy, descending, failed
/// rows last.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const std::filesystem::path& output_dir, std::size_t jobs);
std::string sweep_csv(std::span<const SweepRow> rows);

/// Exit codes of the command-line tool.
enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_usage = 2,
    exit_config = 3,
    exit_missing_data = 4,
    exit_diverged = 5,
};

/// Entry point of the `corrshift` tool.
int cli_dispatch(int argc, const char* const* argv);

} // namespace corrshift
