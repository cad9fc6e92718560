#pragma once

#include "eos/config.hpp"
#include "eos/criterion.hpp"
#include "eos/data.hpp"
#include "eos/dataset.hpp"
#include "eos/decomposition.hpp"
#include "eos/model.hpp"
#include "eos/parallel.hpp"
#include "eos/solver.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace eos::experiment {

namespace fs = std::filesystem;
using decomposition::DecompositionRecord;

struct DatasetSpec {
    std::string source = "dice";  // dice | cifar10 | csv | file
    std::vector<fs::path> paths;   // inputs for cifar10 / csv / file
    std::size_t dice_per_class = 512;
    std::uint64_t dice_seed = 1;
    data::DiceParams dice = data::DiceParams::defaults();
    double test_fraction = 0.5;  // held out before subsetting
    std::uint64_t split_seed = data::kSplitSeed;
    std::size_t num_classes = 0;  // csv only; 0 infers

    void validate() const;
};

// Training portion of the dataset described by `spec`.
LabeledDataset load_training_pool(const DatasetSpec& spec, const ExecOptions& exec = {});

struct ExperimentConfig {
    DatasetSpec dataset;
    criterion::Tag criterion = criterion::Tag::cross_entropy;
    std::vector<std::size_t> sizes{96};
    std::vector<std::uint64_t> init_seeds{1};
    std::vector<std::uint64_t> subset_seeds{1};
    std::size_t depth = 6;
    std::size_t width = 64;
    double gain = model::kEluGain;
    solver::SolverConfig solver;
    // Negative selects the criterion's default stop threshold.
    double loss_threshold = -1.0;
    fs::path output_dir = "eos_out";
    std::size_t grid_workers = 1;
    ExecOptions exec;

    void validate() const;
    double resolved_threshold() const;
    std::vector<std::size_t> widths(std::size_t input_dim, std::size_t num_classes) const;
};

// Reads the dataset.*, dice.*, criterion, experiment.*, model.*, solver.*,
// output.* and exec.* keys; absent keys keep their defaults.
ExperimentConfig experiment_config_from(const KeyValueConfig& kv);
KeyValueConfig to_key_values(const ExperimentConfig& config);

// ---- snapshots ----------------------------------------------------------

struct Snapshot {
    std::uint64_t step = 0;
    double t = 0.0;
    std::vector<std::size_t> widths;
    model::ParamVector params;

    model::MlpModel to_model() const;
    friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

void write_snapshot(const Snapshot& snap, const fs::path& path);
Snapshot read_snapshot(const fs::path& path);
fs::path snapshot_path(const fs::path& run_dir, std::size_t step);

// ---- grid ---------------------------------------------------------------

struct RunKey {
    std::size_t size = 0;
    std::uint64_t init_seed = 0;
    std::uint64_t subset_seed = 0;

    std::string name() const;
    friend auto operator<=>(const RunKey&, const RunKey&) = default;
};

struct ManifestEntry {
    RunKey key;
    std::string status;  // completed | diverged
    std::uint64_t hash = 0;
};

std::vector<ManifestEntry> read_manifest(const fs::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path);

// FNV-1a over the bytes of every regular file under dir, visited in sorted path order.
std::uint64_t hash_directory(const fs::path& dir);

struct RunOutcome {
    RunKey key;
    fs::path dir;
    std::string status;
    bool skipped = false;  // already present in the manifest
    std::size_t steps = 0;
    double final_loss = 0.0;
    std::string diagnostic;
};

using LogFn = std::function<void(const std::string&)>;

// Trains every (size, init seed, subset seed) combination. Completed runs are
// recorded in <output>/manifest.txt and skipped on re-invocation; a run with no
// manifest entry is recomputed from scratch. Divergent runs are recorded and
// the grid moves on.
std::vector<RunOutcome> run_experiment_grid(const ExperimentConfig& config, const LogFn& log = {});

// Trains one configuration into `run_dir` (created fresh).
RunOutcome run_single(const ExperimentConfig& config, const LabeledDataset& train, const RunKey& key,
                      const fs::path& run_dir, const LogFn& log = {});

void write_config(const ExperimentConfig& config, const fs::path& path);

// ---- analysis -----------------------------------------------------------

struct AnalysisOptions {
    double spectrum_tol = spectral::kAnalysisTol;
    std::size_t max_power_iters = 3000;
    ExecOptions exec;
};

// Full decomposition at one parameter point.
DecompositionRecord analyze_point(const model::MlpModel& model, const LabeledDataset& data,
                                  const criterion::CriterionKind& kind, std::size_t step, double t,
                                  const AnalysisOptions& opts = {});

// One record per readable snapshot of the run, ordered by step. Unreadable
// snapshots are skipped and reported through `log`.
std::vector<DecompositionRecord> analyze_snapshots(const fs::path& run_dir, const AnalysisOptions& opts = {},
                                                   const LogFn& log = {});

inline constexpr std::size_t kTransientSteps = 10;

struct TrimmedSeries {
    std::vector<DecompositionRecord> records;
    bool insufficient = false;  // nothing left after trimming
};

TrimmedSeries trim_transient(std::span<const DecompositionRecord> records, std::size_t first_step = kTransientSteps);

// Largest non-NaN value of field(record); NaN if there is none.
double peak(std::span<const DecompositionRecord> records,
            const std::function<double(const DecompositionRecord&)>& field);
double peak_p_delta_j1(std::span<const DecompositionRecord> records);

// ---- power law ----------------------------------------------------------

struct PowerLawPoint {
    double d = 0.0;
    double peak = 0.0;
};

struct PowerLawFit {
    double c1 = 0.0;
    double c2 = 0.0;
    double r_squared = 0.0;
    std::vector<PowerLawPoint> points;
};

// Least squares of log(peak) = log c1 + c2·log D.
PowerLawFit fit_power_law(std::span<const PowerLawPoint> points);

enum class PeakAggregation { mean_per_size, max_per_size, pooled };

PeakAggregation parse_aggregation(const std::string& name);
const char* to_string(PeakAggregation mode) noexcept;

std::vector<PowerLawPoint> aggregate_peaks(std::span<const PowerLawPoint> per_run, PeakAggregation mode);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

void write_power_law_report(const PowerLawFit& fit, const fs::path& path, const std::string& title = {});

struct RunPeak {
    RunKey key;
    fs::path dir;
    double peak = 0.0;          // max trimmed P^1_{Δ,J}, NaN when unavailable
    std::size_t records = 0;
    bool insufficient = false;
};

struct GridAnalysis {
    std::vector<RunPeak> runs;
    std::vector<PowerLawPoint> points;  // after aggregation
    std::optional<PowerLawFit> fit;     // when at least 3 distinct sizes have finite positive peaks
    double spearman = 0.0;              // between D and the aggregated peak
};

// Analyzes every completed run listed in the grid manifest, writes
// <run>/metrics.csv, and fits the peak alignment against dataset size.
GridAnalysis analyze_grid(const fs::path& output_dir, const AnalysisOptions& opts = {},
                          PeakAggregation mode = PeakAggregation::mean_per_size, const LogFn& log = {});

// ---- metrics CSV --------------------------------------------------------

std::vector<std::string> metrics_columns(std::size_t depth);

// depth is taken from the records when there are any.
void emit_metrics_csv(std::span<const DecompositionRecord> records, const fs::path& path, std::size_t depth = 0);
std::vector<DecompositionRecord> parse_metrics_csv(const fs::path& path);

struct MetricsTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::optional<std::size_t> column(const std::string& name) const;
};

MetricsTable read_metrics_table(const fs::path& path);

std::string format_double(double v);

}  // namespace eos::experiment
