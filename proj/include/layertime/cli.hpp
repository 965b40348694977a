/// Experiment front end: flat `key = value` run configurations, single-run
/// execution with on-disk artifacts (training log, run summary, final
/// controls, plot-ready curve), multi-seed hyperparameter sweeps with summary
/// statistics, and curve emission from existing logs.

#ifndef LAYERTIME_CLI_HPP
#define LAYERTIME_CLI_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "layertime/data.hpp"
#include "layertime/nested.hpp"
#include "layertime/optimizer.hpp"

namespace layertime {

/// A problem with the run configuration itself (parse failure, unknown key,
/// out-of-range or inconsistent fields). The command-line front end maps this
/// to exit status 2; genuine runtime failures exit with status 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Where the training data comes from: the seeded synthetic generator or a
/// tabular CSV file.
struct DataConfig {
    enum class Source { generated, csv };

    Source source = Source::generated;
    std::uint64_t seed = 0;  // generated only
    int samples = 2000;      // generated only: rows drawn before splitting
    std::string path;        // csv only
    LabelMode label_mode = LabelMode::index; // csv only
    bool normalize = false;  // csv only: per-column min-max to [0,1]
};

/// Everything needed to reproduce one training run. Parsed from a flat
/// `key = value` file with dotted section prefixes; unknown keys are errors.
struct RunConfig {
    NetworkShape network; // finest grid
    Hyperparameters hyper;
    NestedSchedule schedule;
    OptimizerConfig optimizer; // mode and seconds_per_unit filled at run time
    MgritSettings mgrit;
    DataConfig data;

    int train_count = 1000;
    int val_count = 1000;
    std::uint64_t split_seed = 0;

    std::uint64_t seed = 0; // controls initialization
    OptimizerConfig::Mode mode = OptimizerConfig::Mode::nested;
    int non_nested_iterations = 0; // non-nested mode only
    int probe_iterations = 3;      // work-unit calibration probes
    std::optional<double> seconds_per_unit; // unset: calibrate before training
    std::string out_dir = "out";

    /// Cross-field consistency; throws ConfigError naming the field.
    void validate() const;

    /// Canonical flat key = value form; parsing it back yields an identical
    /// validated configuration (the round-trip identity behind summary.json).
    std::map<std::string, std::string> to_flat_map() const;
};

RunConfig parse_run_config_text(const std::string& text, const std::string& source_name);
RunConfig load_run_config(const std::string& path);

/// Re-reads the `config` object embedded in a summary.json.
RunConfig run_config_from_summary(const std::string& summary_path);

/// Command-line overrides applied on top of the config file.
struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> mode; // "nested" | "non-nested"
    std::optional<double> seconds_per_unit;
};

void apply_overrides(RunConfig& config, const CliOverrides& overrides);

/// In-memory result of one run; artifact writing is separate.
struct RunResult {
    ControlTrajectory theta;
    TrainingLog log;
    double seconds_per_unit = 0.0;
    double final_objective = 0.0;
    double final_train_acc = 0.0;
    double final_val_acc = 0.0;
};

RunResult execute_run(const RunConfig& config, WorkerPool& pool);

/// Writes log.csv, summary.json, controls.bin, and curve.csv under
/// config.out_dir. Every file is written to a temporary name and renamed, so
/// artifacts are either complete or absent.
void write_run_artifacts(const RunConfig& config, const RunResult& result);

/// Final-controls binary: magic "LTCT", version, shape header, then the
/// parameter blocks as little-endian f64 in field order.
void save_controls(const ControlTrajectory& theta, const std::string& path);
ControlTrajectory load_controls(const std::string& path);

/// Plot-ready projection of a training log: one row per record of
/// (work_units, objective, train_acc, val_acc, level).
void write_curve_csv(const TrainingLog& log, std::ostream& out);

/// Parses a log.csv produced by write_training_log_csv; malformed content
/// raises errors naming the line. Header comments are skipped.
TrainingLog parse_training_log_csv(std::istream& in, const std::string& source_name);

/// Reads a log.csv and writes its curve.csv; the log must hold at least one
/// record.
void emit_curve(const std::string& log_path, const std::string& curve_path);

/// One cell of a sweep: a grid-override combination run at one seed.
struct SweepCell {
    std::string label; // "key=value,..." or "base" for an empty grid
    std::uint64_t seed = 0;
    bool ok = false;
    double val_acc = 0.0;
    double train_acc = 0.0;
    double objective = 0.0;
    std::string error;
};

struct SweepStats {
    int n = 0;
    double mean = 0.0;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
    double stddev = 0.0; // sample convention (n - 1); 0 when n < 2
};

SweepStats summarize(const std::vector<double>& values);

struct SweepSummary {
    std::vector<SweepCell> cells;
    std::vector<std::pair<std::string, SweepStats>> per_config; // grid order
    SweepStats pooled; // across every successful run
};

/// Cartesian product of grid overrides and seeds, each executed as a full
/// run with artifacts under <out>/<combo>/seed_<n>/. Individual failures are
/// recorded and skipped; if every run fails the sweep itself fails. jobs > 1
/// executes that many runs concurrently, each with its own worker pool and
/// output directory (no shared mutable state).
SweepSummary execute_sweep(const RunConfig& base,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& grid,
                           const std::vector<std::uint64_t>& seeds, WorkerPool& pool,
                           int jobs = 1);

void write_sweep_raw_csv(const SweepSummary& summary, std::ostream& out);
void write_sweep_summary_csv(const SweepSummary& summary, std::ostream& out);

/// Writes sweep_raw.csv and sweep_summary.csv under the base config's
/// output directory.
void write_sweep_artifacts(const RunConfig& base, const SweepSummary& summary);

} // namespace layertime

#endif // LAYERTIME_CLI_HPP
