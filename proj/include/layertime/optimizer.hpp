/// One-shot training loop: every optimization iteration runs budgeted
/// layer-parallel forward and backward solves, assembles an inexact gradient,
/// and takes a backtracking gradient-descent step. Also the cascadic driver
/// that trains coarse-to-fine, the non-nested baseline, work-unit
/// calibration, and the training-log CSV writer.

#ifndef LAYERTIME_OPTIMIZER_HPP
#define LAYERTIME_OPTIMIZER_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "layertime/mgrit.hpp"
#include "layertime/nested.hpp"
#include "layertime/network.hpp"
#include "layertime/serial.hpp"
#include "layertime/threading.hpp"

namespace layertime {

struct OptimizerConfig {
    enum class Mode { nested, non_nested };

    double step_init = 1.0;              // first trial step of the line search
    double armijo_c = 1e-4;              // sufficient-decrease constant
    double shrink = 0.5;                 // backtracking factor
    int max_backtracks = 20;
    std::optional<double> rel_tol_mgrit; // unset: solves run their full budget
    Mode mode = Mode::nested;

    // Warm start for the line search: each search opens at
    // max(step_init, step_grow * last accepted step), so accepted steps can
    // ratchet the opening trial up but never below step_init. At 1.0 every
    // opening is exactly step_init (a plain restarted search).
    double step_grow = 1.0;

    // Plumbing beyond the optimizer proper: the wall-seconds value of one
    // work unit (from calibrate_work_unit), and a diagnostic switch that
    // evaluates line-search trials by serial propagation instead of budgeted
    // multigrid solves.
    double seconds_per_unit = 1.0;
    bool serial_trial_objective = false;

    void validate() const;
};

/// One row of the training log. `objective`, `train_acc`, and `val_acc`
/// describe the accepted iterate; `objective_before` is the same iterate's
/// pre-step objective so the accepted sufficient-decrease inequality
/// objective <= objective_before - armijo_c * step_size * grad_norm^2
/// can be re-checked from the log alone.
struct TrainingRecord {
    int iteration = 0;          // global index across all levels
    int level = 0;              // grid level, 0 = finest
    double work_units = 0.0;    // cumulative wall_seconds / seconds_per_unit
    double objective = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    int d_used = 0;             // multigrid iteration budget of this step
    double fwd_residual = 0.0;  // final relative residual of the forward solve
    double bwd_residual = 0.0;
    double step_size = 0.0;     // accepted Armijo step, 0 on a stall
    double wall_seconds = 0.0;  // this iteration only
    double grad_norm = 0.0;
    double objective_before = 0.0;
    bool stalled = false;       // backtracking exhausted; zero step accepted
};

/// Marker written when training moves to a 2x finer layer grid.
struct RefinementEvent {
    int level = 0;      // level being entered (level 0 = finest)
    int n_layers = 0;   // layer count after refinement
    std::string interpolation;
    double wall_seconds = 0.0;
};

struct TrainingLog {
    std::vector<TrainingRecord> records;
    std::vector<RefinementEvent> refinements;

    double total_work_units() const {
        return records.empty() ? 0.0 : records.back().work_units;
    }
};

/// CSV serialization: `# key = value` header comments echoing the line-search
/// configuration, one header row, then one row per record in field order.
void write_training_log_csv(const TrainingLog& log, const OptimizerConfig& config,
                            std::ostream& out);

/// Training set plus held-out validation set; each is one deterministic
/// full batch.
struct TrainingData {
    Batch train;
    Batch validation;
};

struct ArmijoResult {
    double step = 0.0;       // accepted step, 0 if exhausted
    double objective = 0.0;  // trial objective at the accepted step
    int backtracks = 0;      // rejected trials before acceptance
    bool accepted = false;
};

/// Backtracking line search on the steepest-descent ray: tries
/// step_init * shrink^k and accepts the first f(alpha) <= f0 - c * alpha * g2
/// with g2 the squared gradient norm. Exhaustion is reported, not thrown.
ArmijoResult armijo_search(double f0, double grad_norm_sq, const OptimizerConfig& config,
                           const std::function<double(double)>& trial_objective);

/// One optimization iteration at fixed multigrid budget d: budgeted forward
/// and backward solves (warm-started when trajectories are supplied), then an
/// Armijo step along the negative gradient with trial objectives from
/// d-budget warm-started forward solves. Fills the solver-side record fields;
/// iteration/level/accuracy/wall-clock fields are the caller's.
struct StepOutcome {
    ControlTrajectory theta;
    StateTrajectory states;     // forward trajectory at the returned theta
    AdjointTrajectory adjoint;  // costates at the pre-step theta
    TrainingRecord record;
};

StepOutcome one_shot_step(const ControlTrajectory& theta, const Batch& batch, int d_budget,
                          const Hyperparameters& hyper, const MgritSettings& mgrit,
                          const OptimizerConfig& config, WorkerPool& pool,
                          const StateTrajectory* warm_states = nullptr,
                          const AdjointTrajectory* warm_adjoint = nullptr);

/// m one-shot iterations on one grid level, threading warm starts from step
/// to step and appending one record per iteration (accuracies evaluated by
/// serial propagation). d_policy maps the iteration index within this level
/// to the multigrid budget. step_carry, when given, holds the line-search
/// warm start (last accepted step) on entry and exit so it survives grid
/// refinements; when null each level starts from config.step_init.
struct TrainOutcome {
    ControlTrajectory theta;
    StateTrajectory states;
    AdjointTrajectory adjoint;
};

TrainOutcome train_level(const ControlTrajectory& theta, int m, int level,
                         const std::function<int(int)>& d_policy, const TrainingData& data,
                         const Hyperparameters& hyper, const MgritSettings& mgrit,
                         const OptimizerConfig& config, WorkerPool& pool, TrainingLog& log,
                         const StateTrajectory* warm_states = nullptr,
                         const AdjointTrajectory* warm_adjoint = nullptr,
                         double* step_carry = nullptr);

struct TrainRunResult {
    ControlTrajectory theta;
    TrainingLog log;
};

/// Cascadic training: initialize on the coarsest grid, train, interpolate
/// controls (and warm-start states, piece-wise constant) to the next finer
/// grid, and repeat down to level 0. `finest` describes the level-0 network
/// and must have schedule.finest_layers() residual layers.
TrainRunResult nested_train(const NetworkShape& finest, const NestedSchedule& schedule,
                            const Hyperparameters& hyper, const TrainingData& data,
                            const OptimizerConfig& config, const MgritSettings& mgrit,
                            std::uint64_t seed, WorkerPool& pool);

/// Baseline: initialize directly on the finest grid and run m iterations at
/// the steady-state budget. m = 0 returns the initialization unchanged.
TrainRunResult train_non_nested(const NetworkShape& finest, int m, const Hyperparameters& hyper,
                                const TrainingData& data, const OptimizerConfig& config,
                                const MgritSettings& mgrit, int d_budget, std::uint64_t seed,
                                WorkerPool& pool);

/// Measures the wall-seconds cost of one non-nested fine-grid iteration by
/// running probe_iters (>= 3) of them on a fresh initialization and
/// averaging. Work units in all logs are wall seconds divided by this value.
double calibrate_work_unit(const NetworkShape& finest, const Hyperparameters& hyper,
                           const TrainingData& data, const OptimizerConfig& config,
                           const MgritSettings& mgrit, int d_budget, int probe_iters,
                           std::uint64_t seed, WorkerPool& pool);

} // namespace layertime

#endif // LAYERTIME_OPTIMIZER_HPP
