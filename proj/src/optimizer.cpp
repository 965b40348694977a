#include "layertime/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <utility>

namespace layertime {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
}

/// Shortest decimal form that round-trips the double exactly, so logged
/// values can be compared and re-checked bit for bit after parsing.
std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double accuracy_by_serial(const ControlTrajectory& theta, const Batch& batch, double eps) {
    StateTrajectory states = forward_serial(theta, batch, eps);
    Matrix probabilities;
    predict(states.final_state(), theta.classify_w, theta.classify_b, probabilities);
    return classification_accuracy(probabilities, batch.labels);
}

} // namespace

void OptimizerConfig::validate() const {
    if (!(step_init > 0.0)) throw std::logic_error("OptimizerConfig: step_init must be positive");
    if (!(armijo_c > 0.0 && armijo_c < 1.0))
        throw std::logic_error("OptimizerConfig: armijo_c must lie in (0, 1)");
    if (!(shrink > 0.0 && shrink < 1.0))
        throw std::logic_error("OptimizerConfig: shrink must lie in (0, 1)");
    if (max_backtracks < 0)
        throw std::logic_error("OptimizerConfig: max_backtracks must be >= 0");
    if (!(step_grow >= 1.0))
        throw std::logic_error("OptimizerConfig: step_grow must be >= 1");
    if (rel_tol_mgrit && !(*rel_tol_mgrit > 0.0))
        throw std::logic_error("OptimizerConfig: rel_tol_mgrit must be positive when set");
    if (!(seconds_per_unit > 0.0))
        throw std::logic_error("OptimizerConfig: seconds_per_unit must be positive");
}

void write_training_log_csv(const TrainingLog& log, const OptimizerConfig& config,
                            std::ostream& out) {
    out << "# step_init = " << format_double(config.step_init) << "\n"
        << "# armijo_c = " << format_double(config.armijo_c) << "\n"
        << "# shrink = " << format_double(config.shrink) << "\n"
        << "# max_backtracks = " << config.max_backtracks << "\n";
    out << "iteration,level,work_units,objective,train_acc,val_acc,d_used,"
           "fwd_residual,bwd_residual,step_size,wall_seconds,grad_norm,"
           "objective_before,stalled\n";
    for (const TrainingRecord& r : log.records) {
        out << r.iteration << ',' << r.level << ',' << format_double(r.work_units) << ','
            << format_double(r.objective) << ',' << format_double(r.train_acc) << ','
            << format_double(r.val_acc) << ',' << r.d_used << ','
            << format_double(r.fwd_residual) << ',' << format_double(r.bwd_residual) << ','
            << format_double(r.step_size) << ',' << format_double(r.wall_seconds) << ','
            << format_double(r.grad_norm) << ',' << format_double(r.objective_before) << ','
            << (r.stalled ? 1 : 0) << '\n';
    }
}

ArmijoResult armijo_search(double f0, double grad_norm_sq, const OptimizerConfig& config,
                           const std::function<double(double)>& trial_objective) {
    ArmijoResult result;
    double alpha = config.step_init;
    for (int k = 0; k <= config.max_backtracks; ++k) {
        const double f = trial_objective(alpha);
        if (f <= f0 - config.armijo_c * alpha * grad_norm_sq) {
            result.step = alpha;
            result.objective = f;
            result.backtracks = k;
            result.accepted = true;
            return result;
        }
        alpha *= config.shrink;
    }
    result.objective = f0;
    result.backtracks = config.max_backtracks + 1;
    return result;
}

StepOutcome one_shot_step(const ControlTrajectory& theta, const Batch& batch, int d_budget,
                          const Hyperparameters& hyper, const MgritSettings& mgrit,
                          const OptimizerConfig& config, WorkerPool& pool,
                          const StateTrajectory* warm_states,
                          const AdjointTrajectory* warm_adjoint) {
    if (d_budget < 1) throw std::logic_error("one_shot_step: d_budget must be >= 1");
    SolveBudget budget;
    budget.max_iters = d_budget;
    budget.rel_tol = config.rel_tol_mgrit;

    ForwardSolveResult fwd = solve_forward(theta, batch, hyper, mgrit, budget, warm_states, pool);
    BackwardSolveResult bwd =
        solve_backward(theta, fwd.states, batch, hyper, mgrit, budget, warm_adjoint, pool);

    const std::vector<double> flat = theta.flatten();
    const std::vector<double> grad = bwd.grad.flatten();
    double grad_norm_sq = 0.0;
    for (double g : grad) grad_norm_sq += g * g;

    StepOutcome out;
    out.adjoint = std::move(bwd.adjoint);
    TrainingRecord& rec = out.record;
    rec.d_used = d_budget;
    rec.fwd_residual = fwd.status.final_relative_residual;
    rec.bwd_residual = bwd.status.final_relative_residual;
    rec.objective_before = bwd.objective;
    rec.grad_norm = std::sqrt(grad_norm_sq);

    if (grad_norm_sq == 0.0) {
        // Stationary point of the sampled gradient: the step is a no-op and
        // every trial would cost a solve, so accept step_init outright.
        out.theta = theta;
        out.states = std::move(fwd.states);
        rec.step_size = config.step_init;
        rec.objective = bwd.objective;
        return out;
    }

    ControlTrajectory trial_theta;
    StateTrajectory trial_states;
    bool have_trial_states = false;
    std::vector<double> moved(flat.size());
    auto trial_objective = [&](double alpha) {
        for (std::size_t i = 0; i < flat.size(); ++i) moved[i] = flat[i] - alpha * grad[i];
        trial_theta = ControlTrajectory::unflatten(theta.shape, moved);
        if (config.serial_trial_objective) {
            have_trial_states = false;
            return objective(trial_theta, batch, hyper);
        }
        ForwardSolveResult trial =
            solve_forward(trial_theta, batch, hyper, mgrit, budget, &fwd.states, pool);
        trial_states = std::move(trial.states);
        have_trial_states = true;
        return mean_loss(trial_states.final_state(), batch.labels, trial_theta.classify_w,
                         trial_theta.classify_b) +
               regularizer_value(trial_theta, hyper);
    };

    const ArmijoResult search = armijo_search(bwd.objective, grad_norm_sq, config, trial_objective);
    if (search.accepted) {
        out.theta = std::move(trial_theta);
        // Serial trial evaluation leaves no fine-grid trajectory behind; hand
        // back the pre-step states as a (stale but valid) warm start.
        out.states = have_trial_states ? std::move(trial_states) : std::move(fwd.states);
        rec.step_size = search.step;
        rec.objective = search.objective;
    } else {
        out.theta = theta;
        out.states = std::move(fwd.states);
        rec.step_size = 0.0;
        rec.objective = bwd.objective;
        rec.stalled = true;
    }
    return out;
}

TrainOutcome train_level(const ControlTrajectory& theta, int m, int level,
                         const std::function<int(int)>& d_policy, const TrainingData& data,
                         const Hyperparameters& hyper, const MgritSettings& mgrit,
                         const OptimizerConfig& config, WorkerPool& pool, TrainingLog& log,
                         const StateTrajectory* warm_states,
                         const AdjointTrajectory* warm_adjoint, double* step_carry) {
    if (m < 1) throw std::logic_error("train_level: need at least one iteration");
    config.validate();
    data.train.validate();
    data.validation.validate();

    TrainOutcome out;
    out.theta = theta;
    const StateTrajectory* ws = warm_states;
    const AdjointTrajectory* wa = warm_adjoint;
    double last_step = step_carry ? *step_carry : config.step_init;
    OptimizerConfig step_config = config;
    for (int i = 0; i < m; ++i) {
        const auto started = Clock::now();
        step_config.step_init = std::max(config.step_init, last_step * config.step_grow);
        StepOutcome step = one_shot_step(out.theta, data.train, d_policy(i), hyper, mgrit,
                                         step_config, pool, ws, wa);
        if (!step.record.stalled && step.record.step_size > 0.0)
            last_step = step.record.step_size;
        out.theta = std::move(step.theta);
        out.states = std::move(step.states);
        out.adjoint = std::move(step.adjoint);
        ws = &out.states;
        wa = &out.adjoint;

        TrainingRecord rec = step.record;
        rec.train_acc = accuracy_by_serial(out.theta, data.train, hyper.eps_relu);
        rec.val_acc = data.validation.size() > 0
                          ? accuracy_by_serial(out.theta, data.validation, hyper.eps_relu)
                          : std::numeric_limits<double>::quiet_NaN();
        rec.iteration = static_cast<int>(log.records.size());
        rec.level = level;
        rec.wall_seconds = seconds_between(started, Clock::now());
        rec.work_units = log.total_work_units() + rec.wall_seconds / config.seconds_per_unit;
        log.records.push_back(std::move(rec));
    }
    if (step_carry) *step_carry = last_step;
    return out;
}

TrainRunResult nested_train(const NetworkShape& finest, const NestedSchedule& schedule,
                            const Hyperparameters& hyper, const TrainingData& data,
                            const OptimizerConfig& config, const MgritSettings& mgrit,
                            std::uint64_t seed, WorkerPool& pool) {
    schedule.validate();
    config.validate();
    if (finest.n_layers != schedule.finest_layers())
        throw std::logic_error("nested_train: finest grid has " + std::to_string(finest.n_layers) +
                               " layers but the schedule refines to " +
                               std::to_string(schedule.finest_layers()));

    const NetworkShape coarsest = NetworkShape::make(finest.n_f, finest.w, finest.n_c,
                                                     schedule.n_coarsest, finest.final_time);
    TrainRunResult run;
    ControlTrajectory theta = init_controls(coarsest, hyper, seed);
    std::optional<StateTrajectory> warm_states;
    std::optional<AdjointTrajectory> warm_adjoint;
    double step_carry = config.step_init; // line-search warm start survives refinement

    for (int level = schedule.levels - 1; level >= 0; --level) {
        const bool refined_into = level < schedule.levels - 1;
        auto policy = [&schedule, refined_into](int i) {
            return d_for_iteration(refined_into ? i : -1, schedule);
        };
        TrainOutcome out;
        try {
            out = train_level(theta, schedule.iterations_at(level), level, policy, data, hyper,
                              mgrit, config, pool, run.log,
                              warm_states ? &*warm_states : nullptr,
                              warm_adjoint ? &*warm_adjoint : nullptr, &step_carry);
        } catch (const std::exception& e) {
            throw std::runtime_error("nested level " + std::to_string(level) + ": " + e.what());
        }
        if (level > 0) {
            const auto started = Clock::now();
            theta = interpolate_controls(out.theta, schedule.interpolation);
            warm_states = interpolate_states_constant(out.states);
            // Costates belong to the old grid; the first post-refinement
            // backward solve starts cold.
            warm_adjoint.reset();
            RefinementEvent event;
            event.level = level - 1;
            event.n_layers = theta.shape.n_layers;
            event.interpolation =
                schedule.interpolation == NestedSchedule::Interpolation::linear ? "linear"
                                                                                : "constant";
            event.wall_seconds = seconds_between(started, Clock::now());
            run.log.refinements.push_back(std::move(event));
        } else {
            theta = std::move(out.theta);
        }
    }
    run.theta = std::move(theta);
    return run;
}

TrainRunResult train_non_nested(const NetworkShape& finest, int m, const Hyperparameters& hyper,
                                const TrainingData& data, const OptimizerConfig& config,
                                const MgritSettings& mgrit, int d_budget, std::uint64_t seed,
                                WorkerPool& pool) {
    config.validate();
    if (m < 0) throw std::logic_error("train_non_nested: iteration count must be >= 0");
    TrainRunResult run;
    run.theta = init_controls(finest, hyper, seed);
    if (m > 0) {
        TrainOutcome out = train_level(run.theta, m, 0, [d_budget](int) { return d_budget; },
                                       data, hyper, mgrit, config, pool, run.log);
        run.theta = std::move(out.theta);
    }
    return run;
}

double calibrate_work_unit(const NetworkShape& finest, const Hyperparameters& hyper,
                           const TrainingData& data, const OptimizerConfig& config,
                           const MgritSettings& mgrit, int d_budget, int probe_iters,
                           std::uint64_t seed, WorkerPool& pool) {
    if (probe_iters < 3)
        throw std::logic_error("calibrate_work_unit: need at least 3 probe iterations");
    OptimizerConfig probe_config = config;
    probe_config.seconds_per_unit = 1.0;
    const ControlTrajectory theta = init_controls(finest, hyper, seed);
    TrainingLog scratch;
    train_level(theta, probe_iters, 0, [d_budget](int) { return d_budget; }, data, hyper, mgrit,
                probe_config, pool, scratch);
    double total = 0.0;
    for (const TrainingRecord& rec : scratch.records) total += rec.wall_seconds;
    return std::max(total / probe_iters, 1e-12);
}

} // namespace layertime
