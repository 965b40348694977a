#include "layertime/mgrit.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace layertime {

MultigridHierarchy build_hierarchy(int n_intervals, double h0, int coarsening, int max_levels,
                                   int coarsest_max) {
    if (n_intervals < 1) throw std::logic_error("build_hierarchy: need at least one interval");
    if (coarsening < 2) throw std::logic_error("build_hierarchy: coarsening factor must be >= 2");
    if (max_levels < 1) throw std::logic_error("build_hierarchy: max_levels must be >= 1");
    if (coarsest_max < 1) throw std::logic_error("build_hierarchy: coarsest_max must be >= 1");

    MultigridHierarchy hier;
    hier.coarsening = coarsening;
    int n = n_intervals;
    double h = h0;
    for (;;) {
        GridLevelInfo level;
        level.n_intervals = n;
        level.h = h;
        for (int p = 0; p <= n; p += coarsening) level.cpoints.push_back(p);
        hier.levels.push_back(std::move(level));
        if (hier.n_levels() >= max_levels) break;
        if (n <= coarsest_max) break;
        if (n % coarsening != 0 || n / coarsening < 1) break;
        n /= coarsening;
        h *= coarsening;
    }
    hier.serial_fallback = hier.n_levels() == 1;
    return hier;
}

ControlTrajectory restrict_controls(const ControlTrajectory& theta, int coarsening) {
    const NetworkShape& fine = theta.shape;
    if (fine.n_layers % coarsening != 0)
        throw std::logic_error("restrict_controls: layer count not divisible by factor");
    NetworkShape coarse_shape = NetworkShape::make(fine.n_f, fine.w, fine.n_c,
                                                   fine.n_layers / coarsening, fine.final_time);
    ControlTrajectory coarse;
    coarse.shape = coarse_shape;
    coarse.opening = theta.opening;
    coarse.classify_w = theta.classify_w;
    coarse.classify_b = theta.classify_b;
    coarse.layers.resize(coarse_shape.n_layers);
    for (int n = 0; n < coarse_shape.n_layers; ++n) coarse.layers[n] = theta.layers[n * coarsening];
    return coarse;
}

void MgritSettings::validate() const {
    if (coarsening < 2) throw std::logic_error("MgritSettings: coarsening must be >= 2");
    if (max_levels < 1) throw std::logic_error("MgritSettings: max_levels must be >= 1");
    if (coarsest_max < 1) throw std::logic_error("MgritSettings: coarsest_max must be >= 1");
}

// ---------------------------------------------------------------------------
// FAS engine
// ---------------------------------------------------------------------------

FasSolver::FasSolver(const MultigridHierarchy& hierarchy, const StepOperator& op, WorkerPool& pool)
    : hierarchy_(hierarchy), op_(op), pool_(pool) {}

void FasSolver::set_initial_condition(const Matrix& u0) {
    initial_ = u0;
    ensure_workspace();
    states_[0][0] = initial_;
}

void FasSolver::ensure_workspace() {
    if (allocated_) return;
    const int L = hierarchy_.n_levels();
    states_.resize(L);
    rhs_.resize(L);
    scratch_.resize(L);
    coarse_init_.resize(L);
    for (int l = 0; l < L; ++l) {
        const int n = hierarchy_.levels[l].n_intervals;
        states_[l].assign(n + 1, Matrix(initial_.rows(), initial_.cols()));
        rhs_[l].assign(n + 1, Matrix(initial_.rows(), initial_.cols()));
        scratch_[l].assign(n + 1, Matrix(initial_.rows(), initial_.cols()));
        coarse_init_[l].assign(n + 1, Matrix(initial_.rows(), initial_.cols()));
    }
    residual_slots_.assign(hierarchy_.levels[0].n_intervals + 1, 0.0);
    allocated_ = true;
}

void FasSolver::seed_cold() {
    ensure_workspace();
    auto& fine = states_[0];
    for (std::size_t n = 0; n < fine.size(); ++n) fine[n] = initial_;
}

void FasSolver::seed_warm(const std::vector<Matrix>& states) {
    ensure_workspace();
    if (states.size() != states_[0].size())
        throw std::logic_error("FasSolver::seed_warm: trajectory length mismatch");
    states_[0] = states;
    states_[0][0] = initial_;
}

void FasSolver::apply_step(int level, int interval, const Matrix& in, Matrix& out) const {
    op_.apply(level, interval, in, out);
    if (level > 0) {
        const Matrix& f = rhs_[level][interval + 1];
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += f.data()[i];
    }
}

void FasSolver::check_finite(const Matrix& m, int level, int point) const {
    if (!m.all_finite())
        throw std::runtime_error("relaxation blow-up at level " + std::to_string(level) +
                                 ", layer " + std::to_string(point));
}

void FasSolver::f_relax(int level) {
    const int c = hierarchy_.coarsening;
    const int n = hierarchy_.levels[level].n_intervals;
    if (n % c != 0) throw std::logic_error("f_relax: level not partitioned by the factor");
    const int n_coarse = n / c;
    auto& u = states_[level];
    pool_.parallel_for(n_coarse, [&](int i) {
        for (int j = i * c + 1; j <= i * c + c - 1; ++j) {
            apply_step(level, j - 1, u[j - 1], u[j]);
            check_finite(u[j], level, j);
        }
    });
}

void FasSolver::c_relax(int level) {
    const int c = hierarchy_.coarsening;
    const int n = hierarchy_.levels[level].n_intervals;
    if (n % c != 0) throw std::logic_error("c_relax: level not partitioned by the factor");
    const int n_coarse = n / c;
    auto& u = states_[level];
    pool_.parallel_for(n_coarse, [&](int i) {
        const int p = (i + 1) * c;
        apply_step(level, p - 1, u[p - 1], u[p]);
        check_finite(u[p], level, p);
    });
}

void FasSolver::solve_coarsest(int level) {
    const int n = hierarchy_.levels[level].n_intervals;
    auto& u = states_[level];
    for (int j = 1; j <= n; ++j) {
        apply_step(level, j - 1, u[j - 1], u[j]);
        check_finite(u[j], level, j);
    }
}

void FasSolver::restrict_and_form_rhs(int level) {
    const int c = hierarchy_.coarsening;
    const int n_coarse = hierarchy_.levels[level + 1].n_intervals;
    auto& u_fine = states_[level];
    auto& u_coarse = states_[level + 1];
    auto& f_coarse = rhs_[level + 1];

    // Injection of the current fine solution at C-points.
    pool_.parallel_for(n_coarse + 1, [&](int i) {
        u_coarse[i] = u_fine[i * c];
        coarse_init_[level + 1][i] = u_coarse[i];
    });

    // Full-approximation right-hand side: the coarse operator applied to the
    // injected solution plus the fine residual at the C-point.
    pool_.parallel_for(n_coarse, [&](int idx) {
        const int i = idx + 1;
        Matrix& fine_prop = scratch_[level][i * c];
        apply_step(level, i * c - 1, u_fine[i * c - 1], fine_prop);
        Matrix& coarse_prop = scratch_[level + 1][i];
        op_.apply(level + 1, i - 1, u_coarse[i - 1], coarse_prop);

        // Fine residual r = f_fine + Phi_fine(u) - u at the C-point;
        // apply_step already folded f_fine into fine_prop on coarse levels.
        Matrix& f = f_coarse[i];
        for (std::size_t e = 0; e < f.size(); ++e) {
            const double r = fine_prop.data()[e] - u_fine[i * c].data()[e];
            f.data()[e] = u_coarse[i].data()[e] - coarse_prop.data()[e] + r;
        }
    });
}

void FasSolver::correct_from_coarse(int level) {
    const int c = hierarchy_.coarsening;
    const int n_coarse = hierarchy_.levels[level + 1].n_intervals;
    auto& u_fine = states_[level];
    auto& u_coarse = states_[level + 1];
    pool_.parallel_for(n_coarse, [&](int idx) {
        const int i = idx + 1;
        Matrix& target = u_fine[i * c];
        const Matrix& init = coarse_init_[level + 1][i];
        for (std::size_t e = 0; e < target.size(); ++e)
            target.data()[e] += u_coarse[i].data()[e] - init.data()[e];
    });
}

void FasSolver::v_cycle(int level) {
    if (level == hierarchy_.coarsest()) {
        solve_coarsest(level);
        return;
    }
    f_relax(level);
    c_relax(level);
    f_relax(level);
    restrict_and_form_rhs(level);
    v_cycle(level + 1);
    correct_from_coarse(level);
    f_relax(level);
}

void FasSolver::cycle() {
    ensure_workspace();
    v_cycle(0);
}

double FasSolver::fine_residual_norm() {
    const int n = hierarchy_.levels[0].n_intervals;
    auto& u = states_[0];
    pool_.parallel_for(n, [&](int idx) {
        const int j = idx + 1;
        Matrix& prop = scratch_[0][j];
        op_.apply(0, j - 1, u[j - 1], prop);
        double s = 0.0;
        for (std::size_t e = 0; e < prop.size(); ++e) {
            const double d = prop.data()[e] - u[j].data()[e];
            s += d * d;
        }
        residual_slots_[j] = s;
    });
    double total = 0.0;
    for (int j = 1; j <= n; ++j) total += residual_slots_[j];
    const double norm = std::sqrt(total);
    if (!std::isfinite(norm)) {
        for (int j = 1; j <= n; ++j)
            if (!std::isfinite(residual_slots_[j]) || !u[j].all_finite())
                throw std::runtime_error("mgrit blow-up at level 0, layer " + std::to_string(j));
        throw std::runtime_error("mgrit blow-up at level 0");
    }
    return norm;
}

MgritStatus FasSolver::solve(const SolveBudget& budget, std::ostream* trace) {
    if (budget.max_iters < 1) throw std::logic_error("SolveBudget: max_iters must be >= 1");
    ensure_workspace();

    MgritStatus status;
    status.level_count = hierarchy_.n_levels();
    status.serial_fallback = hierarchy_.serial_fallback;

    const double r0 = fine_residual_norm();
    status.residual_history.push_back(r0);

    for (int it = 1; it <= budget.max_iters; ++it) {
        v_cycle(0);
        const double r = fine_residual_norm();
        status.residual_history.push_back(r);
        status.iterations_performed = it;
        const double rel = r0 > 0.0 ? r / r0 : 0.0;
        if (trace)
            (*trace) << status.level_count << ", " << it << ", " << r << ", " << rel << "\n";
        if (budget.rel_tol && rel <= *budget.rel_tol) {
            status.converged = true;
            break;
        }
    }
    status.final_relative_residual =
        r0 > 0.0 ? status.residual_history.back() / r0 : 0.0;
    return status;
}

// ---------------------------------------------------------------------------
// Production step operators
// ---------------------------------------------------------------------------

namespace {

std::vector<int> level_strides(const MultigridHierarchy& hier) {
    std::vector<int> strides(hier.n_levels());
    int s = 1;
    for (int l = 0; l < hier.n_levels(); ++l) {
        strides[l] = s;
        s *= hier.coarsening;
    }
    return strides;
}

/// Explicit-Euler layer step rediscretized per level: interval n on level l
/// uses the control block at fine layer n * c^l with step h_l.
class ForwardStepOperator final : public StepOperator {
public:
    ForwardStepOperator(const ControlTrajectory& theta, const MultigridHierarchy& hier,
                        double eps)
        : theta_(theta), hier_(hier), strides_(level_strides(hier)), eps_(eps) {}

    void apply(int level, int interval, const Matrix& in, Matrix& out) const override {
        const int fine_index = interval * strides_[level];
        layer_step_batch(in, theta_.layers[fine_index], hier_.levels[level].h, eps_, out);
    }

private:
    const ControlTrajectory& theta_;
    const MultigridHierarchy& hier_;
    std::vector<int> strides_;
    double eps_;
};

/// Time-reversed co-state step linearized at frozen forward states: interval
/// j on level l advances towards the original layer n = N - (j+1) * c^l and
/// uses the state and control at n with step h_l.
class AdjointStepOperator final : public StepOperator {
public:
    AdjointStepOperator(const ControlTrajectory& theta, const StateTrajectory& frozen,
                        const MultigridHierarchy& hier, double eps)
        : theta_(theta), frozen_(frozen), hier_(hier), strides_(level_strides(hier)),
          n_fine_(hier.levels[0].n_intervals), eps_(eps) {}

    void apply(int level, int interval, const Matrix& in, Matrix& out) const override {
        const int n = n_fine_ - (interval + 1) * strides_[level];
        adjoint_step_batch(in, frozen_.states[n], theta_.layers[n], hier_.levels[level].h, eps_,
                           out);
    }

private:
    const ControlTrajectory& theta_;
    const StateTrajectory& frozen_;
    const MultigridHierarchy& hier_;
    std::vector<int> strides_;
    int n_fine_;
    double eps_;
};

std::unique_ptr<std::ofstream> open_trace(const MgritSettings& settings) {
    if (settings.trace_path.empty()) return nullptr;
    auto out = std::make_unique<std::ofstream>(settings.trace_path, std::ios::app);
    if (!*out) throw std::runtime_error("cannot open trace file: " + settings.trace_path);
    return out;
}

} // namespace

ForwardSolveResult solve_forward(const ControlTrajectory& theta, const Batch& batch,
                                 const Hyperparameters& hyper, const MgritSettings& settings,
                                 const SolveBudget& budget, const StateTrajectory* warm_start,
                                 WorkerPool& pool) {
    settings.validate();
    const NetworkShape& shape = theta.shape;
    MultigridHierarchy hier = build_hierarchy(shape.n_layers, shape.h, settings.coarsening,
                                              settings.max_levels, settings.coarsest_max);
    ForwardStepOperator op(theta, hier, hyper.eps_relu);
    FasSolver solver(hier, op, pool);

    Matrix u0;
    apply_opening_batch(batch.features, theta.opening, u0);
    solver.set_initial_condition(u0);
    if (warm_start)
        solver.seed_warm(warm_start->states);
    else
        solver.seed_cold();

    auto trace = open_trace(settings);
    ForwardSolveResult result;
    result.status = solver.solve(budget, trace.get());
    result.states.n_layers = shape.n_layers;
    result.states.h = shape.h;
    result.states.states = std::move(solver.states(0));
    return result;
}

BackwardSolveResult solve_backward(const ControlTrajectory& theta, const StateTrajectory& states,
                                   const Batch& batch, const Hyperparameters& hyper,
                                   const MgritSettings& settings, const SolveBudget& budget,
                                   const AdjointTrajectory* warm_start, WorkerPool& pool) {
    settings.validate();
    const NetworkShape& shape = theta.shape;
    const int N = shape.n_layers;
    if (static_cast<int>(states.states.size()) != N + 1)
        throw std::logic_error("solve_backward: trajectory/grid mismatch");

    MultigridHierarchy hier =
        build_hierarchy(N, shape.h, settings.coarsening, settings.max_levels,
                        settings.coarsest_max);
    AdjointStepOperator op(theta, states, hier, hyper.eps_relu);
    FasSolver solver(hier, op, pool);

    BackwardSolveResult result;
    result.grad = ControlTrajectory::zeros(shape);

    // Seed the co-state at the final layer from the classification loss;
    // the 1/s_b batch scaling enters here.
    Matrix seed;
    {
        const int s_b = batch.size();
        const double inv_s = 1.0 / s_b;
        seed = Matrix(s_b, shape.w);
        std::vector<double> state(shape.w), label(shape.n_c);
        double total = 0.0;
        for (int k = 0; k < s_b; ++k) {
            for (int j = 0; j < shape.w; ++j) state[j] = states.states[N](k, j);
            for (int j = 0; j < shape.n_c; ++j) label[j] = batch.labels(k, j);
            LossResult lr = loss_and_grad(state, label, theta.classify_w, theta.classify_b);
            total += lr.loss;
            for (int j = 0; j < shape.w; ++j) seed(k, j) = inv_s * lr.d_state[j];
            for (int i = 0; i < shape.n_c; ++i) {
                result.grad.classify_b[i] += inv_s * lr.d_classify_b[i];
                for (int j = 0; j < shape.w; ++j)
                    result.grad.classify_w(i, j) += inv_s * lr.d_classify_w(i, j);
            }
        }
        result.data_loss = total * inv_s;
    }

    solver.set_initial_condition(seed);
    if (warm_start) {
        if (static_cast<int>(warm_start->costates.size()) != N + 1)
            throw std::logic_error("solve_backward: warm-start length mismatch");
        std::vector<Matrix> reversed(N + 1);
        for (int j = 0; j <= N; ++j) reversed[j] = warm_start->costates[N - j];
        solver.seed_warm(reversed);
    } else {
        solver.seed_cold();
    }

    auto trace = open_trace(settings);
    result.status = solver.solve(budget, trace.get());

    result.adjoint.costates.resize(N + 1);
    for (int j = 0; j <= N; ++j) result.adjoint.costates[N - j] = std::move(solver.states(0)[j]);

    // Per-layer parameter pullbacks; layers write disjoint blocks.
    pool.parallel_for(N, [&](int n) {
        layer_grad_batch(states.states[n], result.adjoint.costates[n + 1], theta.layers[n],
                         shape.h, hyper.eps_relu, result.grad.layers[n].weights,
                         result.grad.layers[n].bias);
    });

    const Matrix& lam0 = result.adjoint.costates[0];
    for (int k = 0; k < batch.size(); ++k)
        for (int i = 0; i < shape.w; ++i) {
            const double l = lam0(k, i);
            for (int j = 0; j < shape.n_f; ++j)
                result.grad.opening(i, j) += l * batch.features(k, j);
        }

    RegularizerResult reg = regularizer_and_grad(theta, hyper);
    result.objective = result.data_loss + reg.value;
    for (std::size_t i = 0; i < result.grad.opening.size(); ++i)
        result.grad.opening.data()[i] += reg.grad.opening.data()[i];
    for (std::size_t i = 0; i < result.grad.classify_w.size(); ++i)
        result.grad.classify_w.data()[i] += reg.grad.classify_w.data()[i];
    for (std::size_t i = 0; i < result.grad.classify_b.size(); ++i)
        result.grad.classify_b[i] += reg.grad.classify_b[i];
    for (int n = 0; n < N; ++n) {
        auto& g = result.grad.layers[n];
        const auto& r = reg.grad.layers[n];
        for (std::size_t i = 0; i < g.weights.size(); ++i)
            g.weights.data()[i] += r.weights.data()[i];
        for (std::size_t i = 0; i < g.bias.size(); ++i) g.bias[i] += r.bias[i];
    }
    return result;
}

} // namespace layertime
