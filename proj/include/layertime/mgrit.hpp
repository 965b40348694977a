/// Multigrid-in-time solver for one-step layer recurrences. Replaces the
/// serial forward sweep and the serial adjoint sweep with an iterative FAS
/// scheme on a ladder of layer grids: FCF relaxation on each level, residual
/// restriction by injection at C-points, a full-approximation coarse-grid
/// correction, and a serial solve on the coarsest level. At convergence the
/// result matches the serial sweeps.

#ifndef LAYERTIME_MGRIT_HPP
#define LAYERTIME_MGRIT_HPP

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "layertime/network.hpp"
#include "layertime/serial.hpp"
#include "layertime/threading.hpp"

namespace layertime {

/// One layer grid inside a multigrid hierarchy.
struct GridLevelInfo {
    int n_intervals = 0;
    double h = 0.0;
    std::vector<int> cpoints; // every c-th point starting at 0
};

/// Ladder of layer grids for one solve. Level 0 is the finest; step sizes
/// satisfy h_l = h_0 * c^l and interval counts N_l = N_0 / c^l.
struct MultigridHierarchy {
    std::vector<GridLevelInfo> levels;
    int coarsening = 2;
    bool serial_fallback = false; // single level, degenerates to a serial sweep

    int n_levels() const { return static_cast<int>(levels.size()); }
    int coarsest() const { return n_levels() - 1; }
};

/// Coarsens while the interval count divides evenly by c, staying within
/// max_levels and stopping once a level is small enough (<= coarsest_max)
/// for the serial bottom solve.
MultigridHierarchy build_hierarchy(int n_intervals, double h0, int coarsening, int max_levels,
                                   int coarsest_max);

/// Injection of controls to the next coarser grid: coarse layer n takes the
/// block at fine layer c*n; opening and classification blocks are shared.
ControlTrajectory restrict_controls(const ControlTrajectory& theta, int coarsening);

struct SolveBudget {
    int max_iters = 2;
    std::optional<double> rel_tol; // unset: run exactly max_iters cycles
};

struct MgritStatus {
    int iterations_performed = 0;
    std::vector<double> residual_history; // entry 0 is the pre-iteration residual
    bool converged = false;
    double final_relative_residual = 0.0;
    int level_count = 0;
    bool serial_fallback = false;
};

/// One-step recurrence u_{n+1} = Phi_l(n, u_n) evaluated on any level of the
/// hierarchy. Implementations map (level, interval) to the right step size
/// and per-layer data.
class StepOperator {
public:
    virtual ~StepOperator() = default;
    virtual void apply(int level, int interval, const Matrix& in, Matrix& out) const = 0;
};

/// FAS workspace and cycling for one hierarchy / operator pair. States are
/// s_b x w matrices per time point. Point 0 of every level is pinned to the
/// initial condition. All sweeps parallelize over coarse intervals; norms
/// reduce in fixed index order, so results do not depend on worker count.
class FasSolver {
public:
    FasSolver(const MultigridHierarchy& hierarchy, const StepOperator& op, WorkerPool& pool);

    void set_initial_condition(const Matrix& u0);
    void seed_cold();                                    // broadcast u0 everywhere
    void seed_warm(const std::vector<Matrix>& states);   // copy a previous trajectory

    /// Propagate across the F-points of each coarse interval independently;
    /// C-points are left untouched.
    void f_relax(int level);
    /// Update each C-point except 0 from its preceding F-point.
    void c_relax(int level);
    /// One V-cycle from the finest level.
    void cycle();
    /// Residual norm sqrt(sum_n |Phi(u_{n-1}) - u_n|^2) on the finest level.
    double fine_residual_norm();

    MgritStatus solve(const SolveBudget& budget, std::ostream* trace = nullptr);

    std::vector<Matrix>& states(int level) { return states_[level]; }
    const std::vector<Matrix>& states(int level) const { return states_[level]; }
    const std::vector<Matrix>& rhs(int level) const { return rhs_[level]; }

private:
    void ensure_workspace();
    void apply_step(int level, int interval, const Matrix& in, Matrix& out) const;
    void check_finite(const Matrix& m, int level, int point) const;
    void v_cycle(int level);
    void solve_coarsest(int level);
    void restrict_and_form_rhs(int level);
    void correct_from_coarse(int level);

    const MultigridHierarchy& hierarchy_;
    const StepOperator& op_;
    WorkerPool& pool_;
    Matrix initial_;
    bool allocated_ = false;
    std::vector<std::vector<Matrix>> states_;
    std::vector<std::vector<Matrix>> rhs_;
    std::vector<std::vector<Matrix>> scratch_;
    std::vector<std::vector<Matrix>> coarse_init_;
    std::vector<double> residual_slots_;
};

/// Hierarchy construction settings plus the optional residual trace sink.
struct MgritSettings {
    int coarsening = 2;
    int max_levels = 3;
    int coarsest_max = 8;
    std::string trace_path; // empty: no trace

    void validate() const;
};

struct ForwardSolveResult {
    StateTrajectory states;
    MgritStatus status;
};

struct BackwardSolveResult {
    AdjointTrajectory adjoint;
    ControlTrajectory grad;
    double data_loss = 0.0;
    double objective = 0.0;
    MgritStatus status;
};

/// Iterative layer-parallel replacement for forward_serial. A warm start
/// reuses a previous trajectory; the cold start broadcasts the opening state.
ForwardSolveResult solve_forward(const ControlTrajectory& theta, const Batch& batch,
                                 const Hyperparameters& hyper, const MgritSettings& settings,
                                 const SolveBudget& budget, const StateTrajectory* warm_start,
                                 WorkerPool& pool);

/// Iterative layer-parallel replacement for backward_serial on frozen
/// (possibly inexact) forward states. At convergence the assembled gradient
/// matches the serial adjoint on the same states.
BackwardSolveResult solve_backward(const ControlTrajectory& theta, const StateTrajectory& states,
                                   const Batch& batch, const Hyperparameters& hyper,
                                   const MgritSettings& settings, const SolveBudget& budget,
                                   const AdjointTrajectory* warm_start, WorkerPool& pool);

} // namespace layertime

#endif // LAYERTIME_MGRIT_HPP
