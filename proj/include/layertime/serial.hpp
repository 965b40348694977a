/// Layer-serial reference propagation: forward sweep, exact discrete adjoint
/// backward sweep, and objective assembly. This is both the coarsest-level
/// solver and the correctness oracle for the multigrid path.

#ifndef LAYERTIME_SERIAL_HPP
#define LAYERTIME_SERIAL_HPP

#include <vector>

#include "layertime/network.hpp"

namespace layertime {

/// Network states for one batch at every point of one time grid
/// (n_layers + 1 matrices of s_b x w).
struct StateTrajectory {
    std::vector<Matrix> states;
    int n_layers = 0;
    double h = 0.0;

    const Matrix& final_state() const { return states.back(); }
};

/// Co-states for the same grid, one matrix per time point.
struct AdjointTrajectory {
    std::vector<Matrix> costates;
};

/// Forward sweep u^{n+1} = step(u^n). Throws "forward blow-up at layer n"
/// when a non-finite state appears.
StateTrajectory forward_serial(const ControlTrajectory& theta, const Batch& batch, double eps);

struct BackwardResult {
    AdjointTrajectory adjoint;
    ControlTrajectory grad;   // full objective gradient, regularizer included
    double data_loss = 0.0;   // mean batch loss at the final state
    double objective = 0.0;   // data_loss + regularizer value
};

/// Exact discrete adjoint of the forward recurrence on the given states.
/// The 1/s_b loss scaling enters at the adjoint seed.
BackwardResult backward_serial(const ControlTrajectory& theta, const StateTrajectory& states,
                               const Batch& batch, const Hyperparameters& hyper);

/// Mean batch loss at the propagated final state plus the regularizer.
double objective(const ControlTrajectory& theta, const Batch& batch, const Hyperparameters& hyper);

} // namespace layertime

#endif // LAYERTIME_SERIAL_HPP
