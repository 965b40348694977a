/// Nested-iteration (cascadic) machinery: control/state interpolation from a
/// coarse layer grid to a 2x finer one, seeded parameter initialization, and
/// the post-refinement iteration-budget schedule. The training driver that
/// walks the levels lives in the optimizer module.

#ifndef LAYERTIME_NESTED_HPP
#define LAYERTIME_NESTED_HPP

#include <cstdint>

#include "layertime/network.hpp"
#include "layertime/serial.hpp"

namespace layertime {

/// Schedule of one cascadic training run: L levels, the coarsest with
/// N_coarsest residual layers, level l holding N_coarsest * 2^(L-1-l)
/// layers, and m iteration counts ordered coarsest first.
struct NestedSchedule {
    enum class Interpolation { constant, linear };

    int levels = 3;
    int n_coarsest = 16;
    std::vector<int> iterations;    // size L, coarsest level first
    Interpolation interpolation = Interpolation::constant;
    int d_post_refine = 10;         // solver budget right after refinement
    int post_refine_span = 3;       // iterations that use d_post_refine
    int d_steady = 2;               // solver budget everywhere else

    int finest_layers() const { return n_coarsest << (levels - 1); }
    /// Iteration count of level l (levels-1 = coarsest, 0 = finest).
    int iterations_at(int level) const { return iterations[levels - 1 - level]; }
    void validate() const;
};

/// Doubles the layer grid, replicating each internal block:
/// fine[2n] = fine[2n+1] = coarse[n]. Opening and classification blocks are
/// copied; the step size halves.
ControlTrajectory interpolate_constant(const ControlTrajectory& coarse);

/// Doubles the layer grid with midpoint averaging: fine[2n] = coarse[n],
/// fine[2n+1] = (coarse[n] + coarse[n+1]) / 2, except the last fine layer,
/// which replicates coarse[N-1] because coarse[N] does not exist.
ControlTrajectory interpolate_linear(const ControlTrajectory& coarse);

ControlTrajectory interpolate_controls(const ControlTrajectory& coarse,
                                       NestedSchedule::Interpolation mode);

/// Piece-wise constant doubling of a state trajectory, used to carry warm
/// starts across a refinement: fine[2n] = fine[2n+1] = coarse[n].
StateTrajectory interpolate_states_constant(const StateTrajectory& coarse);

/// Solver budget for an optimization iteration: d_post_refine for the first
/// post_refine_span iterations after a refinement, d_steady after that.
/// Pass a negative count on a level that was not produced by refinement
/// (the initial coarsest level, or non-nested training).
int d_for_iteration(int iters_since_refinement, const NestedSchedule& schedule);

/// Seeded parameter initialization: internal blocks uniform in
/// [-initial_weight_scale, +initial_weight_scale] (exactly zero at scale 0),
/// opening and classification blocks uniform in [-r, r] with
/// r = opening_scale (1/sqrt(w) when the scale is left negative). The draw
/// order is the flatten order, so a seed fully determines the result.
ControlTrajectory init_controls(const NetworkShape& shape, const Hyperparameters& hyper,
                                std::uint64_t seed);

} // namespace layertime

#endif // LAYERTIME_NESTED_HPP
