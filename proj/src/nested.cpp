#include "layertime/nested.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "layertime/rng.hpp"

namespace layertime {

void NestedSchedule::validate() const {
    if (levels < 1) throw std::logic_error("NestedSchedule: need at least one level");
    if (n_coarsest < 1) throw std::logic_error("NestedSchedule: n_coarsest must be >= 1");
    if (static_cast<int>(iterations.size()) != levels)
        throw std::logic_error("NestedSchedule: need one iteration count per level, got " +
                               std::to_string(iterations.size()) + " for " +
                               std::to_string(levels) + " levels");
    for (int m : iterations)
        if (m < 1) throw std::logic_error("NestedSchedule: iteration counts must be >= 1");
    if (d_steady < 1 || d_post_refine < d_steady)
        throw std::logic_error("NestedSchedule: budgets must satisfy d_post_refine >= d_steady >= 1");
    if (post_refine_span < 0)
        throw std::logic_error("NestedSchedule: post_refine_span must be >= 0");
}

namespace {

/// Shape of the 2x refined grid: twice the layers, half the step size.
NetworkShape refined_shape(const NetworkShape& coarse) {
    return NetworkShape::make(coarse.n_f, coarse.w, coarse.n_c, 2 * coarse.n_layers,
                              coarse.final_time);
}

/// Fresh fine trajectory with the time-independent blocks already copied.
ControlTrajectory refined_skeleton(const ControlTrajectory& coarse) {
    ControlTrajectory fine = ControlTrajectory::zeros(refined_shape(coarse.shape));
    fine.opening = coarse.opening;
    fine.classify_w = coarse.classify_w;
    fine.classify_b = coarse.classify_b;
    return fine;
}

LayerParams midpoint(const LayerParams& a, const LayerParams& b) {
    LayerParams mid = a;
    for (std::size_t i = 0; i < mid.weights.size(); ++i)
        mid.weights.data()[i] = 0.5 * (a.weights.data()[i] + b.weights.data()[i]);
    for (std::size_t i = 0; i < mid.bias.size(); ++i)
        mid.bias[i] = 0.5 * (a.bias[i] + b.bias[i]);
    return mid;
}

} // namespace

ControlTrajectory interpolate_constant(const ControlTrajectory& coarse) {
    ControlTrajectory fine = refined_skeleton(coarse);
    for (int n = 0; n < coarse.shape.n_layers; ++n) {
        fine.layers[2 * n] = coarse.layers[n];
        fine.layers[2 * n + 1] = coarse.layers[n];
    }
    return fine;
}

ControlTrajectory interpolate_linear(const ControlTrajectory& coarse) {
    ControlTrajectory fine = refined_skeleton(coarse);
    const int n_coarse = coarse.shape.n_layers;
    for (int n = 0; n < n_coarse; ++n) {
        fine.layers[2 * n] = coarse.layers[n];
        fine.layers[2 * n + 1] = (n + 1 < n_coarse)
                                     ? midpoint(coarse.layers[n], coarse.layers[n + 1])
                                     : coarse.layers[n];
    }
    return fine;
}

ControlTrajectory interpolate_controls(const ControlTrajectory& coarse,
                                       NestedSchedule::Interpolation mode) {
    return mode == NestedSchedule::Interpolation::linear ? interpolate_linear(coarse)
                                                         : interpolate_constant(coarse);
}

StateTrajectory interpolate_states_constant(const StateTrajectory& coarse) {
    StateTrajectory fine;
    fine.n_layers = 2 * coarse.n_layers;
    fine.h = 0.5 * coarse.h;
    fine.states.resize(fine.n_layers + 1, coarse.states.back());
    for (int n = 0; n < coarse.n_layers; ++n) {
        fine.states[2 * n] = coarse.states[n];
        fine.states[2 * n + 1] = coarse.states[n];
    }
    return fine;
}

int d_for_iteration(int iters_since_refinement, const NestedSchedule& schedule) {
    if (iters_since_refinement < 0) return schedule.d_steady;
    return iters_since_refinement < schedule.post_refine_span ? schedule.d_post_refine
                                                              : schedule.d_steady;
}

namespace {

void fill_uniform(Rng& rng, double scale, Matrix& m) {
    for (double& v : m.data()) v = rng.uniform(-scale, scale);
}

void fill_uniform(Rng& rng, double scale, std::vector<double>& v) {
    for (double& x : v) x = rng.uniform(-scale, scale);
}

} // namespace

ControlTrajectory init_controls(const NetworkShape& shape, const Hyperparameters& hyper,
                                std::uint64_t seed) {
    shape.validate();
    hyper.validate();
    Rng rng(seed);
    const double boundary = hyper.opening_scale < 0.0
                                ? 1.0 / std::sqrt(static_cast<double>(shape.w))
                                : hyper.opening_scale;
    ControlTrajectory theta = ControlTrajectory::zeros(shape);
    fill_uniform(rng, boundary, theta.opening);
    for (LayerParams& layer : theta.layers) {
        fill_uniform(rng, hyper.initial_weight_scale, layer.weights);
        fill_uniform(rng, hyper.initial_weight_scale, layer.bias);
    }
    fill_uniform(rng, boundary, theta.classify_w);
    fill_uniform(rng, boundary, theta.classify_b);
    return theta;
}

} // namespace layertime
