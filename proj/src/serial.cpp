#include "layertime/serial.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace layertime {

StateTrajectory forward_serial(const ControlTrajectory& theta, const Batch& batch, double eps) {
    const NetworkShape& shape = theta.shape;
    StateTrajectory traj;
    traj.n_layers = shape.n_layers;
    traj.h = shape.h;
    traj.states.resize(shape.n_layers + 1);

    apply_opening_batch(batch.features, theta.opening, traj.states[0]);
    for (int n = 0; n < shape.n_layers; ++n) {
        layer_step_batch(traj.states[n], theta.layers[n], shape.h, eps, traj.states[n + 1]);
        if (!traj.states[n + 1].all_finite())
            throw std::runtime_error("forward blow-up at layer " + std::to_string(n + 1));
    }
    return traj;
}

namespace {

/// Seeds the adjoint at the final time point and accumulates the
/// classification-layer gradients, all scaled by 1/s_b.
double seed_adjoint(const Matrix& final_states, const Batch& batch,
                    const ControlTrajectory& theta, Matrix& seed, Matrix& d_classify_w,
                    std::vector<double>& d_classify_b) {
    const int s_b = batch.size();
    const int w = theta.shape.w;
    const int n_c = theta.shape.n_c;
    seed = Matrix(s_b, w);
    d_classify_w = Matrix(n_c, w);
    d_classify_b.assign(n_c, 0.0);

    const double inv_s = 1.0 / s_b;
    double total_loss = 0.0;
    std::vector<double> state(w), label(n_c);
    for (int k = 0; k < s_b; ++k) {
        for (int j = 0; j < w; ++j) state[j] = final_states(k, j);
        for (int j = 0; j < n_c; ++j) label[j] = batch.labels(k, j);
        LossResult lr = loss_and_grad(state, label, theta.classify_w, theta.classify_b);
        total_loss += lr.loss;
        for (int j = 0; j < w; ++j) seed(k, j) = inv_s * lr.d_state[j];
        for (int i = 0; i < n_c; ++i) {
            d_classify_b[i] += inv_s * lr.d_classify_b[i];
            for (int j = 0; j < w; ++j) d_classify_w(i, j) += inv_s * lr.d_classify_w(i, j);
        }
    }
    return total_loss * inv_s;
}

} // namespace

BackwardResult backward_serial(const ControlTrajectory& theta, const StateTrajectory& states,
                               const Batch& batch, const Hyperparameters& hyper) {
    const NetworkShape& shape = theta.shape;
    if (static_cast<int>(states.states.size()) != shape.n_layers + 1)
        throw std::logic_error("backward_serial: trajectory/grid mismatch");

    BackwardResult res;
    res.grad = ControlTrajectory::zeros(shape);
    res.adjoint.costates.resize(shape.n_layers + 1);

    res.data_loss = seed_adjoint(states.states.back(), batch, theta,
                                 res.adjoint.costates[shape.n_layers], res.grad.classify_w,
                                 res.grad.classify_b);

    for (int n = shape.n_layers - 1; n >= 0; --n) {
        const Matrix& u = states.states[n];
        const Matrix& lam_next = res.adjoint.costates[n + 1];
        adjoint_step_batch(lam_next, u, theta.layers[n], shape.h, hyper.eps_relu,
                           res.adjoint.costates[n]);
        if (!res.adjoint.costates[n].all_finite())
            throw std::runtime_error("adjoint blow-up at layer " + std::to_string(n));
        layer_grad_batch(u, lam_next, theta.layers[n], shape.h, hyper.eps_relu,
                         res.grad.layers[n].weights, res.grad.layers[n].bias);
    }

    // Opening-layer gradient: sum_k lam0_k y_k^T.
    const Matrix& lam0 = res.adjoint.costates[0];
    for (int k = 0; k < batch.size(); ++k)
        for (int i = 0; i < shape.w; ++i) {
            const double l = lam0(k, i);
            for (int j = 0; j < shape.n_f; ++j)
                res.grad.opening(i, j) += l * batch.features(k, j);
        }

    RegularizerResult reg = regularizer_and_grad(theta, hyper);
    res.objective = res.data_loss + reg.value;
    auto add = [](Matrix& dst, const Matrix& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
    };
    add(res.grad.opening, reg.grad.opening);
    add(res.grad.classify_w, reg.grad.classify_w);
    for (std::size_t i = 0; i < res.grad.classify_b.size(); ++i)
        res.grad.classify_b[i] += reg.grad.classify_b[i];
    for (int n = 0; n < shape.n_layers; ++n) {
        add(res.grad.layers[n].weights, reg.grad.layers[n].weights);
        for (std::size_t i = 0; i < res.grad.layers[n].bias.size(); ++i)
            res.grad.layers[n].bias[i] += reg.grad.layers[n].bias[i];
    }
    return res;
}

double objective(const ControlTrajectory& theta, const Batch& batch,
                 const Hyperparameters& hyper) {
    StateTrajectory traj = forward_serial(theta, batch, hyper.eps_relu);
    return mean_loss(traj.final_state(), batch.labels, theta.classify_w, theta.classify_b) +
           regularizer_value(theta, hyper);
}

} // namespace layertime
