#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "layertime/serial.hpp"
#include "test_support.hpp"

using namespace layertime;
using namespace layertime::testing;

TEST_CASE("forward sweep composes the layer steps in order") {
    Rng rng(31);
    NetworkShape shape = NetworkShape::make(2, 3, 2, 8, 1.0);
    ControlTrajectory theta = random_controls(shape, rng, -0.5, 0.5);
    Batch batch = random_batch(4, shape.n_f, shape.n_c, rng);

    StateTrajectory traj = forward_serial(theta, batch, 0.1);
    REQUIRE(static_cast<int>(traj.states.size()) == shape.n_layers + 1);

    // Manual 8-fold composition, one sample at a time.
    for (int k = 0; k < batch.size(); ++k) {
        std::vector<double> y(batch.features.row(k), batch.features.row(k) + shape.n_f);
        std::vector<double> u = apply_opening(y, theta.opening);
        for (int n = 0; n < shape.n_layers; ++n) {
            u = layer_step(u, theta.layers[n], shape.h, 0.1);
            for (int j = 0; j < shape.w; ++j) CHECK(traj.states[n + 1](k, j) == u[j]);
        }
    }
}

TEST_CASE("forward sweep reports the first blow-up layer") {
    NetworkShape shape = NetworkShape::make(1, 1, 2, 3, 3.0);
    ControlTrajectory theta = ControlTrajectory::zeros(shape);
    // A huge weight with h = 1 overflows within a few steps.
    theta.opening(0, 0) = 1.0;
    for (auto& layer : theta.layers) layer.weights(0, 0) = 1e200;
    Batch batch;
    batch.features = Matrix(1, 1, 1.0);
    batch.labels = Matrix(1, 2);
    batch.labels(0, 0) = 1.0;
    CHECK_THROWS_WITH(forward_serial(theta, batch, 0.1), "forward blow-up at layer 2");
}

TEST_CASE("zero-layer network reduces to logistic regression") {
    Rng rng(32);
    NetworkShape shape = NetworkShape::make(3, 3, 4, 0, 0.0);
    ControlTrajectory theta = random_controls(shape, rng);
    Batch batch = random_batch(6, shape.n_f, shape.n_c, rng);
    Hyperparameters hyper;
    hyper.gamma_tik = 0.0;

    StateTrajectory traj = forward_serial(theta, batch, hyper.eps_relu);
    BackwardResult res = backward_serial(theta, traj, batch, hyper);

    // Closed-form softmax-regression gradient on z = W_out (W_in y) + b_out.
    const int s_b = batch.size();
    Matrix d_cw(shape.n_c, shape.w);
    std::vector<double> d_cb(shape.n_c, 0.0);
    double loss = 0.0;
    for (int k = 0; k < s_b; ++k) {
        std::vector<double> y(batch.features.row(k), batch.features.row(k) + shape.n_f);
        std::vector<double> u = apply_opening(y, theta.opening);
        std::vector<double> z(shape.n_c);
        for (int i = 0; i < shape.n_c; ++i) {
            z[i] = theta.classify_b[i];
            for (int j = 0; j < shape.w; ++j) z[i] += theta.classify_w(i, j) * u[j];
        }
        double zmax = z[0];
        for (double v : z) zmax = std::max(zmax, v);
        double sum = 0.0;
        std::vector<double> p(shape.n_c);
        for (int i = 0; i < shape.n_c; ++i) sum += p[i] = std::exp(z[i] - zmax);
        for (double& v : p) v /= sum;
        for (int i = 0; i < shape.n_c; ++i) {
            if (batch.labels(k, i) != 0.0)
                loss -= batch.labels(k, i) * std::log(p[i]);
            const double dz = (p[i] - batch.labels(k, i)) / s_b;
            d_cb[i] += dz;
            for (int j = 0; j < shape.w; ++j) d_cw(i, j) += dz * u[j];
        }
    }
    loss /= s_b;

    CHECK(std::abs(res.data_loss - loss) <= 1e-12);
    CHECK(max_abs_diff(res.grad.classify_w, d_cw) <= 1e-12);
    for (int i = 0; i < shape.n_c; ++i)
        CHECK(std::abs(res.grad.classify_b[i] - d_cb[i]) <= 1e-12);
}

TEST_CASE("serial gradient matches finite differences over all parameters") {
    Rng rng(33);
    NetworkShape shape = NetworkShape::make(2, 3, 3, 4, 1.0);
    Hyperparameters hyper;
    hyper.gamma_tik = 1e-3;
    hyper.gamma_ddt = 1e-3;

    ControlTrajectory theta = random_controls(shape, rng, -0.8, 0.8);
    Batch batch = random_batch(5, shape.n_f, shape.n_c, rng);

    StateTrajectory traj = forward_serial(theta, batch, hyper.eps_relu);
    BackwardResult res = backward_serial(theta, traj, batch, hyper);

    auto f = [&](const std::vector<double>& v) {
        return objective(ControlTrajectory::unflatten(shape, v), batch, hyper);
    };
    CHECK(max_relative_gradient_error(f, theta.flatten(), res.grad.flatten(), 1e-6, 1e-5) <=
          1e-4);
}

TEST_CASE("objective is the mean loss plus the regularizer") {
    Rng rng(34);
    NetworkShape shape = NetworkShape::make(2, 4, 3, 6, 2.0);
    Hyperparameters hyper;
    hyper.gamma_tik = 0.01;
    hyper.gamma_ddt = 0.005;
    ControlTrajectory theta = random_controls(shape, rng, -0.5, 0.5);
    Batch batch = random_batch(7, shape.n_f, shape.n_c, rng);

    StateTrajectory traj = forward_serial(theta, batch, hyper.eps_relu);
    const double data = mean_loss(traj.final_state(), batch.labels, theta.classify_w,
                                  theta.classify_b);
    const double reg = regularizer_value(theta, hyper);
    CHECK(std::abs(objective(theta, batch, hyper) - (data + reg)) <= 1e-12);

    // The backward pass reports the same decomposition.
    BackwardResult res = backward_serial(theta, traj, batch, hyper);
    CHECK(std::abs(res.objective - (res.data_loss + reg)) <= 1e-12);
}

TEST_CASE("repeated sweeps are bit-identical") {
    Rng rng(35);
    NetworkShape shape = NetworkShape::make(2, 3, 2, 5, 1.0);
    Hyperparameters hyper;
    hyper.gamma_tik = 1e-4;
    ControlTrajectory theta = random_controls(shape, rng);
    Batch batch = random_batch(4, shape.n_f, shape.n_c, rng);

    StateTrajectory t1 = forward_serial(theta, batch, hyper.eps_relu);
    StateTrajectory t2 = forward_serial(theta, batch, hyper.eps_relu);
    for (std::size_t n = 0; n < t1.states.size(); ++n) CHECK(t1.states[n] == t2.states[n]);

    BackwardResult b1 = backward_serial(theta, t1, batch, hyper);
    BackwardResult b2 = backward_serial(theta, t2, batch, hyper);
    CHECK(b1.grad.flatten() == b2.grad.flatten());
    CHECK(b1.objective == b2.objective);
}

TEST_CASE("adjoint seed carries the batch mean scaling") {
    // Doubling the batch by duplicating every sample must leave the mean
    // loss and the gradient unchanged.
    Rng rng(36);
    NetworkShape shape = NetworkShape::make(2, 3, 2, 4, 1.0);
    Hyperparameters hyper;
    ControlTrajectory theta = random_controls(shape, rng, -0.5, 0.5);
    Batch batch = random_batch(3, shape.n_f, shape.n_c, rng);

    Batch doubled;
    doubled.features = Matrix(6, shape.n_f);
    doubled.labels = Matrix(6, shape.n_c);
    for (int k = 0; k < 6; ++k)
        for (int j = 0; j < shape.n_f; ++j) doubled.features(k, j) = batch.features(k % 3, j);
    for (int k = 0; k < 6; ++k)
        for (int j = 0; j < shape.n_c; ++j) doubled.labels(k, j) = batch.labels(k % 3, j);

    BackwardResult a = backward_serial(theta, forward_serial(theta, batch, hyper.eps_relu), batch,
                                       hyper);
    BackwardResult b = backward_serial(theta, forward_serial(theta, doubled, hyper.eps_relu),
                                       doubled, hyper);
    CHECK(std::abs(a.data_loss - b.data_loss) <= 1e-12);
    CHECK(max_abs_diff_controls(a.grad, b.grad) <= 1e-12);
}
