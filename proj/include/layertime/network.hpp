/// Discrete ODE network: smoothed-ReLU activation, the explicit-Euler layer
/// propagator and its hand-coded derivatives, opening/classification layers,
/// softmax cross-entropy loss, and Tikhonov regularization. Everything here
/// is local math on one layer or one control set; solvers live elsewhere.

#ifndef LAYERTIME_NETWORK_HPP
#define LAYERTIME_NETWORK_HPP

#include <string>
#include <vector>

#include "layertime/matrix.hpp"

namespace layertime {

/// Static description of one network discretization: feature width n_f,
/// hidden width w, class count n_c, residual layer count N on [0, T] with
/// step h = T / N.
struct NetworkShape {
    int n_f = 0;
    int w = 0;
    int n_c = 0;
    int n_layers = 0;
    double final_time = 0.0;
    double h = 0.0;

    static NetworkShape make(int n_f, int w, int n_c, int n_layers, double final_time);
    void validate() const;
};

/// Weights and bias of one residual layer.
struct LayerParams {
    Matrix weights; // w x w
    std::vector<double> bias;
};

/// All trainable parameters pinned to one time grid: the opening map, the
/// per-layer internal blocks, and the classification layer.
struct ControlTrajectory {
    Matrix opening;     // w x n_f, applied linearly to features
    std::vector<LayerParams> layers;
    Matrix classify_w;  // n_c x w
    std::vector<double> classify_b;
    NetworkShape shape;

    static ControlTrajectory zeros(const NetworkShape& shape);

    std::size_t parameter_count() const;
    /// Field order: opening, then each layer (weights then bias), then
    /// classification weights and bias; matrices row-major.
    std::vector<double> flatten() const;
    static ControlTrajectory unflatten(const NetworkShape& shape, const std::vector<double>& v);

    bool all_finite() const;
};

/// One training or validation batch. Label rows are probability vectors.
struct Batch {
    Matrix features; // s_b x n_f
    Matrix labels;   // s_b x n_c
    std::vector<int> ids;

    int size() const { return features.rows(); }
    void validate() const;
};

struct Hyperparameters {
    double initial_weight_scale = 0.0; // magnitude of random internal-layer init
    double gamma_tik = 0.0;            // Tikhonov coefficient on controls
    double gamma_ddt = 0.0;            // penalty on time differences of layer blocks
    double eps_relu = 0.1;             // activation smoothing half-width
    double opening_scale = -1.0;       // opening/classification init range; < 0 means 1/sqrt(w)

    void validate() const;
};

/// C1 smoothing of max(x, 0): zero below -eps, identity above eps, and the
/// quadratic (x + eps)^2 / (4 eps) in between.
inline double smoothed_relu(double x, double eps) {
    if (x <= -eps) return 0.0;
    if (x >= eps) return x;
    const double t = x + eps;
    return t * t / (4.0 * eps);
}

inline double smoothed_relu_deriv(double x, double eps) {
    if (x <= -eps) return 0.0;
    if (x >= eps) return 1.0;
    return (x + eps) / (2.0 * eps);
}

/// One explicit-Euler step u + h * act(W u + b) for a single state vector.
std::vector<double> layer_step(const std::vector<double>& u, const LayerParams& layer,
                               double h, double eps);

/// Batched layer step: each row of `states` is advanced independently.
/// `out` may not alias `states`.
void layer_step_batch(const Matrix& states, const LayerParams& layer, double h, double eps,
                      Matrix& out);

/// Vector-Jacobian products of layer_step at (u, layer): pullbacks of lam
/// through the state, the weights, and the bias.
struct LayerStepVjp {
    std::vector<double> d_state;
    Matrix d_weights;
    std::vector<double> d_bias;
};
LayerStepVjp layer_step_vjp(const std::vector<double>& u, const LayerParams& layer, double h,
                            double eps, const std::vector<double>& lam);

/// Batched adjoint step: for each row pair (u, lam) writes
/// lam + h * W^T (act'(W u + b) .* lam) into the matching row of `out`.
/// `out` may not alias `lams`.
void adjoint_step_batch(const Matrix& lams, const Matrix& states, const LayerParams& layer,
                        double h, double eps, Matrix& out);

/// Accumulates the layer-parameter pullbacks over a batch:
/// d_weights += h * sum_k (act' .* lam_k) u_k^T, d_bias += h * sum_k (act' .* lam_k).
/// Rows are summed in index order.
void layer_grad_batch(const Matrix& states, const Matrix& lams, const LayerParams& layer,
                      double h, double eps, Matrix& d_weights, std::vector<double>& d_bias);

/// Opening layer u0 = W_in y (purely linear).
std::vector<double> apply_opening(const std::vector<double>& y, const Matrix& opening);
void apply_opening_batch(const Matrix& features, const Matrix& opening, Matrix& out);

/// Softmax cross-entropy of one sample with analytic gradients.
struct LossResult {
    double loss = 0.0;
    std::vector<double> d_state;   // pullback to the final network state
    Matrix d_classify_w;
    std::vector<double> d_classify_b;
};
LossResult loss_and_grad(const std::vector<double>& final_state, const std::vector<double>& label,
                         const Matrix& classify_w, const std::vector<double>& classify_b);

/// Mean loss over a batch of final states (no gradients).
double mean_loss(const Matrix& final_states, const Matrix& labels, const Matrix& classify_w,
                 const std::vector<double>& classify_b);

/// Class probabilities for a batch of final states.
void predict(const Matrix& final_states, const Matrix& classify_w,
             const std::vector<double>& classify_b, Matrix& probabilities);

/// Tikhonov value and gradient: gamma_tik weights internal blocks by h and
/// the opening/classification blocks by 1; gamma_ddt penalizes first time
/// differences of the internal blocks, scaled by 1/h.
struct RegularizerResult {
    double value = 0.0;
    ControlTrajectory grad;
};
RegularizerResult regularizer_and_grad(const ControlTrajectory& theta,
                                       const Hyperparameters& hyper);
double regularizer_value(const ControlTrajectory& theta, const Hyperparameters& hyper);

/// Fraction of rows whose argmax matches the label argmax; ties resolve to
/// the lowest index on both sides. Throws on an empty batch.
double classification_accuracy(const Matrix& predictions, const Matrix& labels);

} // namespace layertime

#endif // LAYERTIME_NETWORK_HPP
