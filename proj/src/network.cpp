#include "layertime/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace layertime {

NetworkShape NetworkShape::make(int n_f, int w, int n_c, int n_layers, double final_time) {
    NetworkShape s;
    s.n_f = n_f;
    s.w = w;
    s.n_c = n_c;
    s.n_layers = n_layers;
    s.final_time = final_time;
    s.h = n_layers > 0 ? final_time / n_layers : 0.0;
    s.validate();
    return s;
}

void NetworkShape::validate() const {
    // n_layers == 0 (pure opening + classification) is allowed for the
    // logistic-regression degenerate case; the CLI enforces >= 1.
    if (n_f < 1 || w < 1 || n_c < 2 || n_layers < 0)
        throw std::logic_error("NetworkShape: invalid dimensions");
    if (n_layers > 0 && !(h > 0.0))
        throw std::logic_error("NetworkShape: step size must be positive");
}

ControlTrajectory ControlTrajectory::zeros(const NetworkShape& shape) {
    ControlTrajectory theta;
    theta.shape = shape;
    theta.opening = Matrix(shape.w, shape.n_f);
    theta.layers.resize(shape.n_layers);
    for (auto& layer : theta.layers) {
        layer.weights = Matrix(shape.w, shape.w);
        layer.bias.assign(shape.w, 0.0);
    }
    theta.classify_w = Matrix(shape.n_c, shape.w);
    theta.classify_b.assign(shape.n_c, 0.0);
    return theta;
}

std::size_t ControlTrajectory::parameter_count() const {
    std::size_t n = opening.size() + classify_w.size() + classify_b.size();
    for (const auto& layer : layers) n += layer.weights.size() + layer.bias.size();
    return n;
}

std::vector<double> ControlTrajectory::flatten() const {
    std::vector<double> v;
    v.reserve(parameter_count());
    v.insert(v.end(), opening.data().begin(), opening.data().end());
    for (const auto& layer : layers) {
        v.insert(v.end(), layer.weights.data().begin(), layer.weights.data().end());
        v.insert(v.end(), layer.bias.begin(), layer.bias.end());
    }
    v.insert(v.end(), classify_w.data().begin(), classify_w.data().end());
    v.insert(v.end(), classify_b.begin(), classify_b.end());
    return v;
}

ControlTrajectory ControlTrajectory::unflatten(const NetworkShape& shape,
                                               const std::vector<double>& v) {
    ControlTrajectory theta = zeros(shape);
    if (v.size() != theta.parameter_count())
        throw std::logic_error("ControlTrajectory::unflatten: size mismatch");
    std::size_t pos = 0;
    auto take = [&](double* dst, std::size_t n) {
        std::copy(v.begin() + pos, v.begin() + pos + n, dst);
        pos += n;
    };
    take(theta.opening.data().data(), theta.opening.size());
    for (auto& layer : theta.layers) {
        take(layer.weights.data().data(), layer.weights.size());
        take(layer.bias.data(), layer.bias.size());
    }
    take(theta.classify_w.data().data(), theta.classify_w.size());
    take(theta.classify_b.data(), theta.classify_b.size());
    return theta;
}

bool ControlTrajectory::all_finite() const {
    if (!opening.all_finite() || !classify_w.all_finite()) return false;
    for (double x : classify_b)
        if (!std::isfinite(x)) return false;
    for (const auto& layer : layers) {
        if (!layer.weights.all_finite()) return false;
        for (double x : layer.bias)
            if (!std::isfinite(x)) return false;
    }
    return true;
}

void Batch::validate() const {
    if (features.rows() != labels.rows())
        throw std::logic_error("Batch: feature/label row mismatch");
    for (int k = 0; k < labels.rows(); ++k) {
        double sum = 0.0;
        for (int j = 0; j < labels.cols(); ++j) {
            if (labels(k, j) < 0.0)
                throw std::logic_error("Batch: negative label entry in row " + std::to_string(k));
            sum += labels(k, j);
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::logic_error("Batch: label row " + std::to_string(k) +
                                   " does not sum to one");
    }
}

void Hyperparameters::validate() const {
    if (!(eps_relu > 0.0))
        throw std::logic_error("Hyperparameters: eps_relu must be positive");
    if (initial_weight_scale < 0.0 || gamma_tik < 0.0 || gamma_ddt < 0.0)
        throw std::logic_error("Hyperparameters: negative coefficient");
}

std::vector<double> layer_step(const std::vector<double>& u, const LayerParams& layer, double h,
                               double eps) {
    const int w = layer.weights.rows();
    if (static_cast<int>(u.size()) != w || layer.weights.cols() != w ||
        static_cast<int>(layer.bias.size()) != w)
        throw std::logic_error("layer_step: dimension mismatch");
    std::vector<double> out(w);
    for (int i = 0; i < w; ++i) {
        double z = layer.bias[i];
        const double* wrow = layer.weights.row(i);
        for (int j = 0; j < w; ++j) z += wrow[j] * u[j];
        out[i] = u[i] + h * smoothed_relu(z, eps);
    }
    return out;
}

void layer_step_batch(const Matrix& states, const LayerParams& layer, double h, double eps,
                      Matrix& out) {
    const int w = layer.weights.rows();
    check_shape(states, states.rows(), w, "layer_step_batch states");
    if (!out.same_shape(states)) out = Matrix(states.rows(), states.cols());
    for (int k = 0; k < states.rows(); ++k) {
        const double* u = states.row(k);
        double* o = out.row(k);
        for (int i = 0; i < w; ++i) {
            double z = layer.bias[i];
            const double* wrow = layer.weights.row(i);
            for (int j = 0; j < w; ++j) z += wrow[j] * u[j];
            o[i] = u[i] + h * smoothed_relu(z, eps);
        }
    }
}

LayerStepVjp layer_step_vjp(const std::vector<double>& u, const LayerParams& layer, double h,
                            double eps, const std::vector<double>& lam) {
    const int w = layer.weights.rows();
    if (static_cast<int>(u.size()) != w || static_cast<int>(lam.size()) != w)
        throw std::logic_error("layer_step_vjp: dimension mismatch");
    LayerStepVjp vjp;
    vjp.d_state = lam;
    vjp.d_weights = Matrix(w, w);
    vjp.d_bias.assign(w, 0.0);
    for (int i = 0; i < w; ++i) {
        double z = layer.bias[i];
        const double* wrow = layer.weights.row(i);
        for (int j = 0; j < w; ++j) z += wrow[j] * u[j];
        const double s = smoothed_relu_deriv(z, eps) * lam[i];
        vjp.d_bias[i] = h * s;
        double* drow = vjp.d_weights.row(i);
        for (int j = 0; j < w; ++j) {
            drow[j] = h * s * u[j];
            vjp.d_state[j] += h * wrow[j] * s;
        }
    }
    return vjp;
}

void adjoint_step_batch(const Matrix& lams, const Matrix& states, const LayerParams& layer,
                        double h, double eps, Matrix& out) {
    const int w = layer.weights.rows();
    if (!lams.same_shape(states))
        throw std::logic_error("adjoint_step_batch: state/adjoint shape mismatch");
    if (!out.same_shape(lams)) out = Matrix(lams.rows(), lams.cols());
    for (int k = 0; k < lams.rows(); ++k) {
        const double* u = states.row(k);
        const double* lam = lams.row(k);
        double* o = out.row(k);
        for (int j = 0; j < w; ++j) o[j] = lam[j];
        for (int i = 0; i < w; ++i) {
            double z = layer.bias[i];
            const double* wrow = layer.weights.row(i);
            for (int j = 0; j < w; ++j) z += wrow[j] * u[j];
            const double s = h * smoothed_relu_deriv(z, eps) * lam[i];
            for (int j = 0; j < w; ++j) o[j] += wrow[j] * s;
        }
    }
}

void layer_grad_batch(const Matrix& states, const Matrix& lams, const LayerParams& layer,
                      double h, double eps, Matrix& d_weights, std::vector<double>& d_bias) {
    const int w = layer.weights.rows();
    if (!d_weights.same_shape(layer.weights)) d_weights = Matrix(w, w);
    if (static_cast<int>(d_bias.size()) != w) d_bias.assign(w, 0.0);
    for (int k = 0; k < states.rows(); ++k) {
        const double* u = states.row(k);
        const double* lam = lams.row(k);
        for (int i = 0; i < w; ++i) {
            double z = layer.bias[i];
            const double* wrow = layer.weights.row(i);
            for (int j = 0; j < w; ++j) z += wrow[j] * u[j];
            const double s = h * smoothed_relu_deriv(z, eps) * lam[i];
            d_bias[i] += s;
            double* drow = d_weights.row(i);
            for (int j = 0; j < w; ++j) drow[j] += s * u[j];
        }
    }
}

std::vector<double> apply_opening(const std::vector<double>& y, const Matrix& opening) {
    if (static_cast<int>(y.size()) != opening.cols())
        throw std::logic_error("apply_opening: dimension mismatch");
    std::vector<double> u(opening.rows(), 0.0);
    for (int i = 0; i < opening.rows(); ++i) {
        double z = 0.0;
        const double* row = opening.row(i);
        for (int j = 0; j < opening.cols(); ++j) z += row[j] * y[j];
        u[i] = z;
    }
    return u;
}

void apply_opening_batch(const Matrix& features, const Matrix& opening, Matrix& out) {
    if (features.cols() != opening.cols())
        throw std::logic_error("apply_opening_batch: dimension mismatch");
    out = Matrix(features.rows(), opening.rows());
    for (int k = 0; k < features.rows(); ++k) {
        const double* y = features.row(k);
        double* o = out.row(k);
        for (int i = 0; i < opening.rows(); ++i) {
            double z = 0.0;
            const double* row = opening.row(i);
            for (int j = 0; j < opening.cols(); ++j) z += row[j] * y[j];
            o[i] = z;
        }
    }
}

namespace {

/// Max-shifted softmax of logits into probs; returns log of the normalizer
/// so that log(p_j) = z_j - max - log_sum.
void softmax_shifted(const std::vector<double>& logits, std::vector<double>& probs,
                     double& max_logit, double& log_sum) {
    max_logit = logits[0];
    for (double z : logits) max_logit = std::max(max_logit, z);
    double sum = 0.0;
    probs.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
        probs[j] = std::exp(logits[j] - max_logit);
        sum += probs[j];
    }
    for (double& p : probs) p /= sum;
    log_sum = std::log(sum);
}

std::vector<double> logits_of(const double* state, const Matrix& classify_w,
                              const std::vector<double>& classify_b) {
    std::vector<double> z(classify_w.rows());
    for (int i = 0; i < classify_w.rows(); ++i) {
        double v = classify_b[i];
        const double* row = classify_w.row(i);
        for (int j = 0; j < classify_w.cols(); ++j) v += row[j] * state[j];
        z[i] = v;
    }
    return z;
}

} // namespace

LossResult loss_and_grad(const std::vector<double>& final_state, const std::vector<double>& label,
                         const Matrix& classify_w, const std::vector<double>& classify_b) {
    const int n_c = classify_w.rows();
    const int w = classify_w.cols();
    if (static_cast<int>(final_state.size()) != w || static_cast<int>(label.size()) != n_c)
        throw std::logic_error("loss_and_grad: dimension mismatch");

    std::vector<double> z = logits_of(final_state.data(), classify_w, classify_b);
    for (double v : z)
        if (!std::isfinite(v)) throw std::runtime_error("numerical overflow in loss");

    std::vector<double> p;
    double max_logit, log_sum;
    softmax_shifted(z, p, max_logit, log_sum);

    LossResult res;
    res.loss = 0.0;
    for (int j = 0; j < n_c; ++j)
        if (label[j] != 0.0) res.loss -= label[j] * (z[j] - max_logit - log_sum);

    // d_logits = p - c; chain through the classification layer.
    res.d_classify_b.resize(n_c);
    res.d_classify_w = Matrix(n_c, w);
    res.d_state.assign(w, 0.0);
    for (int i = 0; i < n_c; ++i) {
        const double dz = p[i] - label[i];
        res.d_classify_b[i] = dz;
        double* drow = res.d_classify_w.row(i);
        const double* crow = classify_w.row(i);
        for (int j = 0; j < w; ++j) {
            drow[j] = dz * final_state[j];
            res.d_state[j] += crow[j] * dz;
        }
    }
    return res;
}

double mean_loss(const Matrix& final_states, const Matrix& labels, const Matrix& classify_w,
                 const std::vector<double>& classify_b) {
    if (final_states.rows() == 0) throw std::logic_error("mean_loss: empty batch");
    double total = 0.0;
    std::vector<double> p;
    for (int k = 0; k < final_states.rows(); ++k) {
        std::vector<double> z = logits_of(final_states.row(k), classify_w, classify_b);
        for (double v : z)
            if (!std::isfinite(v)) throw std::runtime_error("numerical overflow in loss");
        double max_logit, log_sum;
        softmax_shifted(z, p, max_logit, log_sum);
        for (int j = 0; j < labels.cols(); ++j)
            if (labels(k, j) != 0.0) total -= labels(k, j) * (z[j] - max_logit - log_sum);
    }
    return total / final_states.rows();
}

void predict(const Matrix& final_states, const Matrix& classify_w,
             const std::vector<double>& classify_b, Matrix& probabilities) {
    probabilities = Matrix(final_states.rows(), classify_w.rows());
    std::vector<double> p;
    for (int k = 0; k < final_states.rows(); ++k) {
        std::vector<double> z = logits_of(final_states.row(k), classify_w, classify_b);
        double max_logit, log_sum;
        softmax_shifted(z, p, max_logit, log_sum);
        for (int j = 0; j < classify_w.rows(); ++j) probabilities(k, j) = p[j];
    }
}

RegularizerResult regularizer_and_grad(const ControlTrajectory& theta,
                                       const Hyperparameters& hyper) {
    RegularizerResult res;
    res.grad = ControlTrajectory::zeros(theta.shape);
    const double h = theta.shape.h;
    const double gt = hyper.gamma_tik;
    const double gd = hyper.gamma_ddt;

    double value = 0.0;

    // Time-weighted Tikhonov on internal blocks.
    for (std::size_t n = 0; n < theta.layers.size(); ++n) {
        const auto& layer = theta.layers[n];
        value += 0.5 * gt * h * (layer.weights.frobenius_sq() + euclidean_norm_sq(layer.bias));
        auto& g = res.grad.layers[n];
        for (std::size_t i = 0; i < layer.weights.size(); ++i)
            g.weights.data()[i] += gt * h * layer.weights.data()[i];
        for (std::size_t i = 0; i < layer.bias.size(); ++i)
            g.bias[i] += gt * h * layer.bias[i];
    }

    // Unweighted Tikhonov on opening and classification blocks.
    value += 0.5 * gt *
             (theta.opening.frobenius_sq() + theta.classify_w.frobenius_sq() +
              euclidean_norm_sq(theta.classify_b));
    for (std::size_t i = 0; i < theta.opening.size(); ++i)
        res.grad.opening.data()[i] += gt * theta.opening.data()[i];
    for (std::size_t i = 0; i < theta.classify_w.size(); ++i)
        res.grad.classify_w.data()[i] += gt * theta.classify_w.data()[i];
    for (std::size_t i = 0; i < theta.classify_b.size(); ++i)
        res.grad.classify_b[i] += gt * theta.classify_b[i];

    // Time-difference penalty on the internal blocks only.
    if (gd != 0.0 && theta.layers.size() >= 2) {
        for (std::size_t n = 0; n + 1 < theta.layers.size(); ++n) {
            const auto& a = theta.layers[n];
            const auto& b = theta.layers[n + 1];
            auto& ga = res.grad.layers[n];
            auto& gb = res.grad.layers[n + 1];
            for (std::size_t i = 0; i < a.weights.size(); ++i) {
                const double d = b.weights.data()[i] - a.weights.data()[i];
                value += 0.5 * gd * d * d / h;
                gb.weights.data()[i] += gd * d / h;
                ga.weights.data()[i] -= gd * d / h;
            }
            for (std::size_t i = 0; i < a.bias.size(); ++i) {
                const double d = b.bias[i] - a.bias[i];
                value += 0.5 * gd * d * d / h;
                gb.bias[i] += gd * d / h;
                ga.bias[i] -= gd * d / h;
            }
        }
    }

    res.value = value;
    return res;
}

double regularizer_value(const ControlTrajectory& theta, const Hyperparameters& hyper) {
    const double h = theta.shape.h;
    double value = 0.0;
    for (const auto& layer : theta.layers)
        value += 0.5 * hyper.gamma_tik * h *
                 (layer.weights.frobenius_sq() + euclidean_norm_sq(layer.bias));
    value += 0.5 * hyper.gamma_tik *
             (theta.opening.frobenius_sq() + theta.classify_w.frobenius_sq() +
              euclidean_norm_sq(theta.classify_b));
    if (hyper.gamma_ddt != 0.0) {
        for (std::size_t n = 0; n + 1 < theta.layers.size(); ++n) {
            const auto& a = theta.layers[n];
            const auto& b = theta.layers[n + 1];
            for (std::size_t i = 0; i < a.weights.size(); ++i) {
                const double d = b.weights.data()[i] - a.weights.data()[i];
                value += 0.5 * hyper.gamma_ddt * d * d / h;
            }
            for (std::size_t i = 0; i < a.bias.size(); ++i) {
                const double d = b.bias[i] - a.bias[i];
                value += 0.5 * hyper.gamma_ddt * d * d / h;
            }
        }
    }
    return value;
}

double classification_accuracy(const Matrix& predictions, const Matrix& labels) {
    if (predictions.rows() == 0) throw std::runtime_error("empty evaluation set");
    if (predictions.rows() != labels.rows())
        throw std::logic_error("classification_accuracy: row mismatch");
    auto argmax = [](const double* row, int n) {
        int best = 0;
        for (int j = 1; j < n; ++j)
            if (row[j] > row[best]) best = j;
        return best;
    };
    int correct = 0;
    for (int k = 0; k < predictions.rows(); ++k)
        if (argmax(predictions.row(k), predictions.cols()) == argmax(labels.row(k), labels.cols()))
            ++correct;
    return static_cast<double>(correct) / predictions.rows();
}

} // namespace layertime
