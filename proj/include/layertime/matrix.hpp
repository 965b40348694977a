/// Minimal dense row-major matrix used for batched network states and
/// weight blocks. Sized for small widths (tens to a few hundred columns);
/// all hot loops live in the modules that own them.

#ifndef LAYERTIME_MATRIX_HPP
#define LAYERTIME_MATRIX_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace layertime {

class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols, double value = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, value) {
        if (rows < 0 || cols < 0)
            throw std::logic_error("Matrix: negative dimension");
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
    const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    void fill(double value) {
        for (double& x : data_) x = value;
    }

    void set_zero() { fill(0.0); }

    double frobenius_sq() const {
        double s = 0.0;
        for (double x : data_) s += x * x;
        return s;
    }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw std::logic_error("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline void check_shape(const Matrix& m, int rows, int cols, const std::string& what) {
    if (m.rows() != rows || m.cols() != cols)
        throw std::logic_error(what + ": expected " + std::to_string(rows) + "x" +
                               std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                               std::to_string(m.cols()));
}

inline double euclidean_norm_sq(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

} // namespace layertime

#endif // LAYERTIME_MATRIX_HPP
