#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poems/errors.hpp"
#include "poems/rng.hpp"

namespace poems {

/// Dense row-major matrix of doubles. Plain data; all heavy products go
/// through Eigen maps of the underlying buffer.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // rows*cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        data.reserve(rows * cols);
        for (const auto& row : init) {
            if (row.size() != cols) throw shape_error("Matrix init: ragged rows");
            data.insert(data.end(), row.begin(), row.end());
        }
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row_ptr(std::size_t i) { return data.data() + i * cols; }
    const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EigenRowMajor>;
using MapConst = Eigen::Map<const EigenRowMajor>;

inline MapConst as_eigen(const Matrix& m) {
    return MapConst(m.data.data(), static_cast<Eigen::Index>(m.rows),
                    static_cast<Eigen::Index>(m.cols));
}

inline MapMat as_eigen(Matrix& m) {
    return MapMat(m.data.data(), static_cast<Eigen::Index>(m.rows),
                  static_cast<Eigen::Index>(m.cols));
}

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

/// C = A * B
inline void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.cols != b.rows)
        throw shape_error("matmul: " + shape_str(a) + " * " + shape_str(b));
    out.rows = a.rows;
    out.cols = b.cols;
    out.data.resize(a.rows * b.cols);
    as_eigen(out).noalias() = as_eigen(a) * as_eigen(b);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out;
    matmul(a, b, out);
    return out;
}

/// C = A^T * B  (no transpose materialized)
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw shape_error("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
    Matrix out(a.cols, b.cols);
    as_eigen(out).noalias() = as_eigen(a).transpose() * as_eigen(b);
    return out;
}

/// C = A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw shape_error("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
    Matrix out(a.rows, b.rows);
    as_eigen(out).noalias() = as_eigen(a) * as_eigen(b).transpose();
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j)
            out(j, i) = m(i, j);
    return out;
}

/// Row vector of column sums.
inline Matrix colsum(const Matrix& m) {
    Matrix out(1, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row_ptr(i);
        for (std::size_t j = 0; j < m.cols; ++j) out.data[j] += r[j];
    }
    return out;
}

inline void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw shape_error("add: " + shape_str(a) + " vs " + shape_str(b));
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

inline void scale_inplace(Matrix& a, double s) {
    for (double& v : a.data) v *= s;
}

/// Adds row vector b (1xC) to every row of a.
inline void add_rowvec_inplace(Matrix& a, const Matrix& b) {
    if (b.rows != 1 || b.cols != a.cols)
        throw shape_error("add_rowvec: " + shape_str(a) + " vs " + shape_str(b));
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* r = a.row_ptr(i);
        for (std::size_t j = 0; j < a.cols; ++j) r[j] += b.data[j];
    }
}

inline Matrix random_uniform(std::size_t r, std::size_t c, double lo, double hi, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

inline Matrix random_normal(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.normal();
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw shape_error("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

} // namespace poems
