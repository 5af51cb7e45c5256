#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ecsac/errors.hpp"

#ifdef ECSAC_HAVE_EIGEN
#include <Eigen/Core>
#endif

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ecsac {

namespace detail {

/// The training loop churns ~0.5 MB activation matrices on every GEMM and
/// glibc's default mmap threshold hands blocks that size straight back to
/// the kernel, so each step pays mmap and soft-fault costs (~3x slowdown
/// measured). Raising the thresholds keeps them in the arena.
inline void tune_malloc_once() {
#if defined(__GLIBC__)
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 64 << 20);
        mallopt(M_TRIM_THRESHOLD, 64 << 20);
        return true;
    }();
    (void)done;
#endif
}

} // namespace detail

/// Dense row-major matrix of doubles. The whole engine runs at 64-bit
/// precision; desk-scale networks make the memory cost irrelevant and it
/// tightens the gradient-check tolerances.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // row-major, data.size() == rows*cols

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const double& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row_ptr(std::size_t i) { return data.data() + i * cols; }
    const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

namespace detail {

#ifdef ECSAC_HAVE_EIGEN
using EigenMapC = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using EigenMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
#endif

} // namespace detail

/// C = A * B
inline Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw ConfigError("matmul_nn: inner dimensions differ");
    Matrix c(a.rows, b.cols);
#ifdef ECSAC_HAVE_EIGEN
    detail::EigenMap(c.data.data(), c.rows, c.cols).noalias() =
        detail::EigenMapC(a.data.data(), a.rows, a.cols) *
        detail::EigenMapC(b.data.data(), b.rows, b.cols);
#else
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            const double* brow = b.row_ptr(k);
            double* crow = c.row_ptr(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
#endif
    return c;
}

/// C = A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw ConfigError("matmul_nt: inner dimensions differ");
    Matrix c(a.rows, b.rows);
#ifdef ECSAC_HAVE_EIGEN
    detail::EigenMap(c.data.data(), c.rows, c.cols).noalias() =
        detail::EigenMapC(a.data.data(), a.rows, a.cols) *
        detail::EigenMapC(b.data.data(), b.rows, b.cols).transpose();
#else
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* arow = a.row_ptr(i);
            const double* brow = b.row_ptr(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            c(i, j) = acc;
        }
#endif
    return c;
}

/// C = A^T * B
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw ConfigError("matmul_tn: inner dimensions differ");
    Matrix c(a.cols, b.cols);
#ifdef ECSAC_HAVE_EIGEN
    detail::EigenMap(c.data.data(), c.rows, c.cols).noalias() =
        detail::EigenMapC(a.data.data(), a.rows, a.cols).transpose() *
        detail::EigenMapC(b.data.data(), b.rows, b.cols);
#else
    for (std::size_t k = 0; k < a.rows; ++k)
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = a(k, i);
            const double* brow = b.row_ptr(k);
            double* crow = c.row_ptr(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
#endif
    return c;
}

} // namespace ecsac
