#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "eqrgan/common.hpp"

namespace eqrgan::diffcore {

// Dense row-major matrix. Batched per-path quantities are stored with the
// batch along columns, so one MLP evaluation over a shard is a single GEMM.
template <typename T>
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, T(0)) {}

    static Matrix zeros(int r, int c) { return Matrix(r, c); }
    static Matrix full(int r, int c, T v) {
        Matrix m(r, c);
        std::fill(m.a.begin(), m.a.end(), v);
        return m;
    }

    T& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    const T& operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    T* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const T* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

    size_t size() const { return a.size(); }
    bool empty() const { return a.empty(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    void set_zero() { std::fill(a.begin(), a.end(), T(0)); }

    bool all_finite() const {
        for (const T& v : a)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

namespace kernels {

// C = A * B, with A (p x q), B (q x n).
template <typename T>
void gemm(const Matrix<T>& A, const Matrix<T>& B, Matrix<T>& C) {
    C.set_zero();
    for (int i = 0; i < A.rows; ++i) {
        T* ci = C.row(i);
        for (int k = 0; k < A.cols; ++k) {
            const T aik = A(i, k);
            const T* bk = B.row(k);
            for (int j = 0; j < B.cols; ++j) ci[j] += aik * bk[j];
        }
    }
}

// dA += dC * B^T
template <typename T>
void gemm_acc_a_bt(const Matrix<T>& dC, const Matrix<T>& B, Matrix<T>& dA) {
    for (int i = 0; i < dC.rows; ++i) {
        const T* dci = dC.row(i);
        for (int k = 0; k < B.rows; ++k) {
            const T* bk = B.row(k);
            T acc = T(0);
            for (int j = 0; j < dC.cols; ++j) acc += dci[j] * bk[j];
            dA(i, k) += acc;
        }
    }
}

// dB += A^T * dC
template <typename T>
void gemm_acc_at_b(const Matrix<T>& A, const Matrix<T>& dC, Matrix<T>& dB) {
    for (int k = 0; k < A.cols; ++k) {
        T* dbk = dB.row(k);
        for (int i = 0; i < A.rows; ++i) {
            const T aik = A(i, k);
            const T* dci = dC.row(i);
            for (int j = 0; j < dC.cols; ++j) dbk[j] += aik * dci[j];
        }
    }
}

template <typename T>
void add_col_bias(Matrix<T>& X, const Matrix<T>& bias) {
    for (int i = 0; i < X.rows; ++i) {
        T* xi = X.row(i);
        const T b = bias(i, 0);
        for (int j = 0; j < X.cols; ++j) xi[j] += b;
    }
}

template <typename T>
void tanh_inplace(Matrix<T>& X) {
    for (T& v : X.a) v = std::tanh(v);
}

template <typename T>
T softplus_scalar(T x) {
    // log(1 + e^x), stable for large |x|
    if (x > T(30)) return x;
    if (x < T(-30)) return std::exp(x);
    return std::log1p(std::exp(x));
}

template <typename T>
T abs_pow_scalar(T x, T p) {
    const T ax = std::abs(x);
    if (ax == T(0)) return T(0);
    return std::pow(ax, p);
}

// d/dx |x|^p with the subgradient at 0 taken as 0.
template <typename T>
T abs_pow_grad_scalar(T x, T p) {
    if (x == T(0)) return T(0);
    const T s = x > T(0) ? T(1) : T(-1);
    return p * s * std::pow(std::abs(x), p - T(1));
}

template <typename T>
T sign_abs_pow_scalar(T x, T p) {
    if (x == T(0)) return T(0);
    const T s = x > T(0) ? T(1) : T(-1);
    return s * std::pow(std::abs(x), p);
}

// d/dx sign(x)|x|^p; 0 at the kink unless the map is the identity.
template <typename T>
T sign_abs_pow_grad_scalar(T x, T p) {
    if (x == T(0)) return p == T(1) ? T(1) : T(0);
    return p * std::pow(std::abs(x), p - T(1));
}

}  // namespace kernels

}  // namespace eqrgan::diffcore
