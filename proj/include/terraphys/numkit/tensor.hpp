#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "terraphys/common.hpp"

namespace terraphys::numkit {

// Dense row-major real array. Values are float64 in memory; the on-disk
// weight format stores float32 (see weights_io.hpp).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> values;

    Tensor() = default;

    Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (static_cast<std::size_t>(count(shape)) != values.size())
            fail("Tensor: shape ", shape_str(shape), " does not match ", values.size(), " values");
    }

    static long long count(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) {
            if (d < 0) fail("Tensor: negative dimension in ", shape_str(s));
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) {
        const auto n = static_cast<std::size_t>(count(s));
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<int> s, double v) {
        const auto n = static_cast<std::size_t>(count(s));
        return Tensor(std::move(s), std::vector<double>(n, v));
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

    std::size_t size() const { return values.size(); }
    bool is_scalar() const { return values.size() == 1; }

    // 2-D accessors; every graph op works on matrices (scalars are [1,1]).
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const {
        if (shape.size() < 2) return shape.empty() ? 1 : 1;
        return shape[1];
    }

    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(values.begin(), values.end(), v); }
};

// ----------------------------------------------------------------------------
// Raw matrix kernels shared by the autodiff tape and the tape-free inference
// paths. All matrices are row-major.
namespace mat {

// C = A[m,k] * B[k,n]  (C overwritten)
inline void mul(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* ci = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = A + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double a = ai[p];
            const double* bp = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += a * bp[j];
        }
    }
}

// C += A[m,k] * B[k,n]
inline void mul_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* ci = C + static_cast<std::size_t>(i) * n;
        const double* ai = A + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double a = ai[p];
            const double* bp = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += a * bp[j];
        }
    }
}

// C += A^T[m,k] * B  with A stored [k,m]  => C is [m,n]
inline void mul_tn_acc(const double* A, const double* B, double* C, int k, int m, int n) {
    for (int p = 0; p < k; ++p) {
        const double* ap = A + static_cast<std::size_t>(p) * m;
        const double* bp = B + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double a = ap[i];
            double* ci = C + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += a * bp[j];
        }
    }
}

// C += A[m,k] * B^T with B stored [n,k] => C is [m,n]
inline void mul_nt_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = A + static_cast<std::size_t>(i) * k;
        double* ci = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = B + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// y = x[m,k] * W[k,n] + b[n], the dense-layer fast path.
inline void affine(const double* x, const double* W, const double* b, double* y, int m, int k, int n) {
    mul(x, W, y, m, k, n);
    for (int i = 0; i < m; ++i) {
        double* yi = y + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) yi[j] += b[j];
    }
}

} // namespace mat

} // namespace terraphys::numkit
