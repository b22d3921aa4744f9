#pragma once

#include <cmath>
#include <cstddef>

namespace rlens::kernels {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kLogClamp = 1e-12;

/// c[m x n] += a[m x k] * b[k x n]
inline void mm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
}

/// c[m x n] += a[m x k] * b[n x k]^T
inline void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) {
                acc += arow[kk] * brow[kk];
            }
            crow[j] += acc;
        }
    }
}

/// c[m x n] += a[k x m]^T * b[k x n]
inline void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int kk = 0; kk < k; ++kk) {
        const double* arow = a + static_cast<size_t>(kk) * m;
        const double* brow = b + static_cast<size_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
            const double aki = arow[i];
            double* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += aki * brow[j];
            }
        }
    }
}

/// Numerically stabilized softmax over one row (max subtraction).
inline void softmax_row(const double* x, double* y, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) {
        if (x[i] > mx) mx = x[i];
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        total += y[i];
    }
    const double inv = 1.0 / total;
    for (int i = 0; i < n; ++i) {
        y[i] *= inv;
    }
}

/// y = gain * (x - mean) / sqrt(var + eps) + bias over one row.
/// Returns 1/sqrt(var + eps); writes the pre-affine normalized row to xhat
/// when xhat is non-null (needed by the backward pass).
inline double layer_norm_row(const double* x, const double* gain, const double* bias, double* y,
                             int n, double* xhat = nullptr) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
        mean += x[i];
    }
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = x[i] - mean;
        var += d * d;
    }
    var /= n;
    const double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int i = 0; i < n; ++i) {
        const double nx = (x[i] - mean) * inv_sigma;
        if (xhat) xhat[i] = nx;
        y[i] = gain[i] * nx + bias[i];
    }
    return inv_sigma;
}

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475)); }

inline double gelu_grad(double x) {
    const double phi_cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
    const double phi_pdf = 0.3989422804014327 * std::exp(-0.5 * x * x);
    return phi_cdf + x * phi_pdf;
}

} // namespace rlens::kernels
