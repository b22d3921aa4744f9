#pragma once

// Test-only reference implementations, kept independent of the library's
// compute paths so they can serve as oracles.

#include <cmath>
#include <functional>
#include <vector>

#include "rlens/tape.hpp"
#include "rlens/tensor.hpp"

namespace oracles {

/// Scalar triple-loop matrix product.
inline rlens::Tensor matmul_naive(const rlens::Tensor& a, const rlens::Tensor& b) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    rlens::Tensor c = rlens::Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) {
                acc += a.at(i, t) * b.at(t, j);
            }
            c.at(i, j) = acc;
        }
    }
    return c;
}

/// Extended-precision softmax (long double accumulation, no max subtraction).
inline std::vector<double> softmax_ld(const std::vector<double>& x) {
    long double total = 0.0L;
    std::vector<long double> e(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        e[i] = expl(static_cast<long double>(x[i]));
        total += e[i];
    }
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        y[i] = static_cast<double>(e[i] / total);
    }
    return y;
}

/// Scalar layer norm with the library's epsilon.
inline std::vector<double> layer_norm_naive(const std::vector<double>& x,
                                            const std::vector<double>& gain,
                                            const std::vector<double>& bias) {
    const double eps = 1e-5;
    const int n = static_cast<int>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    std::vector<double> y(x.size());
    for (int i = 0; i < n; ++i) {
        y[static_cast<size_t>(i)] =
            gain[static_cast<size_t>(i)] * ((x[static_cast<size_t>(i)] - mean) / std::sqrt(var + eps)) +
            bias[static_cast<size_t>(i)];
    }
    return y;
}

/// Extended-precision KL divergence with the library's clamp convention.
inline double kl_ld(const std::vector<double>& p, const std::vector<double>& q) {
    long double kl = 0.0L;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            const long double denom = q[i] < 1e-12 ? 1e-12L : static_cast<long double>(q[i]);
            kl += static_cast<long double>(p[i]) * (logl(static_cast<long double>(p[i])) - logl(denom));
        }
    }
    return static_cast<double>(kl);
}

/// Builds a scalar loss node from leaf ids; used by the finite-difference
/// gradient checker below.
using GraphBuilder = std::function<int(rlens::Tape&, const std::vector<int>&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    bool ok = true;
};

/// Central finite differences (step 1e-6) against reverse-mode gradients for
/// every coordinate of every input. Relative error uses a floor tied to the
/// gradient's magnitude so near-zero coordinates do not divide by noise.
inline GradCheckResult check_gradients(const std::vector<rlens::Tensor>& inputs,
                                       const GraphBuilder& build, double tol = 1e-6) {
    using rlens::Tape;
    using rlens::Tensor;
    const double h = 1e-6;

    Tape tape(true);
    std::vector<int> ids;
    for (const Tensor& t : inputs) {
        ids.push_back(tape.leaf(t, true));
    }
    const int loss = build(tape, ids);
    tape.backward(loss);
    std::vector<Tensor> grads;
    double grad_inf = 0.0;
    for (int id : ids) {
        grads.push_back(tape.grad(id));
        for (double v : grads.back().data) {
            grad_inf = std::max(grad_inf, std::abs(v));
        }
    }

    auto eval = [&](const std::vector<Tensor>& point) {
        Tape t(false);
        std::vector<int> leaf_ids;
        for (const Tensor& v : point) {
            leaf_ids.push_back(t.leaf(v, false));
        }
        return t.val(build(t, leaf_ids)).data[0];
    };

    const double floor = std::max(1e-3 * grad_inf, 1e-10);
    GradCheckResult result;
    std::vector<Tensor> point = inputs;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t j = 0; j < inputs[i].data.size(); ++j) {
            const double orig = point[i].data[j];
            point[i].data[j] = orig + h;
            const double up = eval(point);
            point[i].data[j] = orig - h;
            const double down = eval(point);
            point[i].data[j] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double ad = grads[i].data[j];
            const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor});
            result.max_rel_error = std::max(result.max_rel_error, rel);
            if (rel >= tol) {
                result.ok = false;
            }
        }
    }
    return result;
}

} // namespace oracles
