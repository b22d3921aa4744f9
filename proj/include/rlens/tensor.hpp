#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlens/rng.hpp"

namespace rlens {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of 64-bit floats. The single numeric carrier for
/// model weights, activations, and gradients. Treated as immutable once it
/// participates in a Tape; mutating accessors exist for construction and
/// optimizer state.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor scalar(double value);
    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0);

    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    /// Rows/cols of a rank-2 tensor (rank-1 counts as a single row).
    int rows() const;
    int cols() const;

    double& at(int r, int c);
    double at(int r, int c) const;

    bool finite() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

} // namespace rlens
