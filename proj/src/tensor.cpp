#include "rlens/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rlens {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    for (int dim : shape) {
        if (dim <= 0) {
            throw std::invalid_argument("Tensor: nonpositive dimension in " + shape_str(shape));
        }
    }
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(data.size()) + " values");
    }
}

Tensor Tensor::zeros(const Shape& shape) {
    return Tensor(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), 0.0));
}

Tensor Tensor::full(const Shape& shape, double value) {
    return Tensor(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev) {
    Tensor t = zeros(shape);
    for (double& v : t.data) {
        v = rng.gaussian() * stddev;
    }
    return t;
}

int Tensor::rows() const {
    if (rank() == 1) return 1;
    if (rank() == 2) return shape[0];
    throw std::invalid_argument("Tensor::rows: rank-" + std::to_string(rank()) + " tensor");
}

int Tensor::cols() const {
    if (rank() == 1) return shape[0];
    if (rank() == 2) return shape[1];
    throw std::invalid_argument("Tensor::cols: rank-" + std::to_string(rank()) + " tensor");
}

double& Tensor::at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }

double Tensor::at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

bool Tensor::finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

} // namespace rlens
