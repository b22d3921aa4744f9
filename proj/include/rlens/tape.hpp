#pragma once

#include <functional>
#include <vector>

#include "rlens/tensor.hpp"

namespace rlens {

/// Reverse-mode autodiff tape over whole-tensor primitives.
///
/// Operations record their forward value plus a backward closure in topological
/// order; backward() sweeps the record once in reverse, accumulating gradients
/// for every node that (transitively) depends on a grad-enabled leaf. A tape
/// built with grad_enabled=false skips all closure bookkeeping and acts as an
/// eager evaluator. Tapes are single-threaded and rebuilt per optimization
/// step.
class Tape {
  public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int leaf(Tensor value, bool requires_grad = false);
    int constant(Tensor value) { return leaf(std::move(value), false); }

    // Elementwise and broadcast arithmetic.
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, double s);
    int add_rowvec(int a, int v); // [R x C] + [C], broadcast over rows

    // Matrix products ([m x k] inputs; _nt multiplies by the transpose).
    int matmul(int a, int b);    // [m x k] * [k x n]
    int matmul_nt(int a, int b); // [m x k] * [n x k]^T

    // Nonlinearities and reductions.
    int gelu(int a);
    int log_clamped(int a); // log(max(x, 1e-12))
    int sum(int a);         // scalar
    int mean(int a);        // scalar
    int dot(int a, int b);  // scalar, same-shape inputs
    int softmax_rows(int a);
    int causal_softmax(int a); // square [S x S]; row i normalized over cols 0..i
    int layer_norm(int a, int gain, int bias);

    // Structure.
    int embedding_rows(int table, std::vector<int> ids);
    int gather_rows(int a, std::vector<int> row_ids);
    int slice_cols(int a, int c0, int c1);
    int concat_cols(const std::vector<int>& parts);
    int concat_rows(const std::vector<int>& parts);
    int reshape(int a, Shape s);
    int transpose(int a);
    int add_at_rows(int a, int b, int row0);                 // rows [row0, row0+rows(b)) += b
    int replace_rows(int a, int b, std::vector<int> row_ids); // rows row_ids[j] = b row j

    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool grad_enabled() const { return grad_enabled_; }
    int size() const { return static_cast<int>(nodes_.size()); }

    /// Reverse sweep from a scalar loss node. Each recorded operation is
    /// visited exactly once. Gradients are then available via grad().
    void backward(int loss);

    /// Gradient of the last backward()'s loss w.r.t. node id (zeros if the
    /// node did not participate).
    const Tensor& grad(int id) const;

  private:
    struct Node {
        Tensor value;
        Tensor grad;                // empty until touched by backward
        bool requires_grad = false; // this node or an ancestor is a grad leaf
        std::function<void(Tape&)> back;
    };

    std::vector<Node> nodes_;
    bool grad_enabled_;
    mutable Tensor zero_scratch_;

    int push(Tensor value, bool requires_grad, std::function<void(Tape&)> back);
    bool track(int id) const { return grad_enabled_ && nodes_[static_cast<size_t>(id)].requires_grad; }
    Tensor& grad_buf(int id);
    const Tensor& check(int id) const;
    void check2d(int id, const char* op) const;
};

} // namespace rlens
