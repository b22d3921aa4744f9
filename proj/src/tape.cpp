#include "rlens/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rlens/kernels.hpp"

namespace rlens {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

} // namespace

int Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> back) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad && grad_enabled_;
    if (node.requires_grad) {
        node.back = std::move(back);
    }
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

const Tensor& Tape::check(int id) const {
    require(id >= 0 && id < size(), "Tape: node id out of range");
    return nodes_[static_cast<size_t>(id)].value;
}

void Tape::check2d(int id, const char* op) const {
    const Tensor& t = check(id);
    require(t.rank() <= 2, std::string(op) + ": expects rank <= 2, got " + shape_str(t.shape));
}

Tensor& Tape::grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) {
        n.grad = Tensor::zeros(n.value.shape);
    }
    return n.grad;
}

int Tape::leaf(Tensor value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
}

int Tape::add(int a, int b) {
    const Tensor& ta = check(a);
    const Tensor& tb = check(b);
    require(ta.same_shape(tb), "add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] += tb.data[i];
    }
    const bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, b](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.track(a)) {
                Tensor& ga = t.grad_buf(a);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (t.track(b)) {
                Tensor& gb = t.grad_buf(b);
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
            }
        };
    }
    return self;
}

int Tape::sub(int a, int b) {
    const Tensor& ta = check(a);
    const Tensor& tb = check(b);
    require(ta.same_shape(tb), "sub: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] -= tb.data[i];
    }
    const bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, b](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.track(a)) {
                Tensor& ga = t.grad_buf(a);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (t.track(b)) {
                Tensor& gb = t.grad_buf(b);
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
            }
        };
    }
    return self;
}

int Tape::mul(int a, int b) {
    const Tensor& ta = check(a);
    const Tensor& tb = check(b);
    require(ta.same_shape(tb), "mul: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] *= tb.data[i];
    }
    const bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, b](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& va = t.nodes_[a].value;
            const Tensor& vb = t.nodes_[b].value;
            if (t.track(a)) {
                Tensor& ga = t.grad_buf(a);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * vb.data[i];
            }
            if (t.track(b)) {
                Tensor& gb = t.grad_buf(b);
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * va.data[i];
            }
        };
    }
    return self;
}

int Tape::scale(int a, double s) {
    Tensor out = check(a);
    for (double& v : out.data) {
        v *= s;
    }
    int self = push(std::move(out), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, s](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor& ga = t.grad_buf(a);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += s * g.data[i];
        };
    }
    return self;
}

int Tape::add_rowvec(int a, int v) {
    const Tensor& ta = check(a);
    const Tensor& tv = check(v);
    require(tv.rank() == 1, "add_rowvec: vector must be rank 1");
    require(ta.cols() == tv.cols(),
            "add_rowvec: width mismatch " + shape_str(ta.shape) + " vs " + shape_str(tv.shape));
    Tensor out = ta;
    const int rows = ta.rows();
    const int cols = ta.cols();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            out.data[static_cast<size_t>(r) * cols + c] += tv.data[static_cast<size_t>(c)];
        }
    }
    const bool req = nodes_[a].requires_grad || nodes_[v].requires_grad;
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, v, rows, cols](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.track(a)) {
                Tensor& ga = t.grad_buf(a);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (t.track(v)) {
                Tensor& gv = t.grad_buf(v);
                for (int r = 0; r < rows; ++r) {
                    for (int c = 0; c < cols; ++c) {
                        gv.data[static_cast<size_t>(c)] += g.data[static_cast<size_t>(r) * cols + c];
                    }
                }
            }
        };
    }
    return self;
}

int Tape::matmul(int a, int b) {
    const Tensor& ta = check(a);
    const Tensor& tb = check(b);
    require(ta.rank() == 2 && tb.rank() == 2, "matmul: both operands must be rank 2");
    require(ta.cols() == tb.rows(),
            "matmul: inner dimension mismatch " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    const int m = ta.rows(), k = ta.cols(), n = tb.cols();
    Tensor out = Tensor::zeros({m, n});
    kernels::mm_nn_acc(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
    const bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, b, m, k, n](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.track(a)) { // dA += dC * B^T
                kernels::mm_nt_acc(g.data.data(), t.nodes_[b].value.data.data(),
                                   t.grad_buf(a).data.data(), m, n, k);
            }
            if (t.track(b)) { // dB += A^T * dC
                kernels::mm_tn_acc(t.nodes_[a].value.data.data(), g.data.data(),
                                   t.grad_buf(b).data.data(), k, m, n);
            }
        };
    }
    return self;
}

int Tape::matmul_nt(int a, int b) {
    const Tensor& ta = check(a);
    const Tensor& tb = check(b);
    require(ta.rank() == 2 && tb.rank() == 2, "matmul_nt: both operands must be rank 2");
    require(ta.cols() == tb.cols(),
            "matmul_nt: inner dimension mismatch " + shape_str(ta.shape) + " x " + shape_str(tb.shape) + "^T");
    const int m = ta.rows(), k = ta.cols(), n = tb.rows();
    Tensor out = Tensor::zeros({m, n});
    kernels::mm_nt_acc(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
    const bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, b, m, k, n](Tape& t) {
            const Tensor& g = t.nodes_[self].grad; // [m x n]
            if (t.track(a)) {                      // dA += dC * B
                kernels::mm_nn_acc(g.data.data(), t.nodes_[b].value.data.data(),
                                   t.grad_buf(a).data.data(), m, n, k);
            }
            if (t.track(b)) { // dB += dC^T * A
                kernels::mm_tn_acc(g.data.data(), t.nodes_[a].value.data.data(),
                                   t.grad_buf(b).data.data(), n, m, k);
            }
        };
    }
    return self;
}

int Tape::gelu(int a) {
    const Tensor& ta = check(a);
    Tensor out = ta;
    for (double& v : out.data) {
        v = kernels::gelu(v);
    }
    int self = push(std::move(out), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& x = t.nodes_[a].value;
            Tensor& ga = t.grad_buf(a);
            for (size_t i = 0; i < g.data.size(); ++i) {
                ga.data[i] += g.data[i] * kernels::gelu_grad(x.data[i]);
            }
        };
    }
    return self;
}

int Tape::log_clamped(int a) {
    const Tensor& ta = check(a);
    Tensor out = ta;
    for (double& v : out.data) {
        v = std::log(std::max(v, kernels::kLogClamp));
    }
    int self = push(std::move(out), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& x = t.nodes_[a].value;
            Tensor& ga = t.grad_buf(a);
            for (size_t i = 0; i < g.data.size(); ++i) {
                if (x.data[i] >= kernels::kLogClamp) {
                    ga.data[i] += g.data[i] / x.data[i];
                }
            }
        };
    }
    return self;
}

int Tape::sum(int a) {
    const Tensor& ta = check(a);
    double total = 0.0;
    for (double v : ta.data) {
        total += v;
    }
    int self = push(Tensor::scalar(total), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a](Tape& t) {
            const double g = t.nodes_[self].grad.data[0];
            Tensor& ga = t.grad_buf(a);
            for (double& v : ga.data) v += g;
        };
    }
    return self;
}

int Tape::mean(int a) {
    const Tensor& ta = check(a);
    double total = 0.0;
    for (double v : ta.data) {
        total += v;
    }
    const double inv_n = 1.0 / static_cast<double>(ta.numel());
    int self = push(Tensor::scalar(total * inv_n), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, inv_n](Tape& t) {
            const double g = t.nodes_[self].grad.data[0] * inv_n;
            Tensor& ga = t.grad_buf(a);
            for (double& v : ga.data) v += g;
        };
    }
    return self;
}

int Tape::dot(int a, int b) {
    const Tensor& ta = check(a);
    const Tensor& tb = check(b);
    require(ta.same_shape(tb), "dot: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    double total = 0.0;
    for (size_t i = 0; i < ta.data.size(); ++i) {
        total += ta.data[i] * tb.data[i];
    }
    const bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    int self = push(Tensor::scalar(total), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, b](Tape& t) {
            const double g = t.nodes_[self].grad.data[0];
            const Tensor& va = t.nodes_[a].value;
            const Tensor& vb = t.nodes_[b].value;
            if (t.track(a)) {
                Tensor& ga = t.grad_buf(a);
                for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g * vb.data[i];
            }
            if (t.track(b)) {
                Tensor& gb = t.grad_buf(b);
                for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += g * va.data[i];
            }
        };
    }
    return self;
}

int Tape::softmax_rows(int a) {
    check2d(a, "softmax_rows");
    const Tensor& ta = check(a);
    const int rows = ta.rows(), cols = ta.cols();
    Tensor out = ta;
    for (int r = 0; r < rows; ++r) {
        kernels::softmax_row(ta.data.data() + static_cast<size_t>(r) * cols,
                             out.data.data() + static_cast<size_t>(r) * cols, cols);
    }
    int self = push(std::move(out), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, rows, cols](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& y = t.nodes_[self].value;
            Tensor& ga = t.grad_buf(a);
            for (int r = 0; r < rows; ++r) {
                const size_t off = static_cast<size_t>(r) * cols;
                double s = 0.0;
                for (int c = 0; c < cols; ++c) s += g.data[off + c] * y.data[off + c];
                for (int c = 0; c < cols; ++c) {
                    ga.data[off + c] += y.data[off + c] * (g.data[off + c] - s);
                }
            }
        };
    }
    return self;
}

int Tape::causal_softmax(int a) {
    const Tensor& ta = check(a);
    require(ta.rank() == 2 && ta.rows() == ta.cols(), "causal_softmax: expects a square matrix");
    const int n = ta.rows();
    Tensor out = Tensor::zeros({n, n});
    for (int r = 0; r < n; ++r) {
        const size_t off = static_cast<size_t>(r) * n;
        kernels::softmax_row(ta.data.data() + off, out.data.data() + off, r + 1);
        // entries past the diagonal stay zero
    }
    int self = push(std::move(out), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, n](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& y = t.nodes_[self].value;
            Tensor& ga = t.grad_buf(a);
            for (int r = 0; r < n; ++r) {
                const size_t off = static_cast<size_t>(r) * n;
                double s = 0.0;
                for (int c = 0; c <= r; ++c) s += g.data[off + c] * y.data[off + c];
                for (int c = 0; c <= r; ++c) {
                    ga.data[off + c] += y.data[off + c] * (g.data[off + c] - s);
                }
            }
        };
    }
    return self;
}

int Tape::layer_norm(int a, int gain, int bias) {
    check2d(a, "layer_norm");
    const Tensor& ta = check(a);
    const Tensor& tg = check(gain);
    const Tensor& tb = check(bias);
    const int rows = ta.rows(), cols = ta.cols();
    require(tg.rank() == 1 && tg.cols() == cols, "layer_norm: gain must be rank-1 of width " + std::to_string(cols));
    require(tb.rank() == 1 && tb.cols() == cols, "layer_norm: bias must be rank-1 of width " + std::to_string(cols));
    Tensor out = ta;
    Tensor xhat = ta;
    std::vector<double> inv_sigma(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const size_t off = static_cast<size_t>(r) * cols;
        inv_sigma[static_cast<size_t>(r)] =
            kernels::layer_norm_row(ta.data.data() + off, tg.data.data(), tb.data.data(),
                                    out.data.data() + off, cols, xhat.data.data() + off);
    }
    const bool req =
        nodes_[a].requires_grad || nodes_[gain].requires_grad || nodes_[bias].requires_grad;
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, gain, bias, rows, cols, xhat = std::move(xhat),
                             inv_sigma = std::move(inv_sigma)](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& tg2 = t.nodes_[gain].value;
            if (t.track(a)) {
                Tensor& ga = t.grad_buf(a);
                for (int r = 0; r < rows; ++r) {
                    const size_t off = static_cast<size_t>(r) * cols;
                    double mean_dyg = 0.0, mean_dyg_xhat = 0.0;
                    for (int c = 0; c < cols; ++c) {
                        const double dyg = g.data[off + c] * tg2.data[static_cast<size_t>(c)];
                        mean_dyg += dyg;
                        mean_dyg_xhat += dyg * xhat.data[off + c];
                    }
                    mean_dyg /= cols;
                    mean_dyg_xhat /= cols;
                    const double is = inv_sigma[static_cast<size_t>(r)];
                    for (int c = 0; c < cols; ++c) {
                        const double dyg = g.data[off + c] * tg2.data[static_cast<size_t>(c)];
                        ga.data[off + c] +=
                            is * (dyg - mean_dyg - xhat.data[off + c] * mean_dyg_xhat);
                    }
                }
            }
            if (t.track(gain)) {
                Tensor& gg = t.grad_buf(gain);
                for (int r = 0; r < rows; ++r) {
                    const size_t off = static_cast<size_t>(r) * cols;
                    for (int c = 0; c < cols; ++c) {
                        gg.data[static_cast<size_t>(c)] += g.data[off + c] * xhat.data[off + c];
                    }
                }
            }
            if (t.track(bias)) {
                Tensor& gb = t.grad_buf(bias);
                for (int r = 0; r < rows; ++r) {
                    const size_t off = static_cast<size_t>(r) * cols;
                    for (int c = 0; c < cols; ++c) {
                        gb.data[static_cast<size_t>(c)] += g.data[off + c];
                    }
                }
            }
        };
    }
    return self;
}

int Tape::embedding_rows(int table, std::vector<int> ids) {
    const Tensor& tt = check(table);
    require(tt.rank() == 2, "embedding_rows: table must be rank 2");
    const int vocab = tt.rows(), width = tt.cols();
    for (int id : ids) {
        require(id >= 0 && id < vocab, "embedding_rows: id " + std::to_string(id) + " out of range [0, " +
                                           std::to_string(vocab) + ")");
    }
    const int n = static_cast<int>(ids.size());
    Tensor out = Tensor::zeros({n, width});
    for (int r = 0; r < n; ++r) {
        const size_t src = static_cast<size_t>(ids[static_cast<size_t>(r)]) * width;
        std::copy_n(tt.data.begin() + static_cast<long>(src), width,
                    out.data.begin() + static_cast<long>(r) * width);
    }
    int self = push(std::move(out), nodes_[table].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, table, ids = std::move(ids), width](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor& gt = t.grad_buf(table);
            for (size_t r = 0; r < ids.size(); ++r) {
                const size_t dst = static_cast<size_t>(ids[r]) * width;
                const size_t src = r * static_cast<size_t>(width);
                for (int c = 0; c < width; ++c) {
                    gt.data[dst + c] += g.data[src + c];
                }
            }
        };
    }
    return self;
}

int Tape::gather_rows(int a, std::vector<int> row_ids) {
    const Tensor& ta = check(a);
    require(ta.rank() == 2, "gather_rows: expects rank 2");
    const int rows = ta.rows(), cols = ta.cols();
    for (int r : row_ids) {
        require(r >= 0 && r < rows, "gather_rows: row " + std::to_string(r) + " out of range");
    }
    const int n = static_cast<int>(row_ids.size());
    Tensor out = Tensor::zeros({n, cols});
    for (int r = 0; r < n; ++r) {
        std::copy_n(ta.data.begin() + static_cast<long>(row_ids[static_cast<size_t>(r)]) * cols, cols,
                    out.data.begin() + static_cast<long>(r) * cols);
    }
    int self = push(std::move(out), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, row_ids = std::move(row_ids), cols](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor& ga = t.grad_buf(a);
            for (size_t r = 0; r < row_ids.size(); ++r) {
                const size_t dst = static_cast<size_t>(row_ids[r]) * cols;
                const size_t src = r * static_cast<size_t>(cols);
                for (int c = 0; c < cols; ++c) {
                    ga.data[dst + c] += g.data[src + c];
                }
            }
        };
    }
    return self;
}

int Tape::slice_cols(int a, int c0, int c1) {
    const Tensor& ta = check(a);
    require(ta.rank() == 2, "slice_cols: expects rank 2");
    require(0 <= c0 && c0 < c1 && c1 <= ta.cols(), "slice_cols: bad column range");
    const int rows = ta.rows(), cols = ta.cols(), w = c1 - c0;
    Tensor out = Tensor::zeros({rows, w});
    for (int r = 0; r < rows; ++r) {
        std::copy_n(ta.data.begin() + static_cast<long>(r) * cols + c0, w,
                    out.data.begin() + static_cast<long>(r) * w);
    }
    int self = push(std::move(out), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, c0, rows, cols, w](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor& ga = t.grad_buf(a);
            for (int r = 0; r < rows; ++r) {
                for (int c = 0; c < w; ++c) {
                    ga.data[static_cast<size_t>(r) * cols + c0 + c] +=
                        g.data[static_cast<size_t>(r) * w + c];
                }
            }
        };
    }
    return self;
}

int Tape::concat_cols(const std::vector<int>& parts) {
    require(!parts.empty(), "concat_cols: empty input list");
    const int rows = check(parts[0]).rows();
    int total = 0;
    bool req = false;
    for (int p : parts) {
        const Tensor& tp = check(p);
        require(tp.rank() == 2 && tp.rows() == rows, "concat_cols: row mismatch");
        total += tp.cols();
        req = req || nodes_[p].requires_grad;
    }
    Tensor out = Tensor::zeros({rows, total});
    int base = 0;
    for (int p : parts) {
        const Tensor& tp = nodes_[p].value;
        const int w = tp.cols();
        for (int r = 0; r < rows; ++r) {
            std::copy_n(tp.data.begin() + static_cast<long>(r) * w, w,
                        out.data.begin() + static_cast<long>(r) * total + base);
        }
        base += w;
    }
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, parts, rows, total](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            int base2 = 0;
            for (int p : parts) {
                const int w = t.nodes_[p].value.cols();
                if (t.track(p)) {
                    Tensor& gp = t.grad_buf(p);
                    for (int r = 0; r < rows; ++r) {
                        for (int c = 0; c < w; ++c) {
                            gp.data[static_cast<size_t>(r) * w + c] +=
                                g.data[static_cast<size_t>(r) * total + base2 + c];
                        }
                    }
                }
                base2 += w;
            }
        };
    }
    return self;
}

int Tape::concat_rows(const std::vector<int>& parts) {
    require(!parts.empty(), "concat_rows: empty input list");
    const int cols = check(parts[0]).cols();
    int total = 0;
    bool req = false;
    for (int p : parts) {
        const Tensor& tp = check(p);
        require(tp.rank() == 2 && tp.cols() == cols, "concat_rows: column mismatch");
        total += tp.rows();
        req = req || nodes_[p].requires_grad;
    }
    Tensor out = Tensor::zeros({total, cols});
    size_t off = 0;
    for (int p : parts) {
        const Tensor& tp = nodes_[p].value;
        std::copy(tp.data.begin(), tp.data.end(), out.data.begin() + static_cast<long>(off));
        off += tp.data.size();
    }
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, parts](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            size_t off2 = 0;
            for (int p : parts) {
                const size_t count = t.nodes_[p].value.data.size();
                if (t.track(p)) {
                    Tensor& gp = t.grad_buf(p);
                    for (size_t i = 0; i < count; ++i) {
                        gp.data[i] += g.data[off2 + i];
                    }
                }
                off2 += count;
            }
        };
    }
    return self;
}

int Tape::reshape(int a, Shape s) {
    const Tensor& ta = check(a);
    require(shape_numel(s) == ta.numel(),
            "reshape: cannot view " + shape_str(ta.shape) + " as " + shape_str(s));
    Tensor out(std::move(s), ta.data);
    int self = push(std::move(out), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor& ga = t.grad_buf(a);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        };
    }
    return self;
}

int Tape::transpose(int a) {
    const Tensor& ta = check(a);
    require(ta.rank() == 2, "transpose: expects rank 2");
    const int rows = ta.rows(), cols = ta.cols();
    Tensor out = Tensor::zeros({cols, rows});
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            out.data[static_cast<size_t>(c) * rows + r] = ta.data[static_cast<size_t>(r) * cols + c];
        }
    }
    int self = push(std::move(out), nodes_[a].requires_grad, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, rows, cols](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor& ga = t.grad_buf(a);
            for (int r = 0; r < rows; ++r) {
                for (int c = 0; c < cols; ++c) {
                    ga.data[static_cast<size_t>(r) * cols + c] +=
                        g.data[static_cast<size_t>(c) * rows + r];
                }
            }
        };
    }
    return self;
}

int Tape::add_at_rows(int a, int b, int row0) {
    const Tensor& ta = check(a);
    const Tensor& tb = check(b);
    require(ta.rank() == 2 && tb.rank() == 2, "add_at_rows: expects rank 2");
    require(ta.cols() == tb.cols(), "add_at_rows: width mismatch");
    require(row0 >= 0 && row0 + tb.rows() <= ta.rows(), "add_at_rows: row range out of bounds");
    const int cols = ta.cols(), brows = tb.rows();
    Tensor out = ta;
    for (int r = 0; r < brows; ++r) {
        for (int c = 0; c < cols; ++c) {
            out.data[static_cast<size_t>(row0 + r) * cols + c] +=
                tb.data[static_cast<size_t>(r) * cols + c];
        }
    }
    const bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, b, row0, cols, brows](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.track(a)) {
                Tensor& ga = t.grad_buf(a);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (t.track(b)) {
                Tensor& gb = t.grad_buf(b);
                for (int r = 0; r < brows; ++r) {
                    for (int c = 0; c < cols; ++c) {
                        gb.data[static_cast<size_t>(r) * cols + c] +=
                            g.data[static_cast<size_t>(row0 + r) * cols + c];
                    }
                }
            }
        };
    }
    return self;
}

int Tape::replace_rows(int a, int b, std::vector<int> row_ids) {
    const Tensor& ta = check(a);
    const Tensor& tb = check(b);
    require(ta.rank() == 2 && tb.rank() == 2, "replace_rows: expects rank 2");
    require(ta.cols() == tb.cols(), "replace_rows: width mismatch");
    require(static_cast<int>(row_ids.size()) == tb.rows(), "replace_rows: row id count mismatch");
    std::vector<bool> seen(static_cast<size_t>(ta.rows()), false);
    for (int r : row_ids) {
        require(r >= 0 && r < ta.rows(), "replace_rows: row " + std::to_string(r) + " out of range");
        require(!seen[static_cast<size_t>(r)], "replace_rows: duplicate row " + std::to_string(r));
        seen[static_cast<size_t>(r)] = true;
    }
    const int cols = ta.cols();
    Tensor out = ta;
    for (size_t j = 0; j < row_ids.size(); ++j) {
        std::copy_n(tb.data.begin() + static_cast<long>(j) * cols, cols,
                    out.data.begin() + static_cast<long>(row_ids[j]) * cols);
    }
    const bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    int self = push(std::move(out), req, nullptr);
    if (track(self)) {
        nodes_[self].back = [self, a, b, row_ids = std::move(row_ids), cols](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.track(a)) {
                Tensor& ga = t.grad_buf(a);
                std::vector<bool> replaced(static_cast<size_t>(ga.rows()), false);
                for (int r : row_ids) replaced[static_cast<size_t>(r)] = true;
                for (int r = 0; r < ga.rows(); ++r) {
                    if (replaced[static_cast<size_t>(r)]) continue;
                    for (int c = 0; c < cols; ++c) {
                        ga.data[static_cast<size_t>(r) * cols + c] +=
                            g.data[static_cast<size_t>(r) * cols + c];
                    }
                }
            }
            if (t.track(b)) {
                Tensor& gb = t.grad_buf(b);
                for (size_t j = 0; j < row_ids.size(); ++j) {
                    for (int c = 0; c < cols; ++c) {
                        gb.data[j * static_cast<size_t>(cols) + c] +=
                            g.data[static_cast<size_t>(row_ids[j]) * cols + c];
                    }
                }
            }
        };
    }
    return self;
}

void Tape::backward(int loss) {
    const Tensor& tl = check(loss);
    if (tl.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(tl.shape));
    }
    if (!grad_enabled_) {
        throw std::invalid_argument("backward: tape was built with gradients disabled");
    }
    for (Node& n : nodes_) {
        n.grad.data.clear();
        n.grad.shape.clear();
    }
    grad_buf(loss).data[0] = 1.0;
    for (int id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.data.empty() || !n.back) {
            continue;
        }
        n.back(*this);
    }
}

const Tensor& Tape::grad(int id) const {
    check(id);
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad.data.empty()) {
        return n.grad;
    }
    zero_scratch_ = Tensor::zeros(n.value.shape);
    return zero_scratch_;
}

} // namespace rlens
