#include "rlens/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rlens/errors.hpp"
#include "rlens/kernels.hpp"

namespace rlens {

void ModelConfig::validate() const {
    if (layers < 2) throw ConfigError("model: layers must be >= 2");
    if (d_model < 1) throw ConfigError("model: d_model must be >= 1");
    if (heads < 1 || d_model % heads != 0) {
        throw ConfigError("model: d_model must be divisible by heads");
    }
    if (vocab < vocab::kMinVocab) {
        throw ConfigError("model: vocab must be >= " + std::to_string(vocab::kMinVocab));
    }
    if (max_seq < 1) throw ConfigError("model: max_seq must be >= 1");
    if (visual_dim < 1) throw ConfigError("model: visual_dim must be >= 1");
    if (mlp_hidden < 1) throw ConfigError("model: mlp_hidden must be >= 1");
}

const Tensor& Checkpoint::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) {
        throw std::invalid_argument("checkpoint: missing parameter " + name);
    }
    return it->second;
}

Tensor& Checkpoint::param_mut(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) {
        throw std::invalid_argument("checkpoint: missing parameter " + name);
    }
    return it->second;
}

Checkpoint init_checkpoint(const ModelConfig& config, uint64_t seed) {
    config.validate();
    const double init_std = 0.08;
    Rng rng(Rng::mix(seed, 0x1217ULL));
    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.meta.seed = seed;
    ckpt.meta.lineage = "base";

    auto put = [&](const std::string& name, const Shape& shape, double stddev) {
        ckpt.params.emplace(name, Tensor::randn(shape, rng, stddev));
    };
    auto put_const = [&](const std::string& name, const Shape& shape, double value) {
        ckpt.params.emplace(name, Tensor::full(shape, value));
    };

    const int d = config.d_model;
    put("tok_emb", {config.vocab, d}, init_std);
    put("pos_emb", {config.max_seq, d}, init_std);
    put("connector.w", {d, config.visual_dim}, init_std);
    put_const("connector.b", {d}, 0.0);
    for (int l = 1; l <= config.layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        put_const(p + "ln1.gain", {d}, 1.0);
        put_const(p + "ln1.bias", {d}, 0.0);
        put(p + "attn.wq", {d, d}, init_std);
        put(p + "attn.wk", {d, d}, init_std);
        put(p + "attn.wv", {d, d}, init_std);
        put(p + "attn.wo", {d, d}, init_std);
        put_const(p + "ln2.gain", {d}, 1.0);
        put_const(p + "ln2.bias", {d}, 0.0);
        put(p + "mlp.w1", {config.mlp_hidden, d}, init_std);
        put_const(p + "mlp.b1", {config.mlp_hidden}, 0.0);
        put(p + "mlp.w2", {d, config.mlp_hidden}, init_std);
        put_const(p + "mlp.b2", {d}, 0.0);
    }
    put_const("final_norm.gain", {d}, 1.0);
    put_const("final_norm.bias", {d}, 0.0);
    put("head.w", {config.vocab, d}, init_std);
    put_const("head.b", {config.vocab}, 0.0);
    return ckpt;
}

bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b) {
    if (!(a.config == b.config)) return false;
    if (a.params.size() != b.params.size()) return false;
    for (auto ita = a.params.begin(), itb = b.params.begin(); ita != a.params.end(); ++ita, ++itb) {
        if (ita->first != itb->first) return false;
        if (ita->second.shape != itb->second.shape) return false;
        if (ita->second.data != itb->second.data) return false;
    }
    return true;
}

void ModelPair::validate() const {
    if (!(base.config == tuned.config)) {
        throw std::invalid_argument("model pair: base and tuned configs differ");
    }
}

ParamNodes param_leaves(Tape& tape, const Checkpoint& ckpt, bool requires_grad) {
    ParamNodes nodes;
    for (const auto& [name, tensor] : ckpt.params) {
        nodes.emplace(name, tape.leaf(tensor, requires_grad));
    }
    return nodes;
}

namespace {

int param_node(const ParamNodes& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) {
        throw std::invalid_argument("forward: missing parameter node " + name);
    }
    return it->second;
}

void apply_splice(Tape& tape, int& h, const SpliceMap& splice, int layer, int context_len, int d) {
    auto it = splice.find(layer);
    if (it == splice.end() || it->second.empty()) {
        return;
    }
    std::vector<int> rows;
    Tensor values = Tensor::zeros({static_cast<int>(it->second.size()), d});
    int j = 0;
    for (const LayerOverride& ov : it->second) {
        if (ov.position < 0 || ov.position >= context_len) {
            throw std::invalid_argument("override position " + std::to_string(ov.position) +
                                        " out of range [0, " + std::to_string(context_len) + ")");
        }
        if (static_cast<int>(ov.value.size()) != d) {
            throw std::invalid_argument("override value width " + std::to_string(ov.value.size()) +
                                        " != d_model " + std::to_string(d));
        }
        rows.push_back(ov.position);
        std::copy(ov.value.begin(), ov.value.end(), values.data.begin() + static_cast<long>(j) * d);
        ++j;
    }
    h = tape.replace_rows(h, tape.constant(std::move(values)), std::move(rows));
}

} // namespace

ForwardGraph build_forward(Tape& tape, const ModelConfig& config, const ParamNodes& params,
                           const MultimodalSequence& seq, const ForwardOptions& options) {
    const int n = seq.n_visual();
    const int d = config.d_model;
    const int total_text = seq.n_text() + static_cast<int>(options.generated.size());
    const int S = n + total_text;
    if (S > config.max_seq) {
        throw std::invalid_argument("sequence length " + std::to_string(S) + " exceeds max_seq " +
                                    std::to_string(config.max_seq));
    }
    if (S == 0) {
        throw std::invalid_argument("forward: empty sequence");
    }
    for (const auto& v : seq.visual) {
        if (static_cast<int>(v.size()) != config.visual_dim) {
            throw std::invalid_argument("visual vector width " + std::to_string(v.size()) +
                                        " != visual_dim " + std::to_string(config.visual_dim));
        }
    }

    std::vector<int> token_ids(seq.text.begin(), seq.text.end());
    token_ids.insert(token_ids.end(), options.generated.begin(), options.generated.end());
    for (int t : token_ids) {
        if (t < 0 || t >= config.vocab) {
            throw std::invalid_argument("token id " + std::to_string(t) + " out of vocabulary");
        }
    }

    // Layer-0 input: connector(visual) ++ token embeddings, plus positions.
    std::vector<int> h0_parts;
    if (n > 0) {
        Tensor raw = Tensor::zeros({n, config.visual_dim});
        for (int i = 0; i < n; ++i) {
            std::copy(seq.visual[static_cast<size_t>(i)].begin(),
                      seq.visual[static_cast<size_t>(i)].end(),
                      raw.data.begin() + static_cast<long>(i) * config.visual_dim);
        }
        int vis = tape.matmul_nt(tape.constant(std::move(raw)), param_node(params, "connector.w"));
        vis = tape.add_rowvec(vis, param_node(params, "connector.b"));
        h0_parts.push_back(vis);
    }
    if (total_text > 0) {
        h0_parts.push_back(tape.embedding_rows(param_node(params, "tok_emb"), token_ids));
    }
    int h = h0_parts.size() == 1 ? h0_parts[0] : tape.concat_rows(h0_parts);

    std::vector<int> pos_ids(static_cast<size_t>(S));
    for (int i = 0; i < S; ++i) {
        pos_ids[static_cast<size_t>(i)] = i;
    }
    h = tape.add(h, tape.gather_rows(param_node(params, "pos_emb"), std::move(pos_ids)));

    if (options.visual_add_node >= 0) {
        const Tensor& x = tape.val(options.visual_add_node);
        if (x.rank() != 2 || x.rows() != n || x.cols() != d) {
            throw std::invalid_argument("visual additive tokens must be [" + std::to_string(n) +
                                        " x " + std::to_string(d) + "], got " + shape_str(x.shape));
        }
        h = tape.add_at_rows(h, options.visual_add_node, 0);
    }
    if (options.splice) {
        apply_splice(tape, h, *options.splice, 0, seq.context_len(), d);
    }

    ForwardGraph graph;
    graph.hidden.push_back(h);

    const int dh = d / config.heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 1; l <= config.layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        int a = tape.layer_norm(h, param_node(params, p + "ln1.gain"),
                                param_node(params, p + "ln1.bias"));
        int q = tape.matmul_nt(a, param_node(params, p + "attn.wq"));
        int k = tape.matmul_nt(a, param_node(params, p + "attn.wk"));
        int v = tape.matmul_nt(a, param_node(params, p + "attn.wv"));
        std::vector<int> head_ctx;
        head_ctx.reserve(static_cast<size_t>(config.heads));
        for (int hd = 0; hd < config.heads; ++hd) {
            const int c0 = hd * dh, c1 = (hd + 1) * dh;
            int qh = tape.slice_cols(q, c0, c1);
            int kh = tape.slice_cols(k, c0, c1);
            int vh = tape.slice_cols(v, c0, c1);
            int scores = tape.scale(tape.matmul_nt(qh, kh), attn_scale);
            int probs = tape.causal_softmax(scores);
            head_ctx.push_back(tape.matmul(probs, vh));
        }
        int ctx = config.heads == 1 ? head_ctx[0] : tape.concat_cols(head_ctx);
        h = tape.add(h, tape.matmul_nt(ctx, param_node(params, p + "attn.wo")));

        int m = tape.layer_norm(h, param_node(params, p + "ln2.gain"),
                                param_node(params, p + "ln2.bias"));
        int u = tape.add_rowvec(tape.matmul_nt(m, param_node(params, p + "mlp.w1")),
                                param_node(params, p + "mlp.b1"));
        int g = tape.gelu(u);
        int o = tape.add_rowvec(tape.matmul_nt(g, param_node(params, p + "mlp.w2")),
                                param_node(params, p + "mlp.b2"));
        h = tape.add(h, o);

        if (options.splice) {
            apply_splice(tape, h, *options.splice, l, seq.context_len(), d);
        }
        graph.hidden.push_back(h);
    }

    int fin = tape.layer_norm(h, param_node(params, "final_norm.gain"),
                              param_node(params, "final_norm.bias"));
    graph.logits = tape.add_rowvec(tape.matmul_nt(fin, param_node(params, "head.w")),
                                   param_node(params, "head.b"));
    return graph;
}

ForwardResult forward_with_trace(const Checkpoint& ckpt, const MultimodalSequence& seq,
                                 const std::vector<LayerOverride>& overrides) {
    Tape tape(false);
    ParamNodes params = param_leaves(tape, ckpt, false);
    SpliceMap splice;
    ForwardOptions options;
    if (!overrides.empty()) {
        splice[0] = overrides;
        options.splice = &splice;
    }
    ForwardGraph graph = build_forward(tape, ckpt.config, params, seq, options);
    ForwardResult result;
    result.logits = tape.val(graph.logits);
    result.trace.hidden.reserve(graph.hidden.size());
    for (int id : graph.hidden) {
        result.trace.hidden.push_back(tape.val(id));
    }
    return result;
}

Tensor vocab_logits_row(const Checkpoint& ckpt, std::span<const double> h) {
    const int d = ckpt.config.d_model;
    if (static_cast<int>(h.size()) != d) {
        throw std::invalid_argument("hidden state width " + std::to_string(h.size()) +
                                    " != d_model " + std::to_string(d));
    }
    const Tensor& gain = ckpt.param("final_norm.gain");
    const Tensor& bias = ckpt.param("final_norm.bias");
    const Tensor& head_w = ckpt.param("head.w");
    const Tensor& head_b = ckpt.param("head.b");
    std::vector<double> normed(static_cast<size_t>(d));
    kernels::layer_norm_row(h.data(), gain.data.data(), bias.data.data(), normed.data(), d);
    const int V = ckpt.config.vocab;
    Tensor logits = Tensor::zeros({V});
    kernels::mm_nt_acc(normed.data(), head_w.data.data(), logits.data.data(), 1, d, V);
    for (int t = 0; t < V; ++t) {
        logits.data[static_cast<size_t>(t)] += head_b.data[static_cast<size_t>(t)];
    }
    return logits;
}

Tensor project_to_vocab(const Checkpoint& ckpt, std::span<const double> h) {
    Tensor logits = vocab_logits_row(ckpt, h);
    Tensor dist = Tensor::zeros({ckpt.config.vocab});
    kernels::softmax_row(logits.data.data(), dist.data.data(), ckpt.config.vocab);
    return dist;
}

namespace {

int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) {
            best = i;
        }
    }
    return best;
}

/// One decode step: logits row for the last position given already-generated
/// tokens. Shared by greedy and sampled decoding.
Tensor next_token_logits(const Checkpoint& ckpt, const MultimodalSequence& seq,
                         const std::vector<int>& generated, const DecodeHooks* hooks) {
    Tape tape(false);
    ParamNodes params = param_leaves(tape, ckpt, false);
    ForwardOptions options;
    options.generated = generated;
    if (hooks && hooks->visual_add) {
        options.visual_add_node = tape.constant(*hooks->visual_add);
    }
    if (hooks && hooks->splice) {
        options.splice = hooks->splice;
    }
    ForwardGraph graph = build_forward(tape, ckpt.config, params, seq, options);
    const Tensor& hidden = tape.val(graph.hidden.back());
    const int last = hidden.rows() - 1;
    std::span<const double> row(hidden.data.data() + static_cast<size_t>(last) * hidden.cols(),
                                static_cast<size_t>(hidden.cols()));
    return vocab_logits_row(ckpt, row);
}

} // namespace

std::vector<int> decode_greedy(const Checkpoint& ckpt, const MultimodalSequence& seq, int max_new,
                               const DecodeHooks* hooks) {
    std::vector<int> generated;
    for (int step = 0; step < max_new; ++step) {
        Tensor logits = next_token_logits(ckpt, seq, generated, hooks);
        const int token = argmax_lowest(logits.data);
        if (token == vocab::kEos) {
            break;
        }
        generated.push_back(token);
    }
    return generated;
}

std::vector<int> decode_sample(const Checkpoint& ckpt, const MultimodalSequence& seq,
                               double temperature, uint64_t seed, int max_new,
                               const DecodeHooks* hooks) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("decode_sample: temperature must be > 0");
    }
    Rng rng(Rng::mix(seed, 0x5A3B1EULL));
    std::vector<int> generated;
    const int V = ckpt.config.vocab;
    std::vector<double> probs(static_cast<size_t>(V));
    for (int step = 0; step < max_new; ++step) {
        Tensor logits = next_token_logits(ckpt, seq, generated, hooks);
        for (double& v : logits.data) {
            v /= temperature;
        }
        kernels::softmax_row(logits.data.data(), probs.data(), V);
        const double u = rng.uniform();
        double acc = 0.0;
        int token = V - 1;
        for (int t = 0; t < V; ++t) {
            acc += probs[static_cast<size_t>(t)];
            if (u < acc) {
                token = t;
                break;
            }
        }
        if (token == vocab::kEos) {
            break;
        }
        generated.push_back(token);
    }
    return generated;
}

double perplexity(const Checkpoint& ckpt, const MultimodalSequence& seq,
                  const std::vector<int>& response, const DecodeHooks* hooks) {
    if (response.empty()) {
        throw std::invalid_argument("perplexity: response must be non-empty");
    }
    Tape tape(false);
    ParamNodes params = param_leaves(tape, ckpt, false);
    ForwardOptions options;
    options.generated = response;
    if (hooks && hooks->visual_add) {
        options.visual_add_node = tape.constant(*hooks->visual_add);
    }
    if (hooks && hooks->splice) {
        options.splice = hooks->splice;
    }
    ForwardGraph graph = build_forward(tape, ckpt.config, params, seq, options);
    const Tensor& hidden = tape.val(graph.hidden.back());
    const int ctx = seq.context_len();
    double nll = 0.0;
    for (size_t j = 0; j < response.size(); ++j) {
        const int row = ctx + static_cast<int>(j) - 1; // position predicting response[j]
        std::span<const double> hrow(hidden.data.data() + static_cast<size_t>(row) * hidden.cols(),
                                     static_cast<size_t>(hidden.cols()));
        Tensor dist = project_to_vocab(ckpt, hrow);
        const double p = std::max(dist.data[static_cast<size_t>(response[j])], kernels::kLogClamp);
        nll -= std::log(p);
    }
    return std::exp(nll / static_cast<double>(response.size()));
}

} // namespace rlens
