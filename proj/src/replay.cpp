#include "rlens/replay.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rlens/errors.hpp"
#include "rlens/kernels.hpp"

namespace rlens {

Polarity polarity_from_string(const std::string& s) {
    if (s == "low") return Polarity::Low;
    if (s == "high") return Polarity::High;
    throw ConfigError("replay: unknown polarity '" + s + "' (expected low|high)");
}

std::string to_string(Polarity p) { return p == Polarity::Low ? "low" : "high"; }

ThresholdMode threshold_mode_from_string(const std::string& s) {
    if (s == "dynamic") return ThresholdMode::Dynamic;
    if (s == "static") return ThresholdMode::Static;
    throw ConfigError("replay: unknown threshold mode '" + s + "' (expected dynamic|static)");
}

std::string to_string(ThresholdMode m) {
    return m == ThresholdMode::Dynamic ? "dynamic" : "static";
}

void ReplayConfig::validate(int model_layers) const {
    if (threshold_mode == ThresholdMode::Dynamic && !(tau > 0.0 && tau <= 1.0)) {
        throw ConfigError("replay: tau must be in (0, 1]");
    }
    if (threshold_mode == ThresholdMode::Static && !std::isfinite(static_threshold)) {
        throw ConfigError("replay: static threshold mode requires a finite static_threshold");
    }
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
        throw ConfigError("replay: alpha must be >= 0");
    }
    if (steps < 1) throw ConfigError("replay: steps must be >= 1");
    if (backtrack_limit < 0) throw ConfigError("replay: backtrack_limit must be >= 0");
    if (!layers.empty()) {
        for (int l : layers) {
            if (l < 0 || l > model_layers) {
                throw ConfigError("replay: layer " + std::to_string(l) + " outside [0, " +
                                  std::to_string(model_layers) + "]");
            }
        }
    }
}

std::vector<int> ReplayConfig::layer_set(int model_layers) const {
    if (!layers.empty()) {
        return layers;
    }
    std::vector<int> all;
    for (int l = 1; l <= model_layers; ++l) {
        all.push_back(l);
    }
    return all;
}

int EntropyMask::count() const {
    int c = 0;
    for (uint8_t v : m) {
        c += v != 0;
    }
    return c;
}

EntropyMask mask_from_entropies(const Tensor& entropies, int n_visual, double tau,
                                Polarity polarity) {
    if (!(tau > 0.0 && tau <= 1.0)) {
        throw std::invalid_argument("mask: tau must be in (0, 1]");
    }
    const int layers = entropies.rows();
    if (n_visual < 1 || n_visual > entropies.cols()) {
        throw std::invalid_argument("mask: n_visual out of range");
    }
    EntropyMask mask = EntropyMask::empty(layers, n_visual);
    for (int l = 0; l < layers; ++l) {
        double max_e = entropies.at(l, 0);
        for (int i = 1; i < n_visual; ++i) {
            max_e = std::max(max_e, entropies.at(l, i));
        }
        const double threshold = max_e * tau;
        for (int i = 0; i < n_visual; ++i) {
            const bool low = entropies.at(l, i) < threshold; // strict, so the argmax is never low
            mask.set(l, i, polarity == Polarity::Low ? low : !low);
        }
    }
    return mask;
}

EntropyMask mask_from_entropies_static(const Tensor& entropies, int n_visual, double threshold,
                                       Polarity polarity) {
    const int layers = entropies.rows();
    if (n_visual < 1 || n_visual > entropies.cols()) {
        throw std::invalid_argument("mask: n_visual out of range");
    }
    EntropyMask mask = EntropyMask::empty(layers, n_visual);
    for (int l = 0; l < layers; ++l) {
        for (int i = 0; i < n_visual; ++i) {
            const bool low = entropies.at(l, i) < threshold;
            mask.set(l, i, polarity == Polarity::Low ? low : !low);
        }
    }
    return mask;
}

EntropyMask low_entropy_mask(const Checkpoint& ckpt_base, const ActivationTrace& base_trace,
                             int n_visual, double tau, Polarity polarity) {
    const LensProfile profile = profile_trace(ckpt_base, base_trace, 1);
    return mask_from_entropies(profile.entropy, n_visual, tau, polarity);
}

double static_threshold(const std::vector<MultimodalSequence>& validation_set,
                        const Checkpoint& ckpt_base, double target_fraction) {
    if (validation_set.empty()) {
        throw std::invalid_argument("static_threshold: validation set is empty");
    }
    if (!(target_fraction >= 0.0 && target_fraction <= 1.0)) {
        throw std::invalid_argument("static_threshold: target_fraction must be in [0, 1]");
    }
    std::vector<double> pooled;
    for (const MultimodalSequence& seq : validation_set) {
        const ActivationTrace trace = forward_with_trace(ckpt_base, seq).trace;
        const LensProfile profile = profile_trace(ckpt_base, trace, 1);
        for (int l = 0; l < profile.layer_count(); ++l) {
            for (int i = 0; i < seq.n_visual(); ++i) {
                pooled.push_back(profile.entropy.at(l, i));
            }
        }
    }
    std::sort(pooled.begin(), pooled.end());
    const auto n = static_cast<double>(pooled.size());
    const auto idx = static_cast<size_t>(std::floor(target_fraction * (n - 1.0)));
    return pooled[idx];
}

namespace {

EntropyMask aggregate_majority(const EntropyMask& mask) {
    EntropyMask out = EntropyMask::empty(mask.layers, mask.positions);
    for (int i = 0; i < mask.positions; ++i) {
        int votes = 0;
        for (int l = 0; l < mask.layers; ++l) {
            votes += mask.at(l, i) ? 1 : 0;
        }
        const bool on = 2 * votes > mask.layers;
        for (int l = 0; l < mask.layers; ++l) {
            out.set(l, i, on);
        }
    }
    return out;
}

/// Weighted target matrices and constant entropy term from a base profile.
void build_targets(const LensProfile& base_profile, const EntropyMask& mask,
                   const std::vector<int>& layer_set, int n_visual,
                   std::vector<Tensor>& masked_base, double& const_term) {
    const int V = base_profile.dist.empty() ? 0 : base_profile.dist[0].cols();
    masked_base.clear();
    const_term = 0.0;
    for (int l : layer_set) {
        Tensor w = Tensor::zeros({n_visual, V});
        for (int i = 0; i < n_visual; ++i) {
            if (!mask.at(l, i)) continue;
            for (int v = 0; v < V; ++v) {
                const double pb = base_profile.dist[static_cast<size_t>(l)].at(i, v);
                w.at(i, v) = pb;
                if (pb > 0.0) {
                    const_term += pb * std::log(pb);
                }
            }
        }
        masked_base.push_back(std::move(w));
    }
}

struct ObjectiveGraph {
    int objective = -1;
    int x_leaf = -1;
};

ObjectiveGraph build_objective_graph(Tape& tape, const Checkpoint& tuned,
                                     const MultimodalSequence& seq, const Tensor& x,
                                     const ReplayObjective& ctx, bool x_requires_grad) {
    const int n = ctx.n_visual;
    if (x.rank() != 2 || x.rows() != n || x.cols() != tuned.config.d_model) {
        throw std::invalid_argument("replay: x must be [" + std::to_string(n) + " x " +
                                    std::to_string(tuned.config.d_model) + "], got " +
                                    shape_str(x.shape));
    }
    if (seq.n_visual() != n) {
        throw std::invalid_argument("replay: x is aligned to " + std::to_string(n) +
                                    " visual positions but the sequence has " +
                                    std::to_string(seq.n_visual()));
    }
    ParamNodes params = param_leaves(tape, tuned, false);
    ObjectiveGraph graph;
    graph.x_leaf = tape.leaf(x, x_requires_grad);
    ForwardOptions options;
    options.visual_add_node = graph.x_leaf;
    ForwardGraph fwd = build_forward(tape, tuned.config, params, seq, options);

    std::vector<int> visual_rows(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        visual_rows[static_cast<size_t>(i)] = i;
    }
    const int fin_gain = params.at("final_norm.gain");
    const int fin_bias = params.at("final_norm.bias");
    const int head_w = params.at("head.w");
    const int head_b = params.at("head.b");

    int acc = -1;
    for (size_t idx = 0; idx < ctx.layer_set.size(); ++idx) {
        const int l = ctx.layer_set[idx];
        int vis = tape.gather_rows(fwd.hidden[static_cast<size_t>(l)], visual_rows);
        int normed = tape.layer_norm(vis, fin_gain, fin_bias);
        int logits = tape.add_rowvec(tape.matmul_nt(normed, head_w), head_b);
        int probs = tape.softmax_rows(logits);
        int logp = tape.log_clamped(probs);
        int term = tape.dot(logp, tape.constant(ctx.masked_base[idx]));
        acc = acc < 0 ? term : tape.add(acc, term);
    }
    // masked KL = sum p_b log p_b - sum p_b log p_r
    int neg = tape.scale(acc, -1.0);
    graph.objective = tape.add(neg, tape.constant(Tensor::scalar(ctx.const_term)));
    return graph;
}

} // namespace

double ReplayObjective::value(const Checkpoint& tuned, const MultimodalSequence& seq,
                              const Tensor& x) const {
    Tape tape(false);
    ObjectiveGraph graph = build_objective_graph(tape, tuned, seq, x, *this, false);
    return tape.val(graph.objective).data[0];
}

double ReplayObjective::value_and_grad(const Checkpoint& tuned, const MultimodalSequence& seq,
                                       const Tensor& x, Tensor& grad_out) const {
    Tape tape(true);
    ObjectiveGraph graph = build_objective_graph(tape, tuned, seq, x, *this, true);
    tape.backward(graph.objective);
    grad_out = tape.grad(graph.x_leaf);
    return tape.val(graph.objective).data[0];
}

ReplayObjective make_replay_objective(const ModelPair& pair, const MultimodalSequence& seq,
                                      const ReplayConfig& config) {
    pair.validate();
    const int L = pair.base.config.layers;
    config.validate(L);

    ReplayObjective ctx;
    ctx.layer_set = config.layer_set(L);
    if (ctx.layer_set.empty()) {
        throw ConfigError("replay: layer set must be non-empty");
    }
    ctx.n_visual = seq.n_visual();

    const ActivationTrace base_trace = forward_with_trace(pair.base, seq).trace;
    const LensProfile base_profile = profile_trace(pair.base, base_trace, 1);
    if (config.threshold_mode == ThresholdMode::Dynamic) {
        ctx.mask = mask_from_entropies(base_profile.entropy, ctx.n_visual, config.tau,
                                       config.polarity);
    } else {
        ctx.mask = mask_from_entropies_static(base_profile.entropy, ctx.n_visual,
                                              config.static_threshold, config.polarity);
    }
    if (config.aggregate_positions) {
        ctx.mask = aggregate_majority(ctx.mask);
    }
    build_targets(base_profile, ctx.mask, ctx.layer_set, ctx.n_visual, ctx.masked_base,
                  ctx.const_term);
    return ctx;
}

double replay_objective(const Checkpoint& ckpt_tuned, const MultimodalSequence& seq,
                        const Tensor& x, const LensProfile& base_profile, const EntropyMask& mask,
                        const std::vector<int>& layer_set) {
    if (layer_set.empty()) {
        throw std::invalid_argument("replay_objective: layer set must be non-empty");
    }
    ReplayObjective ctx;
    ctx.layer_set = layer_set;
    ctx.n_visual = seq.n_visual();
    ctx.mask = mask;
    build_targets(base_profile, mask, layer_set, ctx.n_visual, ctx.masked_base, ctx.const_term);
    return ctx.value(ckpt_tuned, seq, x);
}

ReplayState replay_optimize(const ModelPair& pair, const MultimodalSequence& seq,
                            const ReplayConfig& config) {
    const ReplayObjective ctx = make_replay_objective(pair, seq, config);
    const int n = seq.n_visual();
    const int d = pair.tuned.config.d_model;

    ReplayState state;
    state.mask = ctx.mask;
    state.x = Tensor::zeros({n, d});

    Tensor grad;
    double value = ctx.value_and_grad(pair.tuned, seq, state.x, grad);
    if (!std::isfinite(value)) {
        throw NumericError("replay: non-finite objective at step 0", 0);
    }
    auto norm_of = [](const Tensor& g) {
        double s = 0.0;
        for (double v : g.data) s += v * v;
        return std::sqrt(s);
    };
    double gnorm = norm_of(grad);
    state.history.push_back({0, value, gnorm, 0.0, false});

    if (config.alpha == 0.0) {
        return state; // explicit no-op: x stays zero, history is the initial point
    }

    double warm_alpha = config.alpha; // line search restarts near the last accepted step
    for (int step = 1; step <= config.steps; ++step) {
        if (gnorm <= config.grad_tol) {
            break; // stationary
        }
        Tensor candidate = state.x;
        double accepted_alpha = 0.0;
        double new_value = value;
        bool accepted = false;
        if (config.backtracking) {
            double a = std::min(config.alpha, warm_alpha * 2.0);
            for (int j = 0; j <= config.backtrack_limit; ++j, a *= 0.5) {
                Tensor trial = state.x;
                for (size_t i = 0; i < trial.data.size(); ++i) {
                    trial.data[i] -= a * grad.data[i];
                }
                const double v = ctx.value(pair.tuned, seq, trial);
                if (std::isfinite(v) && v < value) {
                    candidate = std::move(trial);
                    accepted_alpha = a;
                    new_value = v;
                    accepted = true;
                    break;
                }
            }
        } else {
            for (size_t i = 0; i < candidate.data.size(); ++i) {
                candidate.data[i] -= config.alpha * grad.data[i];
            }
            accepted_alpha = config.alpha;
            new_value = ctx.value(pair.tuned, seq, candidate);
            accepted = true;
        }
        if (!accepted) {
            // no decrease found down to alpha / 2^limit; stop where we are
            state.history.push_back({step, value, gnorm, 0.0, false});
            break;
        }
        if (!std::isfinite(new_value)) {
            throw NumericError("replay: non-finite objective at step " + std::to_string(step),
                               step);
        }
        state.x = std::move(candidate);
        warm_alpha = accepted_alpha;
        const double prev_value = value;
        // same ops in the same order as the line-search eval, so this equals
        // new_value bitwise while also producing the next gradient
        value = ctx.value_and_grad(pair.tuned, seq, state.x, grad);
        gnorm = norm_of(grad);
        state.history.push_back({step, value, gnorm, accepted_alpha, true});
        const double rel = (prev_value - value) / std::max(std::abs(prev_value), 1e-300);
        if (rel < config.early_stop_rel) {
            break;
        }
    }
    return state;
}

std::vector<int> apply_and_decode(const Checkpoint& ckpt_tuned, const MultimodalSequence& seq,
                                  const Tensor& x, const DecodeMode& mode) {
    DecodeHooks hooks;
    hooks.visual_add = &x;
    if (mode.greedy) {
        return decode_greedy(ckpt_tuned, seq, mode.max_new, &hooks);
    }
    return decode_sample(ckpt_tuned, seq, mode.temperature, mode.seed, mode.max_new, &hooks);
}

} // namespace rlens
