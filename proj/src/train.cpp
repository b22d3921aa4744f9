#include "rlens/train.hpp"

#include <algorithm>
#include <cmath>

#include "rlens/errors.hpp"
#include "rlens/lens.hpp"

namespace rlens {

void TrainConfig::validate() const {
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (aux_weight < 0.0) throw ConfigError("train: aux_weight must be >= 0");
    if (eval_tasks < 1) throw ConfigError("train: eval_tasks must be >= 1");
}

void PairConfig::validate() const {
    if (mode != "corruption" && mode != "continued") {
        throw ConfigError("pair: unknown mode '" + mode + "' (expected corruption|continued)");
    }
    if (scale < 0.0) throw ConfigError("pair: scale must be >= 0");
    if (!(target_tau > 0.0 && target_tau <= 1.0)) {
        throw ConfigError("pair: target_tau must be in (0, 1]");
    }
    if (probe_tasks < 1) throw ConfigError("pair: probe_tasks must be >= 1");
    if (steps < 0) throw ConfigError("pair: steps must be >= 0");
}

namespace {

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    int64_t t = 0;
};

/// One optimization step over a task batch. Loss: cross-entropy of the answer
/// digit at the query position and of EOS at the answer position, plus the
/// auxiliary digit-identity loss at digit-bearing visual positions.
double train_step(Checkpoint& ckpt, const std::vector<Task>& batch, const TrainConfig& cfg,
                  double lr, const TrainConfig& loss_weights, AdamState& adam) {
    Tape tape(true);
    ParamNodes params = param_leaves(tape, ckpt, true);
    const int V = ckpt.config.vocab;

    int total_loss = -1;
    for (const Task& task : batch) {
        const MultimodalSequence& seq = task.seq;
        const int n = seq.n_visual();
        const int answer = seq.answer.at(0);
        std::vector<int> generated = {answer};
        ForwardOptions options;
        options.generated = generated;
        ForwardGraph graph = build_forward(tape, ckpt.config, params, seq, options);

        const int S = n + seq.n_text() + 1;
        Tensor weights = Tensor::zeros({S, V});
        double weight_total = 2.0;
        weights.at(seq.context_len() - 1, answer) = 1.0; // query position predicts the digit
        weights.at(seq.context_len(), vocab::kEos) = 1.0; // digit position predicts EOS
        if (loss_weights.prompt_lm_weight > 0.0) {
            // op position predicts the query token
            weights.at(n, vocab::kQuery) = loss_weights.prompt_lm_weight;
            weight_total += loss_weights.prompt_lm_weight;
        }
        if (loss_weights.aux_weight > 0.0) {
            for (size_t i = 0; i < task.digits.size(); ++i) {
                weights.at(static_cast<int>(i), vocab::kDigitBase + task.digits[i]) =
                    loss_weights.aux_weight;
                weight_total += loss_weights.aux_weight;
            }
        }
        if (loss_weights.pad_uniform_weight > 0.0) {
            // blank slots: cross-entropy against the uniform distribution
            const double w = loss_weights.pad_uniform_weight / static_cast<double>(V);
            for (int i = static_cast<int>(task.digits.size()); i < n; ++i) {
                for (int v = 0; v < V; ++v) {
                    weights.at(i, v) = w;
                }
                weight_total += loss_weights.pad_uniform_weight;
            }
        }
        int logp = tape.log_clamped(tape.softmax_rows(graph.logits));
        int ce = tape.scale(tape.dot(logp, tape.constant(std::move(weights))), -1.0 / weight_total);
        total_loss = total_loss < 0 ? ce : tape.add(total_loss, ce);
    }
    int loss = tape.scale(total_loss, 1.0 / static_cast<double>(batch.size()));
    tape.backward(loss);

    // Global-norm clip, then Adam.
    double sq = 0.0;
    for (const auto& [name, node] : params) {
        const Tensor& g = tape.grad(node);
        for (double v : g.data) sq += v * v;
    }
    const double gnorm = std::sqrt(sq);
    const double clip = cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip ? cfg.grad_clip / gnorm : 1.0;

    adam.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.t));
    for (auto& [name, tensor] : ckpt.params) {
        const Tensor& g = tape.grad(params.at(name));
        Tensor& m = adam.m.at(name);
        Tensor& v = adam.v.at(name);
        for (size_t i = 0; i < tensor.data.size(); ++i) {
            const double gi = g.data[i] * clip;
            m.data[i] = cfg.adam_beta1 * m.data[i] + (1.0 - cfg.adam_beta1) * gi;
            v.data[i] = cfg.adam_beta2 * v.data[i] + (1.0 - cfg.adam_beta2) * gi * gi;
            const double mh = m.data[i] / bc1;
            const double vh = v.data[i] / bc2;
            tensor.data[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
        }
    }
    return tape.val(loss).data[0];
}

std::vector<double> run_training(Checkpoint& ckpt, const TaskSpec& task, const TrainConfig& cfg,
                                 const TrainConfig& loss_weights, uint64_t data_seed) {
    AdamState adam;
    for (const auto& [name, tensor] : ckpt.params) {
        adam.m.emplace(name, Tensor::zeros(tensor.shape));
        adam.v.emplace(name, Tensor::zeros(tensor.shape));
    }
    Rng task_rng(Rng::mix(data_seed, 0x7EA2ULL));
    std::vector<double> curve;
    curve.reserve(static_cast<size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Task> batch;
        batch.reserve(static_cast<size_t>(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            batch.push_back(make_task(task, task_rng));
        }
        const double warm =
            cfg.lr_warmup > 0 ? std::min(1.0, (step + 1) / static_cast<double>(cfg.lr_warmup)) : 1.0;
        // cosine decay to 10% over the run
        const double progress = cfg.steps > 1 ? step / static_cast<double>(cfg.steps - 1) : 1.0;
        const double decay = 0.55 + 0.45 * std::cos(progress * 3.14159265358979323846);
        const double lr = cfg.lr * warm * decay;
        const double loss = train_step(ckpt, batch, cfg, lr, loss_weights, adam);
        if (!std::isfinite(loss)) {
            throw NumericError("training: non-finite loss at step " + std::to_string(step), step);
        }
        curve.push_back(loss);
    }
    return curve;
}

} // namespace

double greedy_accuracy(const Checkpoint& ckpt, const std::vector<MultimodalSequence>& tasks,
                       int max_new) {
    if (tasks.empty()) {
        throw DataError("greedy_accuracy: empty task list");
    }
    int correct = 0;
    for (const MultimodalSequence& seq : tasks) {
        if (decode_greedy(ckpt, seq, max_new) == seq.answer) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(tasks.size());
}

TrainResult train_toy(const ModelConfig& config, const TaskSpec& task, const TrainConfig& train,
                      uint64_t seed) {
    config.validate();
    task.validate();
    train.validate();
    if (config.visual_dim != task.visual_dim) {
        throw ConfigError("train: model visual_dim != task visual_dim");
    }

    TrainResult result;
    result.ckpt = init_checkpoint(config, seed);
    result.loss_curve = run_training(result.ckpt, task, train, train, seed);
    result.ckpt.meta.seed = seed;
    result.ckpt.meta.train_steps = train.steps;
    result.ckpt.meta.lineage = "base";

    const std::vector<Task> holdout = make_tasks(task, Rng::mix(seed, 0xE7A1ULL), train.eval_tasks);
    result.holdout_accuracy = greedy_accuracy(result.ckpt, to_sequences(holdout));
    if (result.holdout_accuracy < train.target_accuracy) {
        throw TrainFailure("training did not converge: held-out accuracy " +
                               std::to_string(result.holdout_accuracy) + " < " +
                               std::to_string(train.target_accuracy) + " after " +
                               std::to_string(train.steps) + " steps",
                           result.loss_curve, result.holdout_accuracy);
    }
    return result;
}

Checkpoint make_tuned(const Checkpoint& base, const TaskSpec& task, const PairConfig& params) {
    params.validate();
    Checkpoint tuned = base;

    if (params.mode == "continued") {
        tuned.meta.lineage = "tuned";
        if (params.steps == 0) {
            return tuned; // no-op continuation
        }
        TrainConfig cfg;
        cfg.steps = params.steps;
        cfg.lr = params.lr;
        cfg.lr_warmup = 0;
        TrainConfig loss_weights = cfg; // answer-weighted loss only
        loss_weights.aux_weight = 0.0;
        loss_weights.prompt_lm_weight = 0.0;
        loss_weights.pad_uniform_weight = 0.0;
        run_training(tuned, task, cfg, loss_weights, Rng::mix(params.seed, 0xC011ULL));
        tuned.meta.train_steps = base.meta.train_steps + params.steps;
        return tuned;
    }

    tuned.meta.lineage = "corrupted";
    if (params.scale == 0.0) {
        return tuned; // zero perturbation: parameters equal base bit-exactly
    }

    // Probe the base model to find its low-entropy visual positions.
    const std::vector<Task> probes =
        make_tasks(task, Rng::mix(params.seed, 0x9B0BE5ULL), params.probe_tasks);
    std::vector<double> mean_entropy(static_cast<size_t>(task.n_visual), 0.0);
    int samples = 0;
    for (const Task& probe : probes) {
        const ActivationTrace trace = forward_with_trace(base, probe.seq).trace;
        const LensProfile profile = profile_trace(base, trace, 1);
        for (int l = 1; l < profile.layer_count(); ++l) { // layer 0 entropies are codebook noise
            for (int i = 0; i < task.n_visual; ++i) {
                mean_entropy[static_cast<size_t>(i)] += profile.entropy.at(l, i);
            }
        }
        samples += profile.layer_count() - 1;
    }
    for (double& e : mean_entropy) {
        e /= static_cast<double>(samples);
    }
    const double max_e = *std::max_element(mean_entropy.begin(), mean_entropy.end());
    std::vector<int> targets;
    for (int i = 0; i < task.n_visual; ++i) {
        if (mean_entropy[static_cast<size_t>(i)] < max_e * params.target_tau) {
            targets.push_back(i);
        }
    }
    if (targets.empty()) {
        targets.push_back(static_cast<int>(std::min_element(mean_entropy.begin(), mean_entropy.end()) -
                                           mean_entropy.begin()));
    }

    // Unit noise direction is drawn once from the seed; scale only multiplies
    // it, so the perturbation grows monotonically with scale at fixed seed.
    Rng noise(Rng::mix(params.seed, 0xC0880A7ULL));
    Tensor& wc = tuned.param_mut("connector.w");
    const double wc_std = params.connector_gain / std::sqrt(static_cast<double>(base.config.visual_dim));
    for (double& v : wc.data) {
        v += params.scale * wc_std * noise.gaussian();
    }
    Tensor& pos = tuned.param_mut("pos_emb");
    for (int i : targets) {
        for (int c = 0; c < base.config.d_model; ++c) {
            pos.at(i, c) += params.scale * params.pos_gain * noise.gaussian();
        }
    }
    return tuned;
}

} // namespace rlens
