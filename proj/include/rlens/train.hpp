#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlens/model.hpp"
#include "rlens/tasks.hpp"

namespace rlens {

struct TrainConfig {
    int steps = 1200;
    int batch = 32;
    double lr = 3e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    int lr_warmup = 50;
    /// Weight of the auxiliary digit-identity loss at digit-bearing visual
    /// positions. This is what anchors those positions to confident (low
    /// entropy) lens distributions.
    double aux_weight = 1.0;
    /// Weight of the uniform-distribution loss at blank visual slots. Blanks
    /// learn to stay maximally uncertain regardless of context, which pins
    /// them to the top of the entropy range and keeps them stable.
    double pad_uniform_weight = 1.0;
    /// Weight of the next-token loss inside the prompt (the operation token
    /// predicting the query token). Off by default.
    double prompt_lm_weight = 0.0;
    int eval_tasks = 200;
    double target_accuracy = 0.9;

    void validate() const;
};

struct TrainResult {
    Checkpoint ckpt;
    std::vector<double> loss_curve;
    double holdout_accuracy = 0.0;
};

/// Trains a fresh toy model on the visual-arithmetic task. Deterministic in
/// (config, task spec, seed). Throws TrainFailure (carrying the loss curve) if
/// the held-out greedy accuracy misses target_accuracy.
TrainResult train_toy(const ModelConfig& config, const TaskSpec& task, const TrainConfig& train,
                      uint64_t seed);

/// Greedy exact-match accuracy over a task list.
double greedy_accuracy(const Checkpoint& ckpt, const std::vector<MultimodalSequence>& tasks,
                       int max_new = 4);

struct PairConfig {
    std::string mode = "corruption"; // corruption | continued
    double scale = 0.1;
    uint64_t seed = 7;
    /// Visual positions whose mean base entropy over layers 1..L falls
    /// strictly below target_tau * max are corruption targets.
    double target_tau = 0.5;
    int probe_tasks = 64;
    /// Noise gains: positional-embedding rows of targeted positions get
    /// scale * pos_gain * N(0,1); the connector projection gets
    /// scale * connector_gain / sqrt(visual_dim) * N(0,1) per entry.
    double pos_gain = 4.0;
    double connector_gain = 4.0;
    // continued-training mode:
    int steps = 300;
    double lr = 1e-3;

    void validate() const;
};

/// Synthesizes the post-trained counterpart. Corruption mode adds a seeded
/// perturbation to the connector projection and to the visual positional
/// embeddings of low-entropy positions, so the induced distribution shift
/// concentrates where the base model is confident. Continued mode trains
/// further on an answer-only loss. scale 0 / steps 0 returns base bit-exactly.
Checkpoint make_tuned(const Checkpoint& base, const TaskSpec& task, const PairConfig& params);

} // namespace rlens
