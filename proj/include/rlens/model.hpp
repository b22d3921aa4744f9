#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlens/tape.hpp"
#include "rlens/tasks.hpp"
#include "rlens/tensor.hpp"

namespace rlens {

struct ModelConfig {
    int layers = 4;
    int d_model = 64;
    int heads = 4;
    int vocab = 64;
    int max_seq = 32;
    int visual_dim = 16;
    int mlp_hidden = 128;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct CheckpointMeta {
    uint64_t seed = 0;
    int64_t train_steps = 0;
    std::string lineage = "base"; // base | tuned | corrupted
};

/// A named-parameter checkpoint. The ordered map gives deterministic
/// serialization; parameters are immutable in-place once a checkpoint is
/// shared (training and pair synthesis build fresh maps).
struct Checkpoint {
    ModelConfig config;
    std::map<std::string, Tensor> params;
    CheckpointMeta meta;

    const Tensor& param(const std::string& name) const;
    Tensor& param_mut(const std::string& name);
};

/// Fresh randomly initialized checkpoint; deterministic in (config, seed).
Checkpoint init_checkpoint(const ModelConfig& config, uint64_t seed);

bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b);

struct ModelPair {
    Checkpoint base;
    Checkpoint tuned;

    void validate() const; // identical configs
};

/// Per-layer, per-position hidden states recorded during one prefill forward.
/// hidden[0] is the post-connector/post-embedding input; hidden[l] for l >= 1
/// is the output of transformer block l. Dimensions: (layers+1) x positions x
/// d_model.
struct ActivationTrace {
    std::vector<Tensor> hidden; // each [positions x d_model]

    int layer_count() const { return static_cast<int>(hidden.size()); } // == L+1
    int positions() const { return hidden.empty() ? 0 : hidden[0].rows(); }
};

/// Replacement of one position's activation at a given layer boundary.
struct LayerOverride {
    int position = 0;
    std::vector<double> value; // d_model wide
};

/// layer index -> replacements applied to that layer's trace row before the
/// next block runs. Key 0 replaces layer-0 input activations.
using SpliceMap = std::map<int, std::vector<LayerOverride>>;

struct ForwardResult {
    Tensor logits; // [S x V], next-token logits per position
    ActivationTrace trace;
};

/// Graph-level forward used by inference, training, and the replay objective;
/// returns node ids on the caller's tape.
struct ForwardGraph {
    int logits = -1;
    std::vector<int> hidden; // L+1 node ids
};

using ParamNodes = std::map<std::string, int>;

ParamNodes param_leaves(Tape& tape, const Checkpoint& ckpt, bool requires_grad);

struct ForwardOptions {
    std::span<const int> generated;    // tokens appended after the prompt
    const SpliceMap* splice = nullptr; // per-layer activation replacements
    int visual_add_node = -1;          // [n x d_model] node added to visual rows of layer 0
};

ForwardGraph build_forward(Tape& tape, const ModelConfig& config, const ParamNodes& params,
                           const MultimodalSequence& seq, const ForwardOptions& options = {});

/// Prefill forward with full activation trace. Overrides, when given, replace
/// layer-0 activations at the stated context positions before block 1 runs.
ForwardResult forward_with_trace(const Checkpoint& ckpt, const MultimodalSequence& seq,
                                 const std::vector<LayerOverride>& overrides = {});

/// head(final_norm(h)) for a single hidden-state row.
Tensor vocab_logits_row(const Checkpoint& ckpt, std::span<const double> h);

/// softmax(head(final_norm(h))): the lens projection and, at the final layer's
/// last position, the model's own output distribution (same code path).
Tensor project_to_vocab(const Checkpoint& ckpt, std::span<const double> h);

/// Extra inputs threaded through decoding: additive visual tokens (kept fixed
/// for every generated token) and/or activation splices on the input context.
struct DecodeHooks {
    const Tensor* visual_add = nullptr; // [n x d_model]
    const SpliceMap* splice = nullptr;
};

std::vector<int> decode_greedy(const Checkpoint& ckpt, const MultimodalSequence& seq, int max_new,
                               const DecodeHooks* hooks = nullptr);

std::vector<int> decode_sample(const Checkpoint& ckpt, const MultimodalSequence& seq,
                               double temperature, uint64_t seed, int max_new,
                               const DecodeHooks* hooks = nullptr);

/// exp(mean NLL) of the response tokens under teacher forcing.
double perplexity(const Checkpoint& ckpt, const MultimodalSequence& seq,
                  const std::vector<int>& response, const DecodeHooks* hooks = nullptr);

} // namespace rlens
