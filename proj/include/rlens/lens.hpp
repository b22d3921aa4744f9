#pragma once

#include <span>
#include <string>
#include <vector>

#include "rlens/model.hpp"
#include "rlens/tensor.hpp"

namespace rlens {

/// Per-layer, per-position lens view of one trace: vocabulary distributions,
/// entropies (natural log), and top-k token ids.
struct LensProfile {
    std::vector<Tensor> dist;                     // layer -> [positions x V]
    Tensor entropy;                               // [(L+1) x positions]
    std::vector<std::vector<std::vector<int>>> top_ids; // [layer][position] -> k ids
    int top_k = 3;

    int layer_count() const { return static_cast<int>(dist.size()); }
    int positions() const { return dist.empty() ? 0 : dist[0].rows(); }
};

/// Lens view of a base/tuned pair on one input, including per-(layer,
/// position) KL(base || tuned).
struct PairProfile {
    LensProfile base;
    LensProfile tuned;
    Tensor kl; // [(L+1) x positions]
};

/// Projects one hidden state through the checkpoint's own final norm and
/// vocabulary head: softmax(head(norm(h))).
Tensor logit_lens(const Checkpoint& ckpt, std::span<const double> h);

/// -sum(p log p), natural log, 0 log 0 := 0. p must sum to 1 within 1e-6.
double entropy(const Tensor& p);

/// sum(p_base log(p_base / p_tuned)) with p_tuned clamped at 1e-12 before the
/// division. Both inputs must be normalized within 1e-6. Exactly 0 for
/// bit-identical inputs.
double kl_divergence(const Tensor& p_base, const Tensor& p_tuned);

LensProfile profile_trace(const Checkpoint& ckpt, const ActivationTrace& trace, int top_k = 3);

PairProfile profile_pair(const ModelPair& pair, const MultimodalSequence& seq, int top_k = 3);

struct TopShiftResult {
    std::vector<std::vector<bool>> shifted; // [layer][position]
    double shift_rate = 0.0;
};

/// Flags every (layer, position) whose top-k id set differs between the two
/// profiles; reports the flagged fraction.
TopShiftResult top_prediction_shift(const LensProfile& base, const LensProfile& tuned, int k);

struct HeatmapSpec {
    int bins = 10;
    int layer_min = 0;
    int layer_max = -1; // -1 == last layer
    std::string normalization = "layerwise"; // layerwise | global | none

    void validate(int model_layers) const;
};

/// Entropy-percentile x layer heatmap of mean KL(base || tuned). Bins are
/// derived per layer from the base model's entropies only.
struct Heatmap {
    std::vector<int> layers;                    // layer index per row
    int bins = 0;
    std::vector<std::vector<double>> raw;        // [layer_row][bin], 0 where absent
    std::vector<std::vector<double>> normalized; // same shape
    std::vector<std::vector<int>> counts;        // 0 == absent cell
    std::vector<double> row_max;                 // max raw per layer row
};

Heatmap entropy_percentile_heatmap(const ModelPair& pair,
                                   const std::vector<MultimodalSequence>& dataset,
                                   const HeatmapSpec& spec);

} // namespace rlens
