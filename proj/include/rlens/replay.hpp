#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlens/lens.hpp"
#include "rlens/model.hpp"

namespace rlens {

enum class Polarity { Low, High };
enum class ThresholdMode { Dynamic, Static };

Polarity polarity_from_string(const std::string& s);
std::string to_string(Polarity p);
ThresholdMode threshold_mode_from_string(const std::string& s);
std::string to_string(ThresholdMode m);

struct ReplayConfig {
    double tau = 0.4;   // dynamic threshold fraction, in (0, 1]
    double alpha = 20.0; // step size (0 is an explicit no-op)
    int steps = 20;
    std::vector<int> layers; // objective layer set; empty = all layers 1..L
    Polarity polarity = Polarity::Low;
    ThresholdMode threshold_mode = ThresholdMode::Dynamic;
    double static_threshold = 0.0; // used only in static mode
    bool backtracking = true;
    int backtrack_limit = 10;
    double early_stop_rel = 1e-4;
    double grad_tol = 1e-8;
    bool aggregate_positions = false; // majority-vote position mask instead of per-layer

    void validate(int model_layers) const;
    std::vector<int> layer_set(int model_layers) const;
};

/// Boolean mask over (layer 0..L, visual position). Depends only on the base
/// model's trace.
struct EntropyMask {
    int layers = 0;    // rows == L+1
    int positions = 0; // visual positions
    std::vector<uint8_t> m;

    static EntropyMask empty(int layers, int positions) {
        EntropyMask mask;
        mask.layers = layers;
        mask.positions = positions;
        mask.m.assign(static_cast<size_t>(layers) * positions, 0);
        return mask;
    }
    bool at(int l, int i) const { return m[static_cast<size_t>(l) * positions + i] != 0; }
    void set(int l, int i, bool v) { m[static_cast<size_t>(l) * positions + i] = v ? 1 : 0; }
    int count() const;
};

/// Dynamic thresholding: position i is selected at layer l iff its base-model
/// lens entropy is strictly below max_j(entropy at layer l) * tau (low
/// polarity); high polarity is the exact complement.
EntropyMask low_entropy_mask(const Checkpoint& ckpt_base, const ActivationTrace& base_trace,
                             int n_visual, double tau, Polarity polarity);

/// Same selection rule against a precomputed entropy matrix [(L+1) x S].
EntropyMask mask_from_entropies(const Tensor& entropies, int n_visual, double tau,
                                Polarity polarity);

/// Static variant: absolute threshold instead of per-layer max * tau.
EntropyMask mask_from_entropies_static(const Tensor& entropies, int n_visual, double threshold,
                                       Polarity polarity);

/// Empirical quantile (lower interpolation) of base-model entropies over the
/// validation set's visual positions at all layers: the returned threshold
/// puts target_fraction of the pooled entropies below it.
double static_threshold(const std::vector<MultimodalSequence>& validation_set,
                        const Checkpoint& ckpt_base, double target_fraction);

struct StepRecord {
    int step = 0;           // 0 = initial point, k >= 1 = after the k-th update attempt
    double objective = 0.0; // masked KL at the point reached by this step
    double grad_norm = 0.0;
    double alpha = 0.0; // actual step length used (post-backtracking)
    bool accepted = false;
};

struct ReplayState {
    Tensor x; // [n_visual x d_model] additive tokens; all-zero before step 1
    EntropyMask mask;
    std::vector<StepRecord> history;

    double initial_objective() const { return history.empty() ? 0.0 : history.front().objective; }
    double final_objective() const { return history.empty() ? 0.0 : history.back().objective; }
};

/// Cached base-side quantities for the masked-KL objective: target
/// distributions, mask, and the constant sum(p_b log p_b) term. The base model
/// is run once here and never again during optimization.
struct ReplayObjective {
    std::vector<int> layer_set;
    int n_visual = 0;
    EntropyMask mask;
    std::vector<Tensor> masked_base; // per layer_set entry: [n_visual x V], row i = M ? p_base : 0
    double const_term = 0.0;         // sum over masked (l,i) of sum_v p_b log p_b

    double value(const Checkpoint& tuned, const MultimodalSequence& seq, const Tensor& x) const;
    double value_and_grad(const Checkpoint& tuned, const MultimodalSequence& seq, const Tensor& x,
                          Tensor& grad_out) const;
};

ReplayObjective make_replay_objective(const ModelPair& pair, const MultimodalSequence& seq,
                                      const ReplayConfig& config);

/// Masked KL of the tuned model's lens distributions (forwarded with layer-0
/// visual activations shifted by x) against fixed base-model distributions.
double replay_objective(const Checkpoint& ckpt_tuned, const MultimodalSequence& seq,
                        const Tensor& x, const LensProfile& base_profile, const EntropyMask& mask,
                        const std::vector<int>& layer_set);

/// Gradient descent on the additive tokens: x starts at zero, each accepted
/// step applies x <- x - alpha * grad(masked KL). With backtracking enabled a
/// step is accepted only if it strictly decreases the objective.
ReplayState replay_optimize(const ModelPair& pair, const MultimodalSequence& seq,
                            const ReplayConfig& config);

struct DecodeMode {
    bool greedy = true;
    double temperature = 1.0;
    uint64_t seed = 0;
    int max_new = 4;
};

/// Decodes the tuned model with the optimized tokens held fixed.
std::vector<int> apply_and_decode(const Checkpoint& ckpt_tuned, const MultimodalSequence& seq,
                                  const Tensor& x, const DecodeMode& mode);

} // namespace rlens
