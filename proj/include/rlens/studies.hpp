#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlens/replay.hpp"

namespace rlens {

struct InterventionSpec {
    Polarity strategy = Polarity::Low; // which entropy side gets spliced
    double tau = 0.4;                  // mask derivation threshold
    std::string donor = "base";       // base | tuned: which checkpoint supplies activations
    bool all_layers = false;           // default: layer-0 splice only
};

/// Decodes the tuned model with its layer-0 activations at masked visual
/// positions replaced by the donor's. The mask always derives from the base
/// model's trace.
std::vector<int> intervene_decode(const ModelPair& pair, const MultimodalSequence& seq,
                                  const InterventionSpec& spec, const DecodeMode& mode);

struct ProbeResponse {
    std::vector<int> tokens; // response token ids (EOS included if desired)
    bool correct = false;
};

struct PerturbationRecord {
    double scale = 0.0;
    uint64_t seed = 0;
    double kl_shift_low = 0.0;  // mean KL over low-entropy (l, i) minus clean baseline
    double kl_shift_high = 0.0; // same over the high-entropy complement
    std::vector<double> probe_perplexity;
    std::vector<bool> probe_correct;
};

struct PerturbationStudyConfig {
    double tau = 0.4;        // entropy partition threshold (clean base trace)
    std::vector<int> layers; // empty = all layers 1..L
};

/// Adds isotropic Gaussian noise to the raw visual vectors (both models see
/// the same perturbed input), recomputes traces, and records the KL shifts
/// split by the base-entropy mask plus the tuned model's perplexity on each
/// probe response. scale 0 reproduces the clean pipeline bit-exactly.
std::vector<PerturbationRecord> perturbation_sweep(const ModelPair& pair,
                                                   const MultimodalSequence& seq,
                                                   const std::vector<ProbeResponse>& probes,
                                                   const std::vector<double>& scales,
                                                   const std::vector<uint64_t>& seeds,
                                                   const PerturbationStudyConfig& cfg = {});

struct PassKReport {
    int k = 0;
    std::vector<std::vector<bool>> sample_correct; // [task][sample], K samples per task
    std::vector<double> pass_rate;                 // pass_rate[j] = Pass@(j+1) over sample prefixes
    double greedy_pass1 = 0.0;                     // computed separately from sampled Pass@1
};

/// Nested-prefix pass rates from a correctness matrix (the aggregation rule:
/// a task passes at K' if any of its first K' samples is correct).
std::vector<double> pass_rates_from_correctness(const std::vector<std::vector<bool>>& correct);

/// K samples per task at the given temperature with per-task seeds derived
/// from (seed, task index); correctness is exact answer match. When
/// per_task_x is given, sampling runs with those additive visual tokens.
PassKReport pass_at_k(const Checkpoint& ckpt, const std::vector<MultimodalSequence>& tasks, int K,
                      double temperature, uint64_t seed, int max_new = 4,
                      const std::vector<Tensor>* per_task_x = nullptr);

struct AblationCell {
    double tau = 0.0;
    double alpha = 0.0;
    double accuracy = 0.0;
    double delta = 0.0; // accuracy - baseline
    bool failed = false;
    std::string error;
};

struct AblationGrid {
    std::vector<double> taus;
    std::vector<double> alphas;
    double baseline_accuracy = 0.0;
    std::vector<std::vector<AblationCell>> cells; // [tau][alpha]
};

/// Runs replay_optimize + greedy apply_and_decode for every (tau, alpha) cell.
/// Per-cell failures are recorded and the grid continues.
AblationGrid ablation_grid(const ModelPair& pair, const std::vector<MultimodalSequence>& tasks,
                           const std::vector<double>& taus, const std::vector<double>& alphas,
                           const ReplayConfig& base_config, int max_new = 4);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

} // namespace rlens
