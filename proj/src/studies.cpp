#include "rlens/studies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rlens/errors.hpp"
#include "rlens/train.hpp"

namespace rlens {

std::vector<int> intervene_decode(const ModelPair& pair, const MultimodalSequence& seq,
                                  const InterventionSpec& spec, const DecodeMode& mode) {
    pair.validate();
    if (spec.donor != "base" && spec.donor != "tuned") {
        throw ConfigError("intervention: donor must be base|tuned, got '" + spec.donor + "'");
    }
    const ActivationTrace base_trace = forward_with_trace(pair.base, seq).trace;
    const EntropyMask mask =
        low_entropy_mask(pair.base, base_trace, seq.n_visual(), spec.tau, spec.strategy);

    const bool donor_is_base = spec.donor == "base";
    const ActivationTrace donor_trace =
        donor_is_base ? base_trace : forward_with_trace(pair.tuned, seq).trace;

    const int d = pair.base.config.d_model;
    SpliceMap splice;
    const int top_layer = spec.all_layers ? mask.layers - 1 : 0;
    for (int l = 0; l <= top_layer; ++l) {
        std::vector<LayerOverride> overrides;
        for (int i = 0; i < mask.positions; ++i) {
            if (!mask.at(l, i)) continue;
            LayerOverride ov;
            ov.position = i;
            const Tensor& hl = donor_trace.hidden[static_cast<size_t>(l)];
            ov.value.assign(hl.data.begin() + static_cast<long>(i) * d,
                            hl.data.begin() + static_cast<long>(i + 1) * d);
            overrides.push_back(std::move(ov));
        }
        if (!overrides.empty()) {
            splice[l] = std::move(overrides);
        }
    }

    DecodeHooks hooks;
    hooks.splice = &splice;
    if (mode.greedy) {
        return decode_greedy(pair.tuned, seq, mode.max_new, &hooks);
    }
    return decode_sample(pair.tuned, seq, mode.temperature, mode.seed, mode.max_new, &hooks);
}

namespace {

struct MaskedKlMeans {
    double low = 0.0;
    double high = 0.0;
};

MaskedKlMeans masked_kl_means(const PairProfile& pp, const EntropyMask& mask,
                              const std::vector<int>& layers) {
    MaskedKlMeans out;
    int n_low = 0, n_high = 0;
    for (int l : layers) {
        for (int i = 0; i < mask.positions; ++i) {
            const double kl = pp.kl.at(l, i);
            if (mask.at(l, i)) {
                out.low += kl;
                ++n_low;
            } else {
                out.high += kl;
                ++n_high;
            }
        }
    }
    if (n_low > 0) out.low /= n_low;
    if (n_high > 0) out.high /= n_high;
    return out;
}

} // namespace

std::vector<PerturbationRecord> perturbation_sweep(const ModelPair& pair,
                                                   const MultimodalSequence& seq,
                                                   const std::vector<ProbeResponse>& probes,
                                                   const std::vector<double>& scales,
                                                   const std::vector<uint64_t>& seeds,
                                                   const PerturbationStudyConfig& cfg) {
    pair.validate();
    std::vector<int> layers = cfg.layers;
    if (layers.empty()) {
        for (int l = 1; l <= pair.base.config.layers; ++l) layers.push_back(l);
    }

    // Entropy partition from the clean base trace, fixed across the sweep.
    const ActivationTrace clean_base = forward_with_trace(pair.base, seq).trace;
    const EntropyMask mask =
        low_entropy_mask(pair.base, clean_base, seq.n_visual(), cfg.tau, Polarity::Low);

    const PairProfile clean_profile = profile_pair(pair, seq, 1);
    const MaskedKlMeans baseline = masked_kl_means(clean_profile, mask, layers);
    std::vector<double> baseline_ppl;
    for (const ProbeResponse& probe : probes) {
        baseline_ppl.push_back(perplexity(pair.tuned, seq, probe.tokens));
    }

    std::vector<PerturbationRecord> records;
    for (double scale : scales) {
        for (uint64_t noise_seed : seeds) {
            PerturbationRecord rec;
            rec.scale = scale;
            rec.seed = noise_seed;
            for (const ProbeResponse& probe : probes) {
                rec.probe_correct.push_back(probe.correct);
            }
            if (scale == 0.0) {
                // clean pipeline, bit-exactly
                rec.kl_shift_low = 0.0;
                rec.kl_shift_high = 0.0;
                rec.probe_perplexity = baseline_ppl;
                records.push_back(std::move(rec));
                continue;
            }
            MultimodalSequence noisy = seq;
            Rng rng(Rng::mix(noise_seed, 0xD01CEULL));
            for (auto& vec : noisy.visual) {
                for (double& v : vec) {
                    v += scale * rng.gaussian();
                }
            }
            const PairProfile pp = profile_pair(pair, noisy, 1);
            const MaskedKlMeans means = masked_kl_means(pp, mask, layers);
            rec.kl_shift_low = means.low - baseline.low;
            rec.kl_shift_high = means.high - baseline.high;
            for (const ProbeResponse& probe : probes) {
                rec.probe_perplexity.push_back(perplexity(pair.tuned, noisy, probe.tokens));
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

std::vector<double> pass_rates_from_correctness(const std::vector<std::vector<bool>>& correct) {
    if (correct.empty()) {
        throw std::invalid_argument("pass rates: empty correctness matrix");
    }
    const size_t k = correct[0].size();
    for (const auto& row : correct) {
        if (row.size() != k) {
            throw std::invalid_argument("pass rates: ragged correctness matrix");
        }
    }
    std::vector<double> rates(k, 0.0);
    for (const auto& row : correct) {
        bool any = false;
        for (size_t j = 0; j < k; ++j) {
            any = any || row[j];
            rates[j] += any ? 1.0 : 0.0;
        }
    }
    for (double& r : rates) {
        r /= static_cast<double>(correct.size());
    }
    return rates;
}

PassKReport pass_at_k(const Checkpoint& ckpt, const std::vector<MultimodalSequence>& tasks, int K,
                      double temperature, uint64_t seed, int max_new,
                      const std::vector<Tensor>* per_task_x) {
    if (K < 1) {
        throw std::invalid_argument("pass_at_k: K must be >= 1");
    }
    if (tasks.empty()) {
        throw DataError("pass_at_k: empty task list");
    }
    if (per_task_x && per_task_x->size() != tasks.size()) {
        throw std::invalid_argument("pass_at_k: per-task token list size mismatch");
    }
    PassKReport report;
    report.k = K;
    report.sample_correct.resize(tasks.size());
    int greedy_correct = 0;
    for (size_t t = 0; t < tasks.size(); ++t) {
        const MultimodalSequence& seq = tasks[t];
        DecodeHooks hooks;
        const DecodeHooks* hooks_ptr = nullptr;
        if (per_task_x) {
            hooks.visual_add = &(*per_task_x)[t];
            hooks_ptr = &hooks;
        }
        if (decode_greedy(ckpt, seq, max_new, hooks_ptr) == seq.answer) {
            ++greedy_correct;
        }
        const uint64_t task_seed = Rng::mix(seed, static_cast<uint64_t>(t));
        auto& row = report.sample_correct[t];
        row.resize(static_cast<size_t>(K));
        for (int j = 0; j < K; ++j) {
            const std::vector<int> sample = decode_sample(
                ckpt, seq, temperature, Rng::mix(task_seed, static_cast<uint64_t>(j)), max_new,
                hooks_ptr);
            row[static_cast<size_t>(j)] = sample == seq.answer;
        }
    }
    report.pass_rate = pass_rates_from_correctness(report.sample_correct);
    report.greedy_pass1 = static_cast<double>(greedy_correct) / static_cast<double>(tasks.size());
    return report;
}

AblationGrid ablation_grid(const ModelPair& pair, const std::vector<MultimodalSequence>& tasks,
                           const std::vector<double>& taus, const std::vector<double>& alphas,
                           const ReplayConfig& base_config, int max_new) {
    if (taus.empty() || alphas.empty()) {
        throw ConfigError("ablation: tau and alpha grids must be non-empty");
    }
    if (tasks.empty()) {
        throw DataError("ablation: empty task list");
    }
    AblationGrid grid;
    grid.taus = taus;
    grid.alphas = alphas;
    grid.baseline_accuracy = greedy_accuracy(pair.tuned, tasks, max_new);

    for (double tau : taus) {
        std::vector<AblationCell> row;
        for (double alpha : alphas) {
            AblationCell cell;
            cell.tau = tau;
            cell.alpha = alpha;
            try {
                ReplayConfig cfg = base_config;
                cfg.tau = tau;
                cfg.alpha = alpha;
                int correct = 0;
                for (const MultimodalSequence& seq : tasks) {
                    const ReplayState state = replay_optimize(pair, seq, cfg);
                    DecodeMode mode;
                    mode.greedy = true;
                    mode.max_new = max_new;
                    if (apply_and_decode(pair.tuned, seq, state.x, mode) == seq.answer) {
                        ++correct;
                    }
                }
                cell.accuracy = static_cast<double>(correct) / static_cast<double>(tasks.size());
                cell.delta = cell.accuracy - grid.baseline_accuracy;
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.error = e.what();
            }
            row.push_back(std::move(cell));
        }
        grid.cells.push_back(std::move(row));
    }
    return grid;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("spearman: need two equal-length series with >= 2 points");
    }
    auto ranks = [](const std::vector<double>& v) {
        const size_t n = v.size();
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) {
                ++j;
            }
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (size_t t = i; t <= j; ++t) {
                r[order[t]] = avg; // average rank for ties
            }
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a);
    const std::vector<double> rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double da = ra[i] - ma;
        const double db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0) {
        return 0.0; // a constant series carries no rank signal
    }
    return cov / std::sqrt(va * vb);
}

} // namespace rlens
