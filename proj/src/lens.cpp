#include "rlens/lens.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rlens/errors.hpp"
#include "rlens/kernels.hpp"

namespace rlens {

namespace {

void check_normalized(const Tensor& p, const char* who) {
    double total = 0.0;
    for (double v : p.data) {
        if (v < -1e-12) {
            throw std::invalid_argument(std::string(who) + ": negative probability");
        }
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw std::invalid_argument(std::string(who) + ": distribution sums to " +
                                    std::to_string(total) + ", not 1 within 1e-6");
    }
}

std::vector<int> top_ids_of_row(const Tensor& dist, int row, int k) {
    const int V = dist.cols();
    std::vector<int> ids(static_cast<size_t>(V));
    std::iota(ids.begin(), ids.end(), 0);
    const double* p = dist.data.data() + static_cast<size_t>(row) * V;
    std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [p](int a, int b) {
        if (p[a] != p[b]) return p[a] > p[b];
        return a < b; // deterministic tie-break
    });
    ids.resize(static_cast<size_t>(k));
    return ids;
}

} // namespace

Tensor logit_lens(const Checkpoint& ckpt, std::span<const double> h) {
    return project_to_vocab(ckpt, h);
}

double entropy(const Tensor& p) {
    check_normalized(p, "entropy");
    double e = 0.0;
    for (double v : p.data) {
        if (v > 0.0) {
            e -= v * std::log(v);
        }
    }
    return e < 0.0 ? 0.0 : e; // guard against -0.0 style rounding
}

double kl_divergence(const Tensor& p_base, const Tensor& p_tuned) {
    if (!p_base.same_shape(p_tuned)) {
        throw std::invalid_argument("kl_divergence: shape mismatch " + shape_str(p_base.shape) +
                                    " vs " + shape_str(p_tuned.shape));
    }
    check_normalized(p_base, "kl_divergence(base)");
    check_normalized(p_tuned, "kl_divergence(tuned)");
    double kl = 0.0;
    for (size_t i = 0; i < p_base.data.size(); ++i) {
        const double pb = p_base.data[i];
        if (pb > 0.0) {
            const double pr = std::max(p_tuned.data[i], kernels::kLogClamp);
            kl += pb * (std::log(pb) - std::log(pr));
        }
    }
    // Rounding (and the clamp on sub-1e-12 mass) can leave a tiny negative
    // residue for near-identical inputs; snap it to the exact lower bound.
    if (kl < 0.0) {
        if (kl < -1e-8) {
            throw NumericError("kl_divergence: substantially negative value " + std::to_string(kl));
        }
        kl = 0.0;
    }
    return kl;
}

LensProfile profile_trace(const Checkpoint& ckpt, const ActivationTrace& trace, int top_k) {
    if (top_k < 1 || top_k > ckpt.config.vocab) {
        throw std::invalid_argument("profile_trace: top_k out of range");
    }
    const int L1 = trace.layer_count();
    const int S = trace.positions();
    const int d = ckpt.config.d_model;
    LensProfile profile;
    profile.top_k = top_k;
    profile.entropy = Tensor::zeros({L1, S});
    profile.dist.reserve(static_cast<size_t>(L1));
    profile.top_ids.resize(static_cast<size_t>(L1));
    for (int l = 0; l < L1; ++l) {
        const Tensor& hl = trace.hidden[static_cast<size_t>(l)];
        Tensor dl = Tensor::zeros({S, ckpt.config.vocab});
        for (int i = 0; i < S; ++i) {
            std::span<const double> row(hl.data.data() + static_cast<size_t>(i) * d,
                                        static_cast<size_t>(d));
            Tensor p = logit_lens(ckpt, row);
            std::copy(p.data.begin(), p.data.end(),
                      dl.data.begin() + static_cast<long>(i) * ckpt.config.vocab);
            profile.entropy.at(l, i) = entropy(p);
        }
        profile.top_ids[static_cast<size_t>(l)].resize(static_cast<size_t>(S));
        for (int i = 0; i < S; ++i) {
            profile.top_ids[static_cast<size_t>(l)][static_cast<size_t>(i)] =
                top_ids_of_row(dl, i, top_k);
        }
        profile.dist.push_back(std::move(dl));
    }
    return profile;
}

PairProfile profile_pair(const ModelPair& pair, const MultimodalSequence& seq, int top_k) {
    pair.validate();
    PairProfile pp;
    pp.base = profile_trace(pair.base, forward_with_trace(pair.base, seq).trace, top_k);
    pp.tuned = profile_trace(pair.tuned, forward_with_trace(pair.tuned, seq).trace, top_k);
    const int L1 = pp.base.layer_count();
    const int S = pp.base.positions();
    pp.kl = Tensor::zeros({L1, S});
    const int V = pair.base.config.vocab;
    for (int l = 0; l < L1; ++l) {
        for (int i = 0; i < S; ++i) {
            Tensor pb = Tensor::zeros({V});
            Tensor pt = Tensor::zeros({V});
            std::copy_n(pp.base.dist[static_cast<size_t>(l)].data.begin() +
                            static_cast<long>(i) * V,
                        V, pb.data.begin());
            std::copy_n(pp.tuned.dist[static_cast<size_t>(l)].data.begin() +
                            static_cast<long>(i) * V,
                        V, pt.data.begin());
            pp.kl.at(l, i) = kl_divergence(pb, pt);
        }
    }
    return pp;
}

TopShiftResult top_prediction_shift(const LensProfile& base, const LensProfile& tuned, int k) {
    if (base.layer_count() != tuned.layer_count() || base.positions() != tuned.positions()) {
        throw std::invalid_argument("top_prediction_shift: profile dimensions differ");
    }
    if (k < 1) {
        throw std::invalid_argument("top_prediction_shift: k must be >= 1");
    }
    TopShiftResult result;
    const int L1 = base.layer_count();
    const int S = base.positions();
    result.shifted.assign(static_cast<size_t>(L1), std::vector<bool>(static_cast<size_t>(S), false));
    int flagged = 0;
    for (int l = 0; l < L1; ++l) {
        for (int i = 0; i < S; ++i) {
            std::vector<int> a = top_ids_of_row(base.dist[static_cast<size_t>(l)], i, k);
            std::vector<int> b = top_ids_of_row(tuned.dist[static_cast<size_t>(l)], i, k);
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            const bool moved = a != b;
            result.shifted[static_cast<size_t>(l)][static_cast<size_t>(i)] = moved;
            flagged += moved ? 1 : 0;
        }
    }
    result.shift_rate = static_cast<double>(flagged) / (static_cast<double>(L1) * S);
    return result;
}

void HeatmapSpec::validate(int model_layers) const {
    if (bins < 2) throw ConfigError("heatmap: bins must be >= 2");
    const int top = layer_max < 0 ? model_layers : layer_max;
    if (layer_min < 0 || top > model_layers || layer_min > top) {
        throw ConfigError("heatmap: layer range [" + std::to_string(layer_min) + ", " +
                          std::to_string(top) + "] outside [0, " + std::to_string(model_layers) + "]");
    }
    if (normalization != "layerwise" && normalization != "global" && normalization != "none") {
        throw ConfigError("heatmap: unknown normalization mode '" + normalization + "'");
    }
}

Heatmap entropy_percentile_heatmap(const ModelPair& pair,
                                   const std::vector<MultimodalSequence>& dataset,
                                   const HeatmapSpec& spec) {
    pair.validate();
    spec.validate(pair.base.config.layers);
    if (dataset.empty()) {
        throw DataError("heatmap: dataset is empty");
    }
    const int L = pair.base.config.layers;
    const int layer_top = spec.layer_max < 0 ? L : spec.layer_max;

    Heatmap map;
    map.bins = spec.bins;
    for (int l = spec.layer_min; l <= layer_top; ++l) {
        map.layers.push_back(l);
    }
    const size_t n_rows = map.layers.size();

    // Pooled (base entropy, kl) points per layer over every context position.
    std::vector<std::vector<std::pair<double, double>>> points(n_rows);
    for (const MultimodalSequence& seq : dataset) {
        PairProfile pp = profile_pair(pair, seq, 1);
        for (size_t r = 0; r < n_rows; ++r) {
            const int l = map.layers[r];
            for (int i = 0; i < pp.base.positions(); ++i) {
                points[r].emplace_back(pp.base.entropy.at(l, i), pp.kl.at(l, i));
            }
        }
    }

    map.raw.assign(n_rows, std::vector<double>(static_cast<size_t>(spec.bins), 0.0));
    map.normalized = map.raw;
    map.counts.assign(n_rows, std::vector<int>(static_cast<size_t>(spec.bins), 0));
    map.row_max.assign(n_rows, 0.0);

    double global_max = 0.0;
    for (size_t r = 0; r < n_rows; ++r) {
        auto& pts = points[r];
        const int N = static_cast<int>(pts.size());
        // Percentile edges from base entropies only (lower interpolation).
        std::vector<double> ent(pts.size());
        for (size_t i = 0; i < pts.size(); ++i) ent[i] = pts[i].first;
        std::sort(ent.begin(), ent.end());
        std::vector<double> edges;
        for (int j = 1; j < spec.bins; ++j) {
            const int idx = std::min(N - 1, static_cast<int>((static_cast<int64_t>(j) * N) / spec.bins));
            edges.push_back(ent[static_cast<size_t>(idx)]);
        }
        // Bucket by value so the layout is independent of dataset order, then
        // accumulate each cell in sorted order for bit-stable means.
        std::vector<std::vector<double>> cells(static_cast<size_t>(spec.bins));
        for (const auto& [e, kl] : pts) {
            int bin = 0;
            for (double edge : edges) {
                if (e >= edge) ++bin;
            }
            cells[static_cast<size_t>(bin)].push_back(kl);
        }
        for (int b = 0; b < spec.bins; ++b) {
            auto& cell = cells[static_cast<size_t>(b)];
            map.counts[r][static_cast<size_t>(b)] = static_cast<int>(cell.size());
            if (cell.empty()) continue; // absent, not zero
            std::sort(cell.begin(), cell.end());
            double total = 0.0;
            for (double v : cell) total += v;
            map.raw[r][static_cast<size_t>(b)] = total / static_cast<double>(cell.size());
            map.row_max[r] = std::max(map.row_max[r], map.raw[r][static_cast<size_t>(b)]);
        }
        global_max = std::max(global_max, map.row_max[r]);
    }

    for (size_t r = 0; r < n_rows; ++r) {
        double denom = 1.0;
        if (spec.normalization == "layerwise") {
            denom = map.row_max[r] > 0.0 ? map.row_max[r] : 1.0;
        } else if (spec.normalization == "global") {
            denom = global_max > 0.0 ? global_max : 1.0;
        }
        for (int b = 0; b < spec.bins; ++b) {
            map.normalized[r][static_cast<size_t>(b)] = map.raw[r][static_cast<size_t>(b)] / denom;
        }
    }
    return map;
}

} // namespace rlens
