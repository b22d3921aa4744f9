#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlens/tensor.hpp"

namespace rlens {

/// Fixed synthetic vocabulary map. Ids 0..9 are the digit tokens; the rest of
/// the vocabulary (>= kFillerStart) is filler that only matters for entropy
/// spread in the lens distributions.
namespace vocab {
inline constexpr int kDigitBase = 0; // digits 0..9 occupy ids 0..9
inline constexpr int kSum = 10;
inline constexpr int kMax = 11;
inline constexpr int kQuery = 12;
inline constexpr int kEos = 13; // end-of-answer
inline constexpr int kFillerStart = 14;
inline constexpr int kMinVocab = 16;
} // namespace vocab

/// One multimodal input: a continuous visual prefix, discrete prompt tokens,
/// and optional gold answer tokens for scoring.
struct MultimodalSequence {
    std::vector<std::vector<double>> visual; // n raw vectors, visual_dim each
    std::vector<int> text;                   // m prompt token ids
    std::vector<int> answer;                 // gold answer token ids (no EOS), may be empty

    int n_visual() const { return static_cast<int>(visual.size()); }
    int n_text() const { return static_cast<int>(text.size()); }
    int context_len() const { return n_visual() + n_text(); }
};

/// Parameters of the "visual arithmetic" task family: the first n_digits
/// visual slots carry digit codes (fixed random projections), the remaining
/// slots carry the zero vector, and the prompt asks for sum-mod-10 or max.
struct TaskSpec {
    int n_visual = 8;
    int n_digits = 3;
    int visual_dim = 16;
    uint64_t encoder_seed = 0xC0DEC0DEULL; // fixes the digit -> vector codebook
    bool use_sum = true;
    bool use_max = true;

    void validate() const;
};

struct Task {
    MultimodalSequence seq;
    int op = vocab::kSum;    // kSum or kMax
    std::vector<int> digits; // the encoded digit values
};

/// The fixed digit codebook: 10 rows of visual_dim, deterministic in
/// encoder_seed. Blank slots use the zero vector (row index 10).
Tensor digit_codebook(const TaskSpec& spec);

Task make_task(const TaskSpec& spec, Rng& rng);
std::vector<Task> make_tasks(const TaskSpec& spec, uint64_t seed, int count);

std::vector<MultimodalSequence> to_sequences(const std::vector<Task>& tasks);

/// JSONL dataset format: one task per line with fields
///   visual: array of arrays, text: token ids, answer: token ids.
void write_tasks_jsonl(const std::string& path, const std::vector<MultimodalSequence>& tasks);
std::vector<MultimodalSequence> read_tasks_jsonl(const std::string& path);

} // namespace rlens
