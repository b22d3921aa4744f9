#include "rlens/tasks.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

#include "rlens/errors.hpp"

namespace rlens {

void TaskSpec::validate() const {
    if (n_visual < 1) throw ConfigError("task: n_visual must be >= 1");
    if (n_digits < 1 || n_digits > n_visual) {
        throw ConfigError("task: n_digits must be in [1, n_visual]");
    }
    if (visual_dim < 1) throw ConfigError("task: visual_dim must be >= 1");
    if (!use_sum && !use_max) throw ConfigError("task: at least one of sum/max must be enabled");
}

Tensor digit_codebook(const TaskSpec& spec) {
    Rng rng(Rng::mix(spec.encoder_seed, 0x5EEDU));
    return Tensor::randn({10, spec.visual_dim}, rng);
}

Task make_task(const TaskSpec& spec, Rng& rng) {
    spec.validate();
    static thread_local Tensor codebook;
    static thread_local uint64_t codebook_seed = 0;
    static thread_local int codebook_dim = -1;
    if (codebook_seed != spec.encoder_seed || codebook_dim != spec.visual_dim) {
        codebook = digit_codebook(spec);
        codebook_seed = spec.encoder_seed;
        codebook_dim = spec.visual_dim;
    }

    Task task;
    if (spec.use_sum && spec.use_max) {
        task.op = rng.below(2) == 0 ? vocab::kSum : vocab::kMax;
    } else {
        task.op = spec.use_sum ? vocab::kSum : vocab::kMax;
    }
    task.digits.resize(static_cast<size_t>(spec.n_digits));
    for (int& d : task.digits) {
        d = rng.below(10);
    }

    MultimodalSequence& seq = task.seq;
    seq.visual.assign(static_cast<size_t>(spec.n_visual),
                      std::vector<double>(static_cast<size_t>(spec.visual_dim), 0.0));
    for (int i = 0; i < spec.n_digits; ++i) {
        const int d = task.digits[static_cast<size_t>(i)];
        for (int c = 0; c < spec.visual_dim; ++c) {
            seq.visual[static_cast<size_t>(i)][static_cast<size_t>(c)] = codebook.at(d, c);
        }
    }
    seq.text = {task.op, vocab::kQuery};

    int answer = 0;
    if (task.op == vocab::kSum) {
        for (int d : task.digits) answer += d;
        answer %= 10;
    } else {
        answer = *std::max_element(task.digits.begin(), task.digits.end());
    }
    seq.answer = {vocab::kDigitBase + answer};
    return task;
}

std::vector<Task> make_tasks(const TaskSpec& spec, uint64_t seed, int count) {
    Rng rng(Rng::mix(seed, 0x7A5C5U));
    std::vector<Task> tasks;
    tasks.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        tasks.push_back(make_task(spec, rng));
    }
    return tasks;
}

std::vector<MultimodalSequence> to_sequences(const std::vector<Task>& tasks) {
    std::vector<MultimodalSequence> seqs;
    seqs.reserve(tasks.size());
    for (const Task& t : tasks) {
        seqs.push_back(t.seq);
    }
    return seqs;
}

void write_tasks_jsonl(const std::string& path, const std::vector<MultimodalSequence>& tasks) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const MultimodalSequence& seq : tasks) {
        nlohmann::json line;
        line["visual"] = seq.visual;
        line["text"] = seq.text;
        line["answer"] = seq.answer;
        out << line.dump() << "\n";
    }
    if (!out.good()) throw DataError("write failed: " + path);
}

std::vector<MultimodalSequence> read_tasks_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset: " + path);
    std::vector<MultimodalSequence> tasks;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
        }
        MultimodalSequence seq;
        try {
            seq.visual = j.at("visual").get<std::vector<std::vector<double>>>();
            seq.text = j.at("text").get<std::vector<int>>();
            seq.answer = j.value("answer", std::vector<int>{});
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad task record: " + e.what());
        }
        tasks.push_back(std::move(seq));
    }
    return tasks;
}

} // namespace rlens
