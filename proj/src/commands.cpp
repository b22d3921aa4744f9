#include "rlens/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include "rlens/checkpoint_io.hpp"
#include "rlens/config_json.hpp"
#include "rlens/errors.hpp"
#include "rlens/reports.hpp"

namespace rlens {

namespace {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw DataError("cannot create output directory " + dir + ": " + ec.message());
    }
}

void write_config(const RunConfig& cfg, const std::string& out_dir) {
    write_json_file(out_dir + "/config.json", run_config_to_json(cfg));
}

std::vector<double> default_perturb_scales() {
    std::vector<double> scales;
    for (int i = 0; i < 20; ++i) {
        scales.push_back(0.025 * i);
    }
    return scales;
}

} // namespace

nlohmann::json to_json(const StudyConfig& c) {
    return {{"k", c.k},
            {"temperature", c.temperature},
            {"with_replay", c.with_replay},
            {"max_new", c.max_new},
            {"scales", c.scales},
            {"noise_seeds", c.noise_seeds},
            {"task_index", c.task_index},
            {"wrong_probes", c.wrong_probes},
            {"strategy", c.strategy},
            {"intervene_tau", c.intervene_tau},
            {"all_layer_splice", c.all_layer_splice},
            {"donor", c.donor},
            {"tau_grid", c.tau_grid},
            {"alpha_grid", c.alpha_grid},
            {"heatmap", to_json(c.heatmap)},
            {"top_shift_k", c.top_shift_k}};
}

StudyConfig study_config_from_json(const nlohmann::json& j) {
    StudyConfig c;
    c.k = get_or(j, "k", c.k);
    c.temperature = get_or(j, "temperature", c.temperature);
    c.with_replay = get_or(j, "with_replay", c.with_replay);
    c.max_new = get_or(j, "max_new", c.max_new);
    c.scales = get_or(j, "scales", c.scales);
    c.noise_seeds = get_or(j, "noise_seeds", c.noise_seeds);
    c.task_index = get_or(j, "task_index", c.task_index);
    c.wrong_probes = get_or(j, "wrong_probes", c.wrong_probes);
    c.strategy = get_or(j, "strategy", c.strategy);
    c.intervene_tau = get_or(j, "intervene_tau", c.intervene_tau);
    c.all_layer_splice = get_or(j, "all_layer_splice", c.all_layer_splice);
    c.donor = get_or(j, "donor", c.donor);
    c.tau_grid = get_or(j, "tau_grid", c.tau_grid);
    c.alpha_grid = get_or(j, "alpha_grid", c.alpha_grid);
    if (j.contains("heatmap")) {
        c.heatmap = heatmap_spec_from_json(j.at("heatmap"));
    }
    c.top_shift_k = get_or(j, "top_shift_k", c.top_shift_k);
    return c;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
    return {{"seed", c.seed},
            {"model", to_json(c.model)},
            {"task", to_json(c.task)},
            {"train", to_json(c.train)},
            {"pair", to_json(c.pair)},
            {"replay", to_json(c.replay)},
            {"study", to_json(c.study)},
            {"dataset", c.dataset},
            {"pair_dir", c.pair_dir},
            {"holdout_tasks", c.holdout_tasks},
            {"val_tasks", c.val_tasks}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    c.seed = get_or(j, "seed", c.seed);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("task")) c.task = task_spec_from_json(j.at("task"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("pair")) c.pair = pair_config_from_json(j.at("pair"));
    if (j.contains("replay")) c.replay = replay_config_from_json(j.at("replay"));
    if (j.contains("study")) c.study = study_config_from_json(j.at("study"));
    c.dataset = get_or(j, "dataset", c.dataset);
    c.pair_dir = get_or(j, "pair_dir", c.pair_dir);
    c.holdout_tasks = get_or(j, "holdout_tasks", c.holdout_tasks);
    c.val_tasks = get_or(j, "val_tasks", c.val_tasks);
    return c;
}

RunConfig load_run_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad config JSON in " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

ModelPair load_pair(const RunConfig& cfg) {
    if (cfg.pair_dir.empty()) {
        throw ConfigError("pair_dir is required (a train-pair run directory)");
    }
    ModelPair pair;
    pair.base = load_checkpoint(cfg.pair_dir + "/base.ckpt");
    pair.tuned = load_checkpoint(cfg.pair_dir + "/tuned.ckpt");
    pair.validate();
    return pair;
}

std::vector<MultimodalSequence> load_dataset(const RunConfig& cfg) {
    if (cfg.dataset.empty()) {
        throw ConfigError("dataset path is required");
    }
    std::vector<MultimodalSequence> tasks = read_tasks_jsonl(cfg.dataset);
    if (tasks.empty()) {
        throw DataError("dataset is empty: " + cfg.dataset);
    }
    return tasks;
}

void cmd_train_pair(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const TrainResult result = train_toy(cfg.model, cfg.task, cfg.train, cfg.seed);
    const Checkpoint tuned = make_tuned(result.ckpt, cfg.task, cfg.pair);

    save_checkpoint(out_dir + "/base.ckpt", result.ckpt);
    save_checkpoint(out_dir + "/tuned.ckpt", tuned);

    const std::vector<Task> holdout =
        make_tasks(cfg.task, Rng::mix(cfg.seed, 0x401D0ULL), cfg.holdout_tasks);
    const std::vector<Task> val = make_tasks(cfg.task, Rng::mix(cfg.seed, 0x7A1ULL), cfg.val_tasks);
    write_tasks_jsonl(out_dir + "/holdout.jsonl", to_sequences(holdout));
    write_tasks_jsonl(out_dir + "/val.jsonl", to_sequences(val));

    std::vector<std::vector<std::string>> loss_rows;
    for (size_t i = 0; i < result.loss_curve.size(); ++i) {
        loss_rows.push_back({std::to_string(i), csv_num(result.loss_curve[i])});
    }
    write_csv_file(out_dir + "/loss.csv", {"step", "loss"}, loss_rows);
    write_config(cfg, out_dir);

    nlohmann::json extra;
    extra["holdout_accuracy"] = result.holdout_accuracy;
    extra["tuned_holdout_accuracy"] = greedy_accuracy(tuned, to_sequences(holdout));
    write_manifest(out_dir, "train-pair", run_config_to_json(cfg), {},
                   {"base.ckpt", "tuned.ckpt", "holdout.jsonl", "val.jsonl", "loss.csv",
                    "config.json"},
                   extra);
}

void cmd_lens_report(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const ModelPair pair = load_pair(cfg);
    const std::vector<MultimodalSequence> tasks = load_dataset(cfg);

    const Heatmap map = entropy_percentile_heatmap(pair, tasks, cfg.study.heatmap);
    write_heatmap_csv(out_dir + "/heatmap_raw.csv", map, false);
    write_heatmap_csv(out_dir + "/heatmap_normalized.csv", map, true);
    atomic_write(out_dir + "/heatmap.svg",
                 svg_heatmap(map, "mean KL(base||tuned) by base-entropy percentile"));

    std::vector<nlohmann::json> lines;
    double mean_rate = 0.0;
    for (size_t t = 0; t < tasks.size(); ++t) {
        const PairProfile pp = profile_pair(pair, tasks[t], cfg.study.top_shift_k);
        const TopShiftResult shift = top_prediction_shift(pp.base, pp.tuned, cfg.study.top_shift_k);
        mean_rate += shift.shift_rate;
        lines.push_back({{"task", t}, {"shift_rate", shift.shift_rate}});
    }
    mean_rate /= static_cast<double>(tasks.size());
    write_jsonl_file(out_dir + "/top_shift.jsonl", lines);
    write_csv_file(out_dir + "/summary.csv", {"metric", "value"},
                   {{"top_shift_k", std::to_string(cfg.study.top_shift_k)},
                    {"mean_top_shift_rate", csv_num(mean_rate)},
                    {"tasks", std::to_string(tasks.size())}});
    write_config(cfg, out_dir);
    write_manifest(out_dir, "lens-report", run_config_to_json(cfg), {cfg.dataset},
                   {"heatmap_raw.csv", "heatmap_normalized.csv", "heatmap.svg", "top_shift.jsonl",
                    "summary.csv", "config.json"});
}

void cmd_replay_eval(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const ModelPair pair = load_pair(cfg);
    const std::vector<MultimodalSequence> tasks = load_dataset(cfg);

    DecodeMode mode;
    mode.greedy = true;
    mode.max_new = cfg.study.max_new;
    std::vector<nlohmann::json> lines;
    int plain_correct = 0, replay_correct = 0;
    for (size_t t = 0; t < tasks.size(); ++t) {
        const MultimodalSequence& seq = tasks[t];
        const std::vector<int> plain = decode_greedy(pair.tuned, seq, mode.max_new);
        const ReplayState state = replay_optimize(pair, seq, cfg.replay);
        const std::vector<int> replayed = apply_and_decode(pair.tuned, seq, state.x, mode);
        const bool pc = plain == seq.answer;
        const bool rc = replayed == seq.answer;
        plain_correct += pc;
        replay_correct += rc;
        lines.push_back({{"task", t},
                         {"plain", plain},
                         {"replay", replayed},
                         {"answer", seq.answer},
                         {"plain_correct", pc},
                         {"replay_correct", rc},
                         {"initial_objective", state.initial_objective()},
                         {"final_objective", state.final_objective()},
                         {"steps", state.history.size() - 1}});
    }
    write_jsonl_file(out_dir + "/replay_eval.jsonl", lines);
    const double n = static_cast<double>(tasks.size());
    write_csv_file(out_dir + "/summary.csv", {"metric", "value"},
                   {{"accuracy_plain", csv_num(plain_correct / n)},
                    {"accuracy_replay", csv_num(replay_correct / n)},
                    {"delta", csv_num((replay_correct - plain_correct) / n)},
                    {"tasks", std::to_string(tasks.size())}});
    write_config(cfg, out_dir);
    write_manifest(out_dir, "replay-eval", run_config_to_json(cfg), {cfg.dataset},
                   {"replay_eval.jsonl", "summary.csv", "config.json"});
}

void cmd_intervene(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const ModelPair pair = load_pair(cfg);
    const std::vector<MultimodalSequence> tasks = load_dataset(cfg);

    InterventionSpec spec;
    spec.strategy = polarity_from_string(cfg.study.strategy);
    spec.tau = cfg.study.intervene_tau;
    spec.all_layers = cfg.study.all_layer_splice;
    spec.donor = cfg.study.donor;
    DecodeMode mode;
    mode.greedy = true;
    mode.max_new = cfg.study.max_new;

    std::vector<nlohmann::json> lines;
    int plain_correct = 0, spliced_correct = 0;
    for (size_t t = 0; t < tasks.size(); ++t) {
        const MultimodalSequence& seq = tasks[t];
        const std::vector<int> plain = decode_greedy(pair.tuned, seq, mode.max_new);
        const std::vector<int> spliced = intervene_decode(pair, seq, spec, mode);
        const bool pc = plain == seq.answer;
        const bool sc = spliced == seq.answer;
        plain_correct += pc;
        spliced_correct += sc;
        lines.push_back({{"task", t},
                         {"plain", plain},
                         {"spliced", spliced},
                         {"answer", seq.answer},
                         {"plain_correct", pc},
                         {"spliced_correct", sc}});
    }
    write_jsonl_file(out_dir + "/intervene.jsonl", lines);
    const double n = static_cast<double>(tasks.size());
    write_csv_file(out_dir + "/summary.csv", {"metric", "value"},
                   {{"strategy", cfg.study.strategy},
                    {"tau", csv_num(spec.tau)},
                    {"accuracy_plain", csv_num(plain_correct / n)},
                    {"accuracy_spliced", csv_num(spliced_correct / n)},
                    {"tasks", std::to_string(tasks.size())}});
    write_config(cfg, out_dir);
    write_manifest(out_dir, "intervene", run_config_to_json(cfg), {cfg.dataset},
                   {"intervene.jsonl", "summary.csv", "config.json"});
}

void cmd_perturb(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const ModelPair pair = load_pair(cfg);
    const std::vector<MultimodalSequence> tasks = load_dataset(cfg);
    if (cfg.study.task_index < 0 || cfg.study.task_index >= static_cast<int>(tasks.size())) {
        throw DataError("perturb: task_index " + std::to_string(cfg.study.task_index) +
                        " outside dataset of " + std::to_string(tasks.size()));
    }
    const MultimodalSequence& seq = tasks[static_cast<size_t>(cfg.study.task_index)];
    if (seq.answer.empty()) {
        throw DataError("perturb: selected task carries no gold answer");
    }

    std::vector<ProbeResponse> probes;
    ProbeResponse correct;
    correct.tokens = seq.answer;
    correct.tokens.push_back(vocab::kEos);
    correct.correct = true;
    probes.push_back(correct);
    for (int w = 1; w <= cfg.study.wrong_probes; ++w) {
        ProbeResponse wrong;
        wrong.tokens = {(seq.answer[0] + w * 3 + 1) % 10, vocab::kEos};
        wrong.correct = false;
        probes.push_back(wrong);
    }

    std::vector<double> scales = cfg.study.scales.empty() ? default_perturb_scales() : cfg.study.scales;
    std::vector<uint64_t> seeds;
    for (int s = 0; s < cfg.study.noise_seeds; ++s) {
        seeds.push_back(Rng::mix(cfg.seed, 0xBEEF00ULL + static_cast<uint64_t>(s)));
    }
    PerturbationStudyConfig study_cfg;
    study_cfg.tau = cfg.replay.tau;
    const std::vector<PerturbationRecord> records =
        perturbation_sweep(pair, seq, probes, scales, seeds, study_cfg);

    std::vector<nlohmann::json> lines;
    std::vector<double> low_shift, ppl_correct, ppl_incorrect;
    for (const PerturbationRecord& rec : records) {
        double pc = 0.0, pi = 0.0;
        int nc = 0, ni = 0;
        for (size_t p = 0; p < rec.probe_perplexity.size(); ++p) {
            if (rec.probe_correct[p]) {
                pc += rec.probe_perplexity[p];
                ++nc;
            } else {
                pi += rec.probe_perplexity[p];
                ++ni;
            }
        }
        if (nc) pc /= nc;
        if (ni) pi /= ni;
        low_shift.push_back(rec.kl_shift_low);
        ppl_correct.push_back(pc);
        ppl_incorrect.push_back(pi);
        lines.push_back({{"scale", rec.scale},
                         {"seed", rec.seed},
                         {"kl_shift_low", rec.kl_shift_low},
                         {"kl_shift_high", rec.kl_shift_high},
                         {"probe_perplexity", rec.probe_perplexity},
                         {"probe_correct", rec.probe_correct}});
    }
    write_jsonl_file(out_dir + "/perturb.jsonl", lines);
    write_csv_file(out_dir + "/summary.csv", {"metric", "value"},
                   {{"spearman_low_vs_correct_ppl", csv_num(spearman(low_shift, ppl_correct))},
                    {"spearman_low_vs_incorrect_ppl", csv_num(spearman(low_shift, ppl_incorrect))},
                    {"records", std::to_string(records.size())}});
    write_config(cfg, out_dir);
    write_manifest(out_dir, "perturb", run_config_to_json(cfg), {cfg.dataset},
                   {"perturb.jsonl", "summary.csv", "config.json"});
}

void cmd_passk(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const ModelPair pair = load_pair(cfg);
    const std::vector<MultimodalSequence> tasks = load_dataset(cfg);

    const uint64_t sweep_seed = Rng::mix(cfg.seed, 0x9A55ULL);
    const PassKReport plain = pass_at_k(pair.tuned, tasks, cfg.study.k, cfg.study.temperature,
                                        sweep_seed, cfg.study.max_new);
    std::optional<PassKReport> replayed;
    if (cfg.study.with_replay) {
        std::vector<Tensor> xs;
        xs.reserve(tasks.size());
        for (const MultimodalSequence& seq : tasks) {
            xs.push_back(replay_optimize(pair, seq, cfg.replay).x);
        }
        replayed = pass_at_k(pair.tuned, tasks, cfg.study.k, cfg.study.temperature, sweep_seed,
                             cfg.study.max_new, &xs);
    }

    std::vector<nlohmann::json> lines;
    for (size_t t = 0; t < tasks.size(); ++t) {
        nlohmann::json line = {{"task", t}, {"plain", plain.sample_correct[t]}};
        if (replayed) {
            line["replay"] = replayed->sample_correct[t];
        }
        lines.push_back(std::move(line));
    }
    write_jsonl_file(out_dir + "/passk.jsonl", lines);

    std::vector<std::string> header = {"k", "plain"};
    if (replayed) header.push_back("replay");
    std::vector<std::vector<std::string>> rows;
    for (int j = 0; j < cfg.study.k; ++j) {
        std::vector<std::string> row = {std::to_string(j + 1),
                                        csv_num(plain.pass_rate[static_cast<size_t>(j)])};
        if (replayed) row.push_back(csv_num(replayed->pass_rate[static_cast<size_t>(j)]));
        rows.push_back(std::move(row));
    }
    rows.push_back({"greedy", csv_num(plain.greedy_pass1)});
    if (replayed) rows.back().push_back(csv_num(replayed->greedy_pass1));
    write_csv_file(out_dir + "/passk.csv", header, rows);

    std::vector<std::string> names = {"plain"};
    std::vector<std::vector<double>> series = {plain.pass_rate};
    if (replayed) {
        names.push_back("replay");
        series.push_back(replayed->pass_rate);
    }
    atomic_write(out_dir + "/passk.svg", svg_line_plot(names, series, "Pass@K", "K", "pass rate"));
    write_config(cfg, out_dir);
    write_manifest(out_dir, "passk", run_config_to_json(cfg), {cfg.dataset},
                   {"passk.jsonl", "passk.csv", "passk.svg", "config.json"});
}

void cmd_ablate(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const ModelPair pair = load_pair(cfg);
    const std::vector<MultimodalSequence> tasks = load_dataset(cfg);

    const AblationGrid grid = ablation_grid(pair, tasks, cfg.study.tau_grid, cfg.study.alpha_grid,
                                            cfg.replay, cfg.study.max_new);

    std::vector<nlohmann::json> lines;
    std::vector<std::vector<std::string>> rows;
    for (size_t ti = 0; ti < grid.taus.size(); ++ti) {
        std::vector<std::string> row = {csv_num(grid.taus[ti])};
        for (size_t ai = 0; ai < grid.alphas.size(); ++ai) {
            const AblationCell& cell = grid.cells[ti][ai];
            lines.push_back({{"tau", cell.tau},
                             {"alpha", cell.alpha},
                             {"accuracy", cell.accuracy},
                             {"delta", cell.delta},
                             {"failed", cell.failed},
                             {"error", cell.error}});
            row.push_back(cell.failed ? "error" : csv_num(cell.accuracy));
        }
        rows.push_back(std::move(row));
    }
    std::vector<std::string> header = {"tau\\alpha"};
    for (double a : grid.alphas) {
        header.push_back(csv_num(a));
    }
    write_jsonl_file(out_dir + "/ablate.jsonl", lines);
    write_csv_file(out_dir + "/ablate.csv", header, rows);
    write_csv_file(out_dir + "/summary.csv", {"metric", "value"},
                   {{"baseline_accuracy", csv_num(grid.baseline_accuracy)},
                    {"tasks", std::to_string(tasks.size())}});
    write_config(cfg, out_dir);
    write_manifest(out_dir, "ablate", run_config_to_json(cfg), {cfg.dataset},
                   {"ablate.jsonl", "ablate.csv", "summary.csv", "config.json"});
}

} // namespace rlens
