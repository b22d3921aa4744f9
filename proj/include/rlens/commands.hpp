#pragma once

#include <string>

#include "json.hpp"

#include "rlens/lens.hpp"
#include "rlens/replay.hpp"
#include "rlens/studies.hpp"
#include "rlens/train.hpp"

namespace rlens {

struct StudyConfig {
    // passk
    int k = 8;
    double temperature = 1.0;
    bool with_replay = false;
    int max_new = 4;
    // perturb
    std::vector<double> scales; // empty = 20 scales, 0.0 to 0.475
    int noise_seeds = 5;
    int task_index = 0;
    int wrong_probes = 1;
    // intervene
    std::string strategy = "low";
    double intervene_tau = 0.4;
    bool all_layer_splice = false;
    std::string donor = "base";
    // ablate
    std::vector<double> tau_grid = {0.2, 0.4, 0.6, 0.8};
    std::vector<double> alpha_grid = {0.0, 10.0, 20.0, 40.0};
    // lens report
    HeatmapSpec heatmap;
    int top_shift_k = 2;
};

/// One self-contained experiment configuration. A run directory always gets
/// the exact effective RunConfig written next to its outputs.
struct RunConfig {
    uint64_t seed = 7;
    ModelConfig model;
    TaskSpec task;
    TrainConfig train;
    PairConfig pair;
    ReplayConfig replay;
    StudyConfig study;
    std::string dataset;  // JSONL task file for the report commands
    std::string pair_dir; // run directory holding base.ckpt / tuned.ckpt
    int holdout_tasks = 200;
    int val_tasks = 64;
};

nlohmann::json to_json(const StudyConfig& c);
StudyConfig study_config_from_json(const nlohmann::json& j);

nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config_file(const std::string& path);

/// Loads base.ckpt / tuned.ckpt from cfg.pair_dir.
ModelPair load_pair(const RunConfig& cfg);

/// Loads cfg.dataset; throws DataError when missing or empty.
std::vector<MultimodalSequence> load_dataset(const RunConfig& cfg);

// Subcommand bodies. Each writes its outputs plus config.json and
// manifest.json into out_dir; reruns with the same config are byte-identical.
void cmd_train_pair(const RunConfig& cfg, const std::string& out_dir);
void cmd_lens_report(const RunConfig& cfg, const std::string& out_dir);
void cmd_replay_eval(const RunConfig& cfg, const std::string& out_dir);
void cmd_intervene(const RunConfig& cfg, const std::string& out_dir);
void cmd_perturb(const RunConfig& cfg, const std::string& out_dir);
void cmd_passk(const RunConfig& cfg, const std::string& out_dir);
void cmd_ablate(const RunConfig& cfg, const std::string& out_dir);

} // namespace rlens
