#include "rlens/config_json.hpp"

#include "rlens/errors.hpp"

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

} // namespace

nlohmann::json to_json(const ModelConfig& c) {
    return {{"layers", c.layers},   {"d_model", c.d_model},       {"heads", c.heads},
            {"vocab", c.vocab},     {"max_seq", c.max_seq},       {"visual_dim", c.visual_dim},
            {"mlp_hidden", c.mlp_hidden}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.layers = get_or(j, "layers", c.layers);
    c.d_model = get_or(j, "d_model", c.d_model);
    c.heads = get_or(j, "heads", c.heads);
    c.vocab = get_or(j, "vocab", c.vocab);
    c.max_seq = get_or(j, "max_seq", c.max_seq);
    c.visual_dim = get_or(j, "visual_dim", c.visual_dim);
    c.mlp_hidden = get_or(j, "mlp_hidden", c.mlp_hidden);
    return c;
}

nlohmann::json to_json(const TaskSpec& c) {
    return {{"n_visual", c.n_visual},     {"n_digits", c.n_digits},
            {"visual_dim", c.visual_dim}, {"encoder_seed", c.encoder_seed},
            {"use_sum", c.use_sum},       {"use_max", c.use_max}};
}

TaskSpec task_spec_from_json(const nlohmann::json& j) {
    TaskSpec c;
    c.n_visual = get_or(j, "n_visual", c.n_visual);
    c.n_digits = get_or(j, "n_digits", c.n_digits);
    c.visual_dim = get_or(j, "visual_dim", c.visual_dim);
    c.encoder_seed = get_or(j, "encoder_seed", c.encoder_seed);
    c.use_sum = get_or(j, "use_sum", c.use_sum);
    c.use_max = get_or(j, "use_max", c.use_max);
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"batch", c.batch},
            {"lr", c.lr},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps},
            {"grad_clip", c.grad_clip},
            {"lr_warmup", c.lr_warmup},
            {"aux_weight", c.aux_weight},
            {"pad_uniform_weight", c.pad_uniform_weight},
            {"prompt_lm_weight", c.prompt_lm_weight},
            {"eval_tasks", c.eval_tasks},
            {"target_accuracy", c.target_accuracy}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.steps = get_or(j, "steps", c.steps);
    c.batch = get_or(j, "batch", c.batch);
    c.lr = get_or(j, "lr", c.lr);
    c.adam_beta1 = get_or(j, "adam_beta1", c.adam_beta1);
    c.adam_beta2 = get_or(j, "adam_beta2", c.adam_beta2);
    c.adam_eps = get_or(j, "adam_eps", c.adam_eps);
    c.grad_clip = get_or(j, "grad_clip", c.grad_clip);
    c.lr_warmup = get_or(j, "lr_warmup", c.lr_warmup);
    c.aux_weight = get_or(j, "aux_weight", c.aux_weight);
    c.pad_uniform_weight = get_or(j, "pad_uniform_weight", c.pad_uniform_weight);
    c.prompt_lm_weight = get_or(j, "prompt_lm_weight", c.prompt_lm_weight);
    c.eval_tasks = get_or(j, "eval_tasks", c.eval_tasks);
    c.target_accuracy = get_or(j, "target_accuracy", c.target_accuracy);
    return c;
}

nlohmann::json to_json(const PairConfig& c) {
    return {{"mode", c.mode},
            {"scale", c.scale},
            {"seed", c.seed},
            {"target_tau", c.target_tau},
            {"probe_tasks", c.probe_tasks},
            {"pos_gain", c.pos_gain},
            {"connector_gain", c.connector_gain},
            {"steps", c.steps},
            {"lr", c.lr}};
}

PairConfig pair_config_from_json(const nlohmann::json& j) {
    PairConfig c;
    c.mode = get_or(j, "mode", c.mode);
    c.scale = get_or(j, "scale", c.scale);
    c.seed = get_or(j, "seed", c.seed);
    c.target_tau = get_or(j, "target_tau", c.target_tau);
    c.probe_tasks = get_or(j, "probe_tasks", c.probe_tasks);
    c.pos_gain = get_or(j, "pos_gain", c.pos_gain);
    c.connector_gain = get_or(j, "connector_gain", c.connector_gain);
    c.steps = get_or(j, "steps", c.steps);
    c.lr = get_or(j, "lr", c.lr);
    return c;
}

nlohmann::json to_json(const ReplayConfig& c) {
    return {{"tau", c.tau},
            {"alpha", c.alpha},
            {"steps", c.steps},
            {"layers", c.layers},
            {"polarity", to_string(c.polarity)},
            {"threshold_mode", to_string(c.threshold_mode)},
            {"static_threshold", c.static_threshold},
            {"backtracking", c.backtracking},
            {"backtrack_limit", c.backtrack_limit},
            {"early_stop_rel", c.early_stop_rel},
            {"grad_tol", c.grad_tol},
            {"aggregate_positions", c.aggregate_positions}};
}

ReplayConfig replay_config_from_json(const nlohmann::json& j) {
    ReplayConfig c;
    c.tau = get_or(j, "tau", c.tau);
    c.alpha = get_or(j, "alpha", c.alpha);
    c.steps = get_or(j, "steps", c.steps);
    c.layers = get_or(j, "layers", c.layers);
    c.polarity = polarity_from_string(get_or<std::string>(j, "polarity", to_string(c.polarity)));
    c.threshold_mode =
        threshold_mode_from_string(get_or<std::string>(j, "threshold_mode", to_string(c.threshold_mode)));
    c.static_threshold = get_or(j, "static_threshold", c.static_threshold);
    c.backtracking = get_or(j, "backtracking", c.backtracking);
    c.backtrack_limit = get_or(j, "backtrack_limit", c.backtrack_limit);
    c.early_stop_rel = get_or(j, "early_stop_rel", c.early_stop_rel);
    c.grad_tol = get_or(j, "grad_tol", c.grad_tol);
    c.aggregate_positions = get_or(j, "aggregate_positions", c.aggregate_positions);
    return c;
}

nlohmann::json to_json(const HeatmapSpec& c) {
    return {{"bins", c.bins},
            {"layer_min", c.layer_min},
            {"layer_max", c.layer_max},
            {"normalization", c.normalization}};
}

HeatmapSpec heatmap_spec_from_json(const nlohmann::json& j) {
    HeatmapSpec c;
    c.bins = get_or(j, "bins", c.bins);
    c.layer_min = get_or(j, "layer_min", c.layer_min);
    c.layer_max = get_or(j, "layer_max", c.layer_max);
    c.normalization = get_or(j, "normalization", c.normalization);
    return c;
}

nlohmann::json to_json(const CheckpointMeta& m) {
    return {{"seed", m.seed}, {"train_steps", m.train_steps}, {"lineage", m.lineage}};
}

CheckpointMeta checkpoint_meta_from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.seed = get_or(j, "seed", m.seed);
    m.train_steps = get_or(j, "train_steps", m.train_steps);
    m.lineage = get_or(j, "lineage", m.lineage);
    return m;
}

} // namespace rlens
