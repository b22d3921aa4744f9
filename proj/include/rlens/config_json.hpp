#pragma once

#include "json.hpp"

#include "rlens/lens.hpp"
#include "rlens/model.hpp"
#include "rlens/replay.hpp"
#include "rlens/tasks.hpp"
#include "rlens/train.hpp"

namespace rlens {

// JSON bindings for the config structs. Parsing is strict about types but
// fills missing keys with defaults, so configs stay forward-compatible.

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TaskSpec& c);
TaskSpec task_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const PairConfig& c);
PairConfig pair_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ReplayConfig& c);
ReplayConfig replay_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const HeatmapSpec& c);
HeatmapSpec heatmap_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const CheckpointMeta& m);
CheckpointMeta checkpoint_meta_from_json(const nlohmann::json& j);

} // namespace rlens
