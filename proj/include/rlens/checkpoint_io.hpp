#pragma once

#include <map>
#include <string>

#include "rlens/model.hpp"
#include "rlens/replay.hpp"

namespace rlens {

/// Expected parameter name -> shape map for a config; used to validate loaded
/// checkpoints.
std::map<std::string, Shape> param_shapes(const ModelConfig& config);

/// Binary checkpoint container: 8-byte magic "RLENS\0\0\x01", a
/// length-prefixed UTF-8 JSON header (config, metadata, parameter directory
/// with name/shape/byte-offset), then the little-endian float64 arrays.
/// Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// ReplayState in the same container (x as one named tensor, history and
/// config as JSON metadata), so replay runs are resumable and auditable.
void save_replay_state(const std::string& path, const ReplayState& state,
                       const ReplayConfig& config);
ReplayState load_replay_state(const std::string& path, ReplayConfig* config_out = nullptr);

} // namespace rlens
