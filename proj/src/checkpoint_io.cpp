#include "rlens/checkpoint_io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "rlens/config_json.hpp"
#include "rlens/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace rlens {

namespace {

constexpr char kMagic[8] = {'R', 'L', 'E', 'N', 'S', '\0', '\0', '\x01'};

void append_u64(std::string& out, uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint: " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

struct Container {
    nlohmann::json header;
    std::map<std::string, Tensor> params;
};

std::string encode_container(const nlohmann::json& header_extra,
                             const std::map<std::string, Tensor>& params) {
    nlohmann::json directory = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, tensor] : params) {
        directory.push_back({{"name", name},
                             {"shape", tensor.shape},
                             {"offset", offset},
                             {"count", tensor.numel()}});
        offset += static_cast<uint64_t>(tensor.numel()) * sizeof(double);
    }
    nlohmann::json header = header_extra;
    header["params"] = std::move(directory);
    const std::string header_bytes = header.dump();

    std::string out;
    out.reserve(8 + 8 + header_bytes.size() + offset);
    out.append(kMagic, 8);
    append_u64(out, header_bytes.size());
    out += header_bytes;
    for (const auto& [name, tensor] : params) {
        const char* raw = reinterpret_cast<const char*>(tensor.data.data());
        out.append(raw, tensor.data.size() * sizeof(double));
    }
    return out;
}

Container decode_container(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw DataError("not a checkpoint container (bad magic): " + path);
    }
    uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 8, 8);
    if (16 + header_len > bytes.size()) {
        throw DataError("truncated checkpoint header: " + path);
    }
    Container c;
    try {
        c.header = nlohmann::json::parse(bytes.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint header in " + path + ": " + e.what());
    }
    const size_t payload_start = 16 + header_len;
    const size_t payload_size = bytes.size() - payload_start;
    if (!c.header.contains("params") || !c.header["params"].is_array()) {
        throw DataError("checkpoint header missing parameter directory: " + path);
    }
    for (const auto& entry : c.header["params"]) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<uint64_t>();
        const auto count = entry.at("count").get<uint64_t>();
        if (count != static_cast<uint64_t>(shape_numel(shape))) {
            throw DataError("checkpoint parameter " + name + " count/shape mismatch: " + path);
        }
        if (offset + count * sizeof(double) > payload_size) {
            throw DataError("checkpoint parameter " + name + " overruns payload: " + path);
        }
        std::vector<double> data(count);
        std::memcpy(data.data(), bytes.data() + payload_start + offset, count * sizeof(double));
        c.params.emplace(name, Tensor(shape, std::move(data)));
    }
    return c;
}

void write_file(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot open for writing: " + tmp);
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.good()) {
            throw DataError("write failed: " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw DataError("rename " + tmp + " -> " + path + " failed: " + ec.message());
    }
}

} // namespace

std::map<std::string, Shape> param_shapes(const ModelConfig& config) {
    std::map<std::string, Shape> shapes;
    const int d = config.d_model;
    shapes["tok_emb"] = {config.vocab, d};
    shapes["pos_emb"] = {config.max_seq, d};
    shapes["connector.w"] = {d, config.visual_dim};
    shapes["connector.b"] = {d};
    for (int l = 1; l <= config.layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        shapes[p + "ln1.gain"] = {d};
        shapes[p + "ln1.bias"] = {d};
        shapes[p + "attn.wq"] = {d, d};
        shapes[p + "attn.wk"] = {d, d};
        shapes[p + "attn.wv"] = {d, d};
        shapes[p + "attn.wo"] = {d, d};
        shapes[p + "ln2.gain"] = {d};
        shapes[p + "ln2.bias"] = {d};
        shapes[p + "mlp.w1"] = {config.mlp_hidden, d};
        shapes[p + "mlp.b1"] = {config.mlp_hidden};
        shapes[p + "mlp.w2"] = {d, config.mlp_hidden};
        shapes[p + "mlp.b2"] = {d};
    }
    shapes["final_norm.gain"] = {d};
    shapes["final_norm.bias"] = {d};
    shapes["head.w"] = {config.vocab, d};
    shapes["head.b"] = {config.vocab};
    return shapes;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["kind"] = "checkpoint";
    header["config"] = to_json(ckpt.config);
    header["meta"] = to_json(ckpt.meta);
    write_file(path, encode_container(header, ckpt.params));
}

Checkpoint load_checkpoint(const std::string& path) {
    Container c = decode_container(path);
    if (c.header.value("kind", "") != "checkpoint") {
        throw DataError("container is not a checkpoint: " + path);
    }
    Checkpoint ckpt;
    ckpt.config = model_config_from_json(c.header.at("config"));
    ckpt.config.validate();
    ckpt.meta = checkpoint_meta_from_json(c.header.value("meta", nlohmann::json::object()));
    ckpt.params = std::move(c.params);

    const auto expected = param_shapes(ckpt.config);
    for (const auto& [name, shape] : expected) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end()) {
            throw DataError("checkpoint missing parameter " + name + ": " + path);
        }
        if (it->second.shape != shape) {
            throw DataError("checkpoint parameter " + name + " has shape " +
                            shape_str(it->second.shape) + ", expected " + shape_str(shape) + ": " +
                            path);
        }
    }
    if (ckpt.params.size() != expected.size()) {
        throw DataError("checkpoint has unexpected extra parameters: " + path);
    }
    return ckpt;
}

void save_replay_state(const std::string& path, const ReplayState& state,
                       const ReplayConfig& config) {
    nlohmann::json header;
    header["kind"] = "replay_state";
    header["replay_config"] = to_json(config);
    nlohmann::json history = nlohmann::json::array();
    for (const StepRecord& r : state.history) {
        history.push_back({{"step", r.step},
                           {"objective", r.objective},
                           {"grad_norm", r.grad_norm},
                           {"alpha", r.alpha},
                           {"accepted", r.accepted}});
    }
    header["history"] = std::move(history);
    header["mask"] = {{"layers", state.mask.layers},
                      {"positions", state.mask.positions},
                      {"bits", state.mask.m}};
    std::map<std::string, Tensor> params;
    params.emplace("replay.x", state.x);
    write_file(path, encode_container(header, params));
}

ReplayState load_replay_state(const std::string& path, ReplayConfig* config_out) {
    Container c = decode_container(path);
    if (c.header.value("kind", "") != "replay_state") {
        throw DataError("container is not a replay state: " + path);
    }
    ReplayState state;
    auto it = c.params.find("replay.x");
    if (it == c.params.end()) {
        throw DataError("replay state missing tensor replay.x: " + path);
    }
    state.x = std::move(it->second);
    const auto& mask = c.header.at("mask");
    state.mask.layers = mask.at("layers").get<int>();
    state.mask.positions = mask.at("positions").get<int>();
    state.mask.m = mask.at("bits").get<std::vector<uint8_t>>();
    if (state.mask.m.size() !=
        static_cast<size_t>(state.mask.layers) * static_cast<size_t>(state.mask.positions)) {
        throw DataError("replay state mask size mismatch: " + path);
    }
    for (const auto& entry : c.header.value("history", nlohmann::json::array())) {
        StepRecord r;
        r.step = entry.at("step").get<int>();
        r.objective = entry.at("objective").get<double>();
        r.grad_norm = entry.at("grad_norm").get<double>();
        r.alpha = entry.at("alpha").get<double>();
        r.accepted = entry.at("accepted").get<bool>();
        state.history.push_back(r);
    }
    if (config_out) {
        *config_out = replay_config_from_json(c.header.value("replay_config", nlohmann::json::object()));
    }
    return state;
}

} // namespace rlens
