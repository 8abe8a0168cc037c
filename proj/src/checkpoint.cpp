#include "prunekit/checkpoint.hpp"

#include "prunekit/errors.hpp"
#include "prunekit/json_io.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <utility>
#include <vector>

namespace prunekit {

namespace {

using nlohmann::json;

struct TensorRef {
    std::string name;
    std::vector<std::size_t> shape;
    const float* data;
    std::size_t count;
};

// Fixed manifest order: embedding, per-layer tensors, final_gamma, output_head.
// Absent post-norm gammas are simply not listed.
void visit_tensors(const WeightStore& w, const std::function<void(const TensorRef&)>& fn) {
    auto mat = [&](const std::string& name, const Tensor2D& t) {
        fn({name, {t.rows(), t.cols()}, t.data().data(), t.size()});
    };
    auto vec = [&](const std::string& name, const std::vector<float>& v) {
        fn({name, {v.size()}, v.data(), v.size()});
    };
    mat("embedding", w.embedding);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const LayerWeights& lw = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        vec(p + "pre_attn_gamma", lw.pre_attn_gamma);
        if (w.config.postnorm_attn[l]) vec(p + "post_attn_gamma", lw.post_attn_gamma);
        vec(p + "pre_ffn_gamma", lw.pre_ffn_gamma);
        if (w.config.postnorm_ffn[l]) vec(p + "post_ffn_gamma", lw.post_ffn_gamma);
        mat(p + "w_q", lw.w_q);
        mat(p + "w_k", lw.w_k);
        mat(p + "w_v", lw.w_v);
        mat(p + "w_o", lw.w_o);
        mat(p + "w_gate", lw.w_gate);
        mat(p + "w_up", lw.w_up);
        mat(p + "w_down", lw.w_down);
    }
    vec("final_gamma", w.final_gamma);
    mat("output_head", w.output_head);
}

void write_le_f32(std::string& out, const float* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(data[i]);
        out.push_back(static_cast<char>(bits & 0xff));
        out.push_back(static_cast<char>((bits >> 8) & 0xff));
        out.push_back(static_cast<char>((bits >> 16) & 0xff));
        out.push_back(static_cast<char>((bits >> 24) & 0xff));
    }
}

float read_le_f32(const char* p) {
    const std::uint32_t bits = static_cast<std::uint8_t>(p[0]) |
                               (static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[1])) << 8) |
                               (static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[2])) << 16) |
                               (static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[3])) << 24);
    return std::bit_cast<float>(bits);
}

} // namespace

void save_checkpoint(const WeightStore& w, const std::string& path) {
    w.validate();
    json manifest = json::array();
    std::string payload;
    std::size_t offset = 0;
    visit_tensors(w, [&](const TensorRef& t) {
        manifest.push_back(json{{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
        write_le_f32(payload, t.data, t.count);
        offset += t.count * 4;
    });
    json header{{"config", config_json(w.config)}, {"tensors", manifest}};

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("save_checkpoint: cannot open '" + path + "' for writing");
    }
    const std::string head = header.dump();
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    f.write("\n\0", 2);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) {
        throw IoError("save_checkpoint: write to '" + path + "' failed");
    }
}

WeightStore load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("load_checkpoint: cannot open '" + path + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    // The header is JSON with no raw control characters, so the first
    // "\n\0" pair is the separator.
    std::size_t sep = std::string::npos;
    for (std::size_t i = 0; i + 1 < bytes.size(); ++i) {
        if (bytes[i] == '\n' && bytes[i + 1] == '\0') {
            sep = i;
            break;
        }
    }
    if (sep == std::string::npos) {
        throw IoError("load_checkpoint: '" + path + "' has no header separator");
    }

    json header;
    try {
        header = json::parse(bytes.substr(0, sep));
    } catch (const json::exception& e) {
        throw IoError("load_checkpoint: malformed header in '" + path + "': " + e.what());
    }

    ModelConfig config;
    try {
        if (!header.contains("config")) {
            throw ValidationError("config json: header has no config object");
        }
        config = config_from_json_value(header["config"]);
    } catch (const ValidationError& e) {
        throw IoError("load_checkpoint: malformed config in '" + path + "': " + e.what());
    }

    const char* payload = bytes.data() + sep + 2;
    const std::size_t payload_size = bytes.size() - sep - 2;

    if (!header.contains("tensors") || !header["tensors"].is_array()) {
        throw IoError("load_checkpoint: header of '" + path + "' has no tensor manifest");
    }

    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        std::size_t offset;
    };
    std::vector<Entry> entries;
    for (const auto& e : header["tensors"]) {
        try {
            entries.push_back({e.at("name").get<std::string>(),
                               e.at("shape").get<std::vector<std::size_t>>(),
                               e.at("offset").get<std::size_t>()});
        } catch (const json::exception& ex) {
            throw IoError("load_checkpoint: malformed manifest entry in '" + path + "': " + ex.what());
        }
    }

    std::size_t cursor = 0;
    auto read_tensor = [&](const Entry& e) {
        std::size_t count = 1;
        for (std::size_t s : e.shape) count *= s;
        if (e.offset != cursor) {
            throw IoError("load_checkpoint: tensor '" + e.name + "' has offset " +
                          std::to_string(e.offset) + ", expected " + std::to_string(cursor));
        }
        if (e.offset + count * 4 > payload_size) {
            throw IoError("load_checkpoint: tensor '" + e.name + "' runs past the payload");
        }
        std::vector<float> data(count);
        for (std::size_t i = 0; i < count; ++i) {
            data[i] = read_le_f32(payload + e.offset + i * 4);
            if (!std::isfinite(data[i])) {
                throw NumericError("load_checkpoint: tensor '" + e.name +
                                   "' contains a non-finite value at flat index " + std::to_string(i));
            }
        }
        cursor += count * 4;
        return data;
    };

    std::size_t next = 0;
    auto expect_vec = [&](const std::string& name, std::size_t len) {
        if (next >= entries.size() || entries[next].name != name) {
            throw IoError("load_checkpoint: manifest is missing tensor '" + name + "'");
        }
        const Entry& e = entries[next++];
        if (e.shape.size() != 1 || e.shape[0] != len) {
            throw ShapeError("load_checkpoint: tensor '" + name + "' has " +
                             (e.shape.empty() ? std::string("0") : std::to_string(e.shape[0])) +
                             " entries, config requires " + std::to_string(len));
        }
        return read_tensor(e);
    };
    auto expect_mat = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        if (next >= entries.size() || entries[next].name != name) {
            throw IoError("load_checkpoint: manifest is missing tensor '" + name + "'");
        }
        const Entry& e = entries[next++];
        if (e.shape.size() != 2 || e.shape[0] != rows || e.shape[1] != cols) {
            throw ShapeError("load_checkpoint: tensor '" + name + "' shape does not match config (expected " +
                             std::to_string(rows) + "x" + std::to_string(cols) + ")");
        }
        return Tensor2D(rows, cols, read_tensor(e));
    };

    WeightStore w;
    w.config = config;
    const std::size_t d = config.hidden_dim;
    w.embedding = expect_mat("embedding", config.vocab_size, d);
    w.layers.resize(config.num_layers);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        LayerWeights& lw = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        const std::size_t hd = config.num_heads[l] * config.head_dim;
        const std::size_t gd = config.num_groups[l] * config.head_dim;
        lw.pre_attn_gamma = expect_vec(p + "pre_attn_gamma", d);
        if (config.postnorm_attn[l]) lw.post_attn_gamma = expect_vec(p + "post_attn_gamma", d);
        lw.pre_ffn_gamma = expect_vec(p + "pre_ffn_gamma", d);
        if (config.postnorm_ffn[l]) lw.post_ffn_gamma = expect_vec(p + "post_ffn_gamma", d);
        lw.w_q = expect_mat(p + "w_q", d, hd);
        lw.w_k = expect_mat(p + "w_k", d, gd);
        lw.w_v = expect_mat(p + "w_v", d, gd);
        lw.w_o = expect_mat(p + "w_o", hd, d);
        lw.w_gate = expect_mat(p + "w_gate", d, config.ffn_dim[l]);
        lw.w_up = expect_mat(p + "w_up", d, config.ffn_dim[l]);
        lw.w_down = expect_mat(p + "w_down", config.ffn_dim[l], d);
    }
    w.final_gamma = expect_vec("final_gamma", d);
    w.output_head = expect_mat("output_head", d, config.vocab_size);
    if (next != entries.size()) {
        throw IoError("load_checkpoint: manifest has " + std::to_string(entries.size() - next) +
                      " unexpected trailing tensors");
    }
    if (cursor != payload_size) {
        throw IoError("load_checkpoint: payload has " + std::to_string(payload_size - cursor) +
                      " trailing bytes");
    }
    w.validate();
    return w;
}

} // namespace prunekit
