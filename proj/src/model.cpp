#include "prunekit/model.hpp"

#include "prunekit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace prunekit {

ModelConfig ModelConfig::uniform(std::size_t layers, std::size_t hidden, std::size_t heads,
                                 std::size_t groups, std::size_t head_dim, std::size_t ffn,
                                 std::size_t vocab, float eps) {
    ModelConfig c;
    c.num_layers = layers;
    c.hidden_dim = hidden;
    c.head_dim = head_dim;
    c.vocab_size = vocab;
    c.eps = eps;
    c.num_heads.assign(layers, heads);
    c.num_groups.assign(layers, groups);
    c.ffn_dim.assign(layers, ffn);
    c.postnorm_attn.assign(layers, true);
    c.postnorm_ffn.assign(layers, true);
    c.validate();
    return c;
}

std::size_t ModelConfig::heads_per_group(std::size_t layer) const {
    return num_heads[layer] / num_groups[layer];
}

void ModelConfig::validate() const {
    if (num_layers < 1 || hidden_dim < 1 || head_dim < 1 || vocab_size < 1) {
        throw ValidationError("config: num_layers, hidden_dim, head_dim and vocab_size must all be >= 1");
    }
    if (!(eps > 0.0f)) {
        throw ValidationError("config: eps must be > 0");
    }
    if (num_heads.size() != num_layers || num_groups.size() != num_layers ||
        ffn_dim.size() != num_layers || postnorm_attn.size() != num_layers ||
        postnorm_ffn.size() != num_layers) {
        throw ValidationError("config: per-layer lists must have length num_layers=" +
                              std::to_string(num_layers));
    }
    for (std::size_t l = 0; l < num_layers; ++l) {
        if (num_heads[l] < 1 || num_groups[l] < 1 || ffn_dim[l] < 1) {
            throw ValidationError("config: layer " + std::to_string(l) +
                                  " has a zero head, group or ffn count");
        }
        if (num_heads[l] % num_groups[l] != 0) {
            throw ValidationError("config: layer " + std::to_string(l) + " has " +
                                  std::to_string(num_heads[l]) + " query heads, not divisible by " +
                                  std::to_string(num_groups[l]) + " KV groups");
        }
    }
}

namespace {

void check_matrix(const Tensor2D& t, std::size_t rows, std::size_t cols, const std::string& name) {
    if (t.rows() != rows || t.cols() != cols) {
        throw ShapeError("weights: " + name + " is " + std::to_string(t.rows()) + "x" +
                         std::to_string(t.cols()) + ", expected " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
}

void check_vector(const std::vector<float>& v, std::size_t len, bool present, const std::string& name) {
    if (present && v.size() != len) {
        throw ShapeError("weights: " + name + " has " + std::to_string(v.size()) +
                         " entries, expected " + std::to_string(len));
    }
    if (!present && !v.empty()) {
        throw ShapeError("weights: " + name + " present but its post-norm flag is cleared");
    }
}

} // namespace

void WeightStore::validate() const {
    config.validate();
    const std::size_t d = config.hidden_dim;
    check_matrix(embedding, config.vocab_size, d, "embedding");
    check_matrix(output_head, d, config.vocab_size, "output_head");
    check_vector(final_gamma, d, true, "final_gamma");
    if (layers.size() != config.num_layers) {
        throw ShapeError("weights: store has " + std::to_string(layers.size()) +
                         " layers, config declares " + std::to_string(config.num_layers));
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerWeights& lw = layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        const std::size_t hd = config.num_heads[l] * config.head_dim;
        const std::size_t gd = config.num_groups[l] * config.head_dim;
        check_vector(lw.pre_attn_gamma, d, true, p + "pre_attn_gamma");
        check_vector(lw.post_attn_gamma, d, config.postnorm_attn[l], p + "post_attn_gamma");
        check_vector(lw.pre_ffn_gamma, d, true, p + "pre_ffn_gamma");
        check_vector(lw.post_ffn_gamma, d, config.postnorm_ffn[l], p + "post_ffn_gamma");
        check_matrix(lw.w_q, d, hd, p + "w_q");
        check_matrix(lw.w_k, d, gd, p + "w_k");
        check_matrix(lw.w_v, d, gd, p + "w_v");
        check_matrix(lw.w_o, hd, d, p + "w_o");
        check_matrix(lw.w_gate, d, config.ffn_dim[l], p + "w_gate");
        check_matrix(lw.w_up, d, config.ffn_dim[l], p + "w_up");
        check_matrix(lw.w_down, config.ffn_dim[l], d, p + "w_down");
    }
}

namespace {

// Rotates consecutive (even, odd) element pairs of every head_dim block.
// Pair i of a block turns by pos * 10000^(-2i/head_dim); an odd trailing
// element is left unrotated.
void apply_rotary(Tensor2D& t, std::size_t head_dim) {
    const std::size_t blocks = t.cols() / head_dim;
    for (std::size_t pos = 0; pos < t.rows(); ++pos) {
        for (std::size_t b = 0; b < blocks; ++b) {
            for (std::size_t i = 0; 2 * i + 1 < head_dim; ++i) {
                const double theta =
                    static_cast<double>(pos) *
                    std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
                const double c = std::cos(theta);
                const double s = std::sin(theta);
                const std::size_t col = b * head_dim + 2 * i;
                const double a = t.at(pos, col);
                const double bv = t.at(pos, col + 1);
                t.at(pos, col) = static_cast<float>(a * c - bv * s);
                t.at(pos, col + 1) = static_cast<float>(a * s + bv * c);
            }
        }
    }
}

Tensor2D add_rows(const Tensor2D& a, const Tensor2D& b) {
    Tensor2D out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.data()[i] = a.data()[i] + b.data()[i];
    }
    return out;
}

} // namespace

ForwardResult forward(const WeightStore& w, std::span<const std::int32_t> tokens, bool want_trace) {
    const ModelConfig& cfg = w.config;
    if (tokens.empty()) {
        throw ValidationError("forward: token sequence is empty");
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= cfg.vocab_size) {
            throw ValidationError("forward: token id " + std::to_string(tokens[i]) + " at position " +
                                  std::to_string(i) + " is outside vocab of size " +
                                  std::to_string(cfg.vocab_size));
        }
    }

    const std::size_t S = tokens.size();
    const std::size_t d = cfg.hidden_dim;
    const std::size_t dh = cfg.head_dim;

    Tensor2D x(S, d);
    for (std::size_t s = 0; s < S; ++s) {
        auto src = w.embedding.row(static_cast<std::size_t>(tokens[s]));
        std::copy(src.begin(), src.end(), x.row(s).begin());
    }

    ForwardResult result;
    if (want_trace) {
        result.trace.emplace();
        result.trace->layers.resize(cfg.num_layers);
    }

    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const LayerWeights& lw = w.layers[l];
        const std::size_t H = cfg.num_heads[l];
        const std::size_t G = cfg.num_groups[l];
        const std::size_t hpg = H / G;
        LayerTrace* tl = want_trace ? &result.trace->layers[l] : nullptr;
        if (tl) tl->input = x;

        Tensor2D h = rmsnorm_rows(x, lw.pre_attn_gamma, cfg.eps);
        if (tl) tl->pre_attn_norm = h;

        Tensor2D q = matmul(h, lw.w_q);
        Tensor2D k = matmul(h, lw.w_k);
        Tensor2D v = matmul(h, lw.w_v);
        apply_rotary(q, dh);
        apply_rotary(k, dh);

        // Causal attention, one query head at a time. Head j reads K/V from
        // group j / (H/G); logits are scaled by 1/sqrt(head_dim).
        Tensor2D heads(S, H * dh);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> att;
        for (std::size_t j = 0; j < H; ++j) {
            const std::size_t g = j / hpg;
            for (std::size_t si = 0; si < S; ++si) {
                att.assign(si + 1, 0.0);
                double maxv = -std::numeric_limits<double>::infinity();
                for (std::size_t sj = 0; sj <= si; ++sj) {
                    double dot = 0.0;
                    for (std::size_t t = 0; t < dh; ++t) {
                        dot += static_cast<double>(q.at(si, j * dh + t)) *
                               static_cast<double>(k.at(sj, g * dh + t));
                    }
                    att[sj] = dot * scale;
                    maxv = std::max(maxv, att[sj]);
                }
                double denom = 0.0;
                for (std::size_t sj = 0; sj <= si; ++sj) {
                    att[sj] = std::exp(att[sj] - maxv);
                    denom += att[sj];
                }
                for (std::size_t t = 0; t < dh; ++t) {
                    double acc = 0.0;
                    for (std::size_t sj = 0; sj <= si; ++sj) {
                        acc += att[sj] / denom * static_cast<double>(v.at(sj, g * dh + t));
                    }
                    heads.at(si, j * dh + t) = static_cast<float>(acc);
                }
            }
        }
        if (tl) tl->head_outputs = heads;

        Tensor2D attn_out = matmul(heads, lw.w_o);
        if (tl) tl->attn_module_out = attn_out;
        if (cfg.postnorm_attn[l]) {
            attn_out = rmsnorm_rows(attn_out, lw.post_attn_gamma, cfg.eps);
            if (tl) tl->post_attn_norm = attn_out;
        }
        x = add_rows(x, attn_out);

        Tensor2D h2 = rmsnorm_rows(x, lw.pre_ffn_gamma, cfg.eps);
        if (tl) tl->pre_ffn_norm = h2;
        Tensor2D gate = matmul(h2, lw.w_gate);
        Tensor2D up = matmul(h2, lw.w_up);
        Tensor2D inter(S, cfg.ffn_dim[l]);
        for (std::size_t i = 0; i < inter.size(); ++i) {
            inter.data()[i] = swish(gate.data()[i]) * up.data()[i];
        }
        if (tl) tl->ffn_intermediate = inter;
        Tensor2D ffn_out = matmul(inter, lw.w_down);
        if (tl) tl->ffn_module_out = ffn_out;
        if (cfg.postnorm_ffn[l]) {
            ffn_out = rmsnorm_rows(ffn_out, lw.post_ffn_gamma, cfg.eps);
            if (tl) tl->post_ffn_norm = ffn_out;
        }
        x = add_rows(x, ffn_out);
        if (tl) tl->output = x;
    }

    Tensor2D f = rmsnorm_rows(x, w.final_gamma, cfg.eps);
    if (want_trace) result.trace->final_norm = f;
    result.logits = matmul(f, w.output_head);
    return result;
}

namespace {

class WeightSampler {
public:
    explicit WeightSampler(std::uint64_t seed) : rng_(seed) {}

    // Uniform in [-sqrt(3/fan_in), sqrt(3/fan_in)]: zero mean, std 1/sqrt(fan_in).
    Tensor2D matrix(std::size_t rows, std::size_t cols, std::size_t fan_in) {
        const double r = std::sqrt(3.0 / static_cast<double>(fan_in));
        Tensor2D t(rows, cols);
        for (float& v : t.data()) {
            v = static_cast<float>((2.0 * next_unit() - 1.0) * r);
        }
        return t;
    }

private:
    double next_unit() {
        // 53 uniform bits -> [0, 1); avoids distribution objects so streams
        // are identical across standard library implementations.
        return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    }

    std::mt19937_64 rng_;
};

} // namespace

WeightStore random_init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    WeightSampler sampler(seed);
    WeightStore w;
    w.config = config;
    const std::size_t d = config.hidden_dim;
    w.embedding = sampler.matrix(config.vocab_size, d, d);
    w.layers.resize(config.num_layers);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        LayerWeights& lw = w.layers[l];
        const std::size_t hd = config.num_heads[l] * config.head_dim;
        const std::size_t gd = config.num_groups[l] * config.head_dim;
        lw.pre_attn_gamma.assign(d, 1.0f);
        if (config.postnorm_attn[l]) lw.post_attn_gamma.assign(d, 1.0f);
        lw.pre_ffn_gamma.assign(d, 1.0f);
        if (config.postnorm_ffn[l]) lw.post_ffn_gamma.assign(d, 1.0f);
        lw.w_q = sampler.matrix(d, hd, d);
        lw.w_k = sampler.matrix(d, gd, d);
        lw.w_v = sampler.matrix(d, gd, d);
        lw.w_o = sampler.matrix(hd, d, hd);
        lw.w_gate = sampler.matrix(d, config.ffn_dim[l], d);
        lw.w_up = sampler.matrix(d, config.ffn_dim[l], d);
        lw.w_down = sampler.matrix(config.ffn_dim[l], d, config.ffn_dim[l]);
    }
    w.final_gamma.assign(d, 1.0f);
    w.output_head = sampler.matrix(d, config.vocab_size, d);
    return w;
}

} // namespace prunekit
