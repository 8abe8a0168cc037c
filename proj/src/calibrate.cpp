#include "prunekit/calibrate.hpp"

#include "prunekit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace prunekit {

void CalibrationSet::validate() const {
    if (sequences.empty()) {
        throw ValidationError("calibration set has no sequences");
    }
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        if (sequences[i].empty()) {
            throw ValidationError("calibration sequence " + std::to_string(i) + " is empty");
        }
    }
}

CalibrationSet load_calibration(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("load_calibration: cannot open '" + path + "'");
    }
    CalibrationSet c;
    c.provenance = path;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::vector<std::int32_t> seq;
        long long id;
        while (ss >> id) {
            seq.push_back(static_cast<std::int32_t>(id));
        }
        if (!ss.eof()) {
            throw IoError("load_calibration: '" + path + "' line " + std::to_string(lineno) +
                          " has a non-integer token");
        }
        if (!seq.empty()) {
            c.sequences.push_back(std::move(seq));
        }
    }
    c.validate();
    return c;
}

CalibrationSet builtin_calibration(std::uint64_t seed, std::size_t vocab,
                                   std::size_t num_sequences, std::size_t seq_len) {
    if (vocab < 1 || num_sequences < 1 || seq_len < 1) {
        throw ValidationError("builtin_calibration: vocab, sequence count and length must be >= 1");
    }
    std::mt19937_64 rng(seed);
    CalibrationSet c;
    c.provenance = "builtin:seed=" + std::to_string(seed);
    c.sequences.resize(num_sequences);
    for (auto& seq : c.sequences) {
        seq.resize(seq_len);
        for (auto& t : seq) {
            t = static_cast<std::int32_t>(rng() % vocab);
        }
    }
    return c;
}

namespace {

std::vector<std::string> site_names(const ModelConfig& c) {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        names.push_back(p + "pre_attn");
        if (c.postnorm_attn[l]) names.push_back(p + "post_attn");
        names.push_back(p + "pre_ffn");
        if (c.postnorm_ffn[l]) names.push_back(p + "post_ffn");
    }
    names.push_back("final");
    return names;
}

void add_abs_rows(std::vector<double>& sums, const Tensor2D& t) {
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) {
            sums[c] += std::abs(static_cast<double>(t.at(r, c)));
        }
    }
}

// cos(x, y) per token. Zero vectors: cos(0,0) counts as 1 (the layer kept
// the token unchanged), cos(0,y) and cos(x,0) count as 0.
double cosine(std::span<const float> x, std::span<const float> y) {
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += static_cast<double>(x[i]) * static_cast<double>(y[i]);
        nx += static_cast<double>(x[i]) * static_cast<double>(x[i]);
        ny += static_cast<double>(y[i]) * static_cast<double>(y[i]);
    }
    if (nx == 0.0 && ny == 0.0) return 1.0;
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(nx) * std::sqrt(ny)), -1.0, 1.0);
}

double inv_rms(std::span<const float> x, float eps) {
    double sum_sq = 0.0;
    for (float v : x) {
        sum_sq += static_cast<double>(v) * static_cast<double>(v);
    }
    return 1.0 / std::sqrt(sum_sq / static_cast<double>(x.size()) + static_cast<double>(eps));
}

} // namespace

ActivationStats ActivationStats::zeros(const ModelConfig& config) {
    config.validate();
    ActivationStats s;
    s.config = config;
    for (const auto& name : site_names(config)) {
        s.sites.push_back({name, std::vector<double>(config.hidden_dim, 0.0)});
    }
    s.layers.resize(config.num_layers);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        s.layers[l].head_l2_sum.assign(config.num_heads[l], 0.0);
        s.layers[l].ffn_abs_sum.assign(config.ffn_dim[l], 0.0);
    }
    return s;
}

void ActivationStats::accumulate(const ForwardTrace& trace) {
    if (trace.layers.size() != config.num_layers) {
        throw ShapeError("stats: trace has " + std::to_string(trace.layers.size()) +
                         " layers, stats expect " + std::to_string(config.num_layers));
    }
    const std::size_t dh = config.head_dim;
    std::size_t site = 0;
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        const LayerTrace& tl = trace.layers[l];
        LayerActivationStats& ls = layers[l];
        const std::size_t S = tl.input.rows();

        add_abs_rows(sites[site++].channel_abs_sum, tl.pre_attn_norm);
        if (config.postnorm_attn[l]) add_abs_rows(sites[site++].channel_abs_sum, tl.post_attn_norm);
        add_abs_rows(sites[site++].channel_abs_sum, tl.pre_ffn_norm);
        if (config.postnorm_ffn[l]) add_abs_rows(sites[site++].channel_abs_sum, tl.post_ffn_norm);

        for (std::size_t s = 0; s < S; ++s) {
            auto row = tl.head_outputs.row(s);
            for (std::size_t j = 0; j < config.num_heads[l]; ++j) {
                ls.head_l2_sum[j] += l2_norm(row.subspan(j * dh, dh));
            }
            auto inter = tl.ffn_intermediate.row(s);
            for (std::size_t m = 0; m < config.ffn_dim[l]; ++m) {
                ls.ffn_abs_sum[m] += std::abs(static_cast<double>(inter[m]));
            }
            ls.cosine_sim_sum += cosine(tl.input.row(s), tl.output.row(s));
            ls.attn_inv_scale_sum += inv_rms(tl.attn_module_out.row(s), config.eps);
            ls.ffn_inv_scale_sum += inv_rms(tl.ffn_module_out.row(s), config.eps);
        }
        ls.token_count += static_cast<std::int64_t>(S);
        ls.attn_site_token_count += static_cast<std::int64_t>(S);
        ls.ffn_site_token_count += static_cast<std::int64_t>(S);
    }
    add_abs_rows(sites[site].channel_abs_sum, trace.final_norm);
    token_count += static_cast<std::int64_t>(trace.final_norm.rows());
}

ActivationStats collect(const WeightStore& w, const CalibrationSet& c) {
    c.validate();
    ActivationStats stats = ActivationStats::zeros(w.config);
    for (std::size_t i = 0; i < c.sequences.size(); ++i) {
        try {
            auto result = forward(w, c.sequences[i], /*want_trace=*/true);
            stats.accumulate(*result.trace);
        } catch (const ValidationError& e) {
            throw ValidationError("calibration sequence " + std::to_string(i) + ": " + e.what());
        }
    }
    return stats;
}

ActivationStats merge(const ActivationStats& a, const ActivationStats& b) {
    if (a.config != b.config) {
        throw ShapeError("merge: activation stats come from differently shaped models");
    }
    ActivationStats out = a;
    for (std::size_t s = 0; s < out.sites.size(); ++s) {
        for (std::size_t k = 0; k < out.sites[s].channel_abs_sum.size(); ++k) {
            out.sites[s].channel_abs_sum[k] += b.sites[s].channel_abs_sum[k];
        }
    }
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        LayerActivationStats& o = out.layers[l];
        const LayerActivationStats& p = b.layers[l];
        for (std::size_t j = 0; j < o.head_l2_sum.size(); ++j) o.head_l2_sum[j] += p.head_l2_sum[j];
        for (std::size_t m = 0; m < o.ffn_abs_sum.size(); ++m) o.ffn_abs_sum[m] += p.ffn_abs_sum[m];
        o.cosine_sim_sum += p.cosine_sim_sum;
        o.token_count += p.token_count;
        o.attn_inv_scale_sum += p.attn_inv_scale_sum;
        o.attn_site_token_count += p.attn_site_token_count;
        o.ffn_inv_scale_sum += p.ffn_inv_scale_sum;
        o.ffn_site_token_count += p.ffn_site_token_count;
    }
    out.token_count += b.token_count;
    return out;
}

} // namespace prunekit
