#pragma once

#include "prunekit/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace prunekit {

struct CalibrationSet {
    std::vector<std::vector<std::int32_t>> sequences;
    std::string provenance;

    /// Non-empty, every sequence non-empty.
    void validate() const;
};

/// One sequence per line, whitespace-separated integer token ids.
CalibrationSet load_calibration(const std::string& path);

/// Bundled default: seeded pseudo-random sequences, uniform over the vocab.
CalibrationSet builtin_calibration(std::uint64_t seed, std::size_t vocab,
                                   std::size_t num_sequences = 32, std::size_t seq_len = 64);

/// Per-token absolute sums of one RMSNorm site's outputs.
struct NormSiteStats {
    std::string name; // "layers.3.pre_ffn", "final", ...
    std::vector<double> channel_abs_sum;
};

struct LayerActivationStats {
    std::vector<double> head_l2_sum;  // per query head: sum of per-token head-output L2 norms
    std::vector<double> ffn_abs_sum;  // per neuron: sum of |swish(x·w_gate) ⊙ x·w_up|
    double cosine_sim_sum = 0.0;      // sum of cos(layer input, layer output) per token
    std::int64_t token_count = 0;
    double attn_inv_scale_sum = 0.0;  // sum of 1/sqrt(|x|²/d + eps) over attention-module outputs
    std::int64_t attn_site_token_count = 0;
    double ffn_inv_scale_sum = 0.0;   // same for FFN-module outputs
    std::int64_t ffn_site_token_count = 0;
};

/// Streaming reductions of the calibration multisets: enough to compute every
/// importance score and post-norm absorption scale without keeping any token
/// vectors around. All accumulators are 64-bit.
struct ActivationStats {
    ModelConfig config; // shape echo of the model the stats were collected on
    std::vector<NormSiteStats> sites; // every RMSNorm site, model order, final norm last
    std::vector<LayerActivationStats> layers;
    std::int64_t token_count = 0;

    static ActivationStats zeros(const ModelConfig& config);

    /// Folds one traced forward pass into the accumulators.
    void accumulate(const ForwardTrace& trace);
};

/// Runs the model over every sequence (file order) and reduces the traces.
/// Forward errors are rethrown with the offending sequence index.
ActivationStats collect(const WeightStore& w, const CalibrationSet& c);

/// Elementwise sum of two stats collected on identically shaped models.
ActivationStats merge(const ActivationStats& a, const ActivationStats& b);

} // namespace prunekit
