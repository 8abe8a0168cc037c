#pragma once

#include "prunekit/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prunekit {

/// Architectural hyperparameters of a sandwich-norm GQA transformer.
///
/// Head, KV-group and FFN widths are tracked per layer: surgery can leave the
/// model heterogeneous (a merged attention layer keeps fewer KV groups than
/// its neighbours, FFN budgets differ per layer), and the forward pass has to
/// stay runnable on those models.
struct ModelConfig {
    std::size_t num_layers = 0;
    std::size_t hidden_dim = 0;
    std::size_t head_dim = 0;
    std::size_t vocab_size = 0;
    float eps = 1e-6f;
    std::vector<std::size_t> num_heads;  // query heads, per layer
    std::vector<std::size_t> num_groups; // KV groups, per layer
    std::vector<std::size_t> ffn_dim;    // per layer
    std::vector<bool> postnorm_attn;     // post-norm present after attention, per layer
    std::vector<bool> postnorm_ffn;      // post-norm present after FFN, per layer

    /// The usual pre-surgery case: every layer shares the same widths and
    /// both post-norms are present.
    static ModelConfig uniform(std::size_t layers, std::size_t hidden, std::size_t heads,
                               std::size_t groups, std::size_t head_dim, std::size_t ffn,
                               std::size_t vocab, float eps = 1e-6f);

    std::size_t heads_per_group(std::size_t layer) const;

    /// Throws ValidationError on any violated invariant (counts >= 1,
    /// eps > 0, per-layer lists of length num_layers, heads divisible by
    /// groups).
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    std::vector<float> pre_attn_gamma;  // d
    std::vector<float> post_attn_gamma; // d, empty when the post-norm is absent
    std::vector<float> pre_ffn_gamma;   // d
    std::vector<float> post_ffn_gamma;  // d, empty when the post-norm is absent
    Tensor2D w_q;    // d x (H * head_dim)
    Tensor2D w_k;    // d x (G * head_dim)
    Tensor2D w_v;    // d x (G * head_dim)
    Tensor2D w_o;    // (H * head_dim) x d
    Tensor2D w_gate; // d x ffn
    Tensor2D w_up;   // d x ffn
    Tensor2D w_down; // ffn x d

    bool operator==(const LayerWeights&) const = default;
};

struct WeightStore {
    ModelConfig config;
    Tensor2D embedding; // V x d
    std::vector<LayerWeights> layers;
    std::vector<float> final_gamma; // d
    Tensor2D output_head; // d x V

    /// Checks every shape against config and the post-norm presence flags.
    /// Throws ShapeError naming the offending tensor.
    void validate() const;

    bool operator==(const WeightStore&) const = default;
};

/// Hook captures for one layer of one traced forward pass.
struct LayerTrace {
    Tensor2D input;            // S x d, residual stream entering the layer
    Tensor2D pre_attn_norm;    // S x d
    Tensor2D head_outputs;     // S x (H * head_dim), per-head blocks before w_o
    Tensor2D attn_module_out;  // S x d, the attention post-norm site input
    Tensor2D post_attn_norm;   // S x d, only when the post-norm exists
    Tensor2D pre_ffn_norm;     // S x d
    Tensor2D ffn_intermediate; // S x ffn, swish(x·w_gate) ⊙ (x·w_up)
    Tensor2D ffn_module_out;   // S x d, the FFN post-norm site input
    Tensor2D post_ffn_norm;    // S x d, only when the post-norm exists
    Tensor2D output;           // S x d, after both residual adds
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
    Tensor2D final_norm; // S x d
};

struct ForwardResult {
    Tensor2D logits; // S x V
    std::optional<ForwardTrace> trace;
};

/// Runs the model over one token sequence.
///
/// Per block: x += PostAttnNorm(Attn(PreAttnNorm(x))), then
/// x += PostFfnNorm(FFN(PreFfnNorm(x))). Attention is causal with rotary
/// position encoding on Q and K (base 10000, consecutive element pairs per
/// head; a trailing odd element passes through). Absent post-norms are a
/// plain pass-through at that site. Throws ValidationError for token ids
/// outside the vocabulary or an empty sequence.
ForwardResult forward(const WeightStore& w, std::span<const std::int32_t> tokens,
                      bool want_trace = false);

/// Deterministic per seed. Weight matrices are uniform in
/// [-sqrt(3/fan_in), sqrt(3/fan_in)] (zero mean, std 1/sqrt(fan_in));
/// all gamma vectors start at exactly 1.
WeightStore random_init(const ModelConfig& config, std::uint64_t seed);

} // namespace prunekit
