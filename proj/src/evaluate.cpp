#include "prunekit/evaluate.hpp"

#include "prunekit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace prunekit {

namespace {

std::vector<double> log_softmax(std::span<const float> logits) {
    double maxv = -std::numeric_limits<double>::infinity();
    for (float v : logits) maxv = std::max(maxv, static_cast<double>(v));
    double denom = 0.0;
    for (float v : logits) denom += std::exp(static_cast<double>(v) - maxv);
    const double lse = maxv + std::log(denom);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = static_cast<double>(logits[i]) - lse;
    }
    return out;
}

} // namespace

double kl_divergence(std::span<const float> teacher_logits, std::span<const float> student_logits) {
    if (teacher_logits.size() != student_logits.size() || teacher_logits.empty()) {
        throw ShapeError("kl_divergence: logit rows have lengths " +
                         std::to_string(teacher_logits.size()) + " and " +
                         std::to_string(student_logits.size()));
    }
    const auto lt = log_softmax(teacher_logits);
    const auto ls = log_softmax(student_logits);
    double kl = 0.0;
    for (std::size_t i = 0; i < lt.size(); ++i) {
        kl += std::exp(lt[i]) * (lt[i] - ls[i]);
    }
    return kl;
}

double kd_loss(const WeightStore& teacher, const WeightStore& student, const CalibrationSet& data) {
    if (teacher.config.vocab_size != student.config.vocab_size) {
        throw ValidationError("kd_loss: teacher vocab " + std::to_string(teacher.config.vocab_size) +
                              " != student vocab " + std::to_string(student.config.vocab_size));
    }
    data.validate();
    double sum = 0.0;
    std::int64_t tokens = 0;
    for (const auto& seq : data.sequences) {
        const Tensor2D lt = forward(teacher, seq).logits;
        const Tensor2D ls = forward(student, seq).logits;
        for (std::size_t r = 0; r < lt.rows(); ++r) {
            sum += kl_divergence(lt.row(r), ls.row(r));
        }
        tokens += static_cast<std::int64_t>(lt.rows());
    }
    return sum / static_cast<double>(tokens);
}

double perplexity(const WeightStore& w, const CalibrationSet& data) {
    data.validate();
    double nll = 0.0;
    std::int64_t targets = 0;
    for (const auto& seq : data.sequences) {
        if (seq.size() < 2) continue;
        const Tensor2D logits = forward(w, seq).logits;
        for (std::size_t s = 0; s + 1 < seq.size(); ++s) {
            const auto lsm = log_softmax(logits.row(s));
            nll -= lsm[static_cast<std::size_t>(seq[s + 1])];
            ++targets;
        }
    }
    if (targets == 0) {
        throw ValidationError("perplexity: no sequence has length >= 2");
    }
    return std::exp(nll / static_cast<double>(targets));
}

namespace {

// One matmul of a 1 x m row against an m x n matrix: 2mn flops.
double mm(double m, double n) {
    return 2.0 * m * n;
}

// One rmsnorm over a d-vector: square-accumulate, scale, gamma multiply.
double norm_flops(double d) {
    return 3.0 * d;
}

} // namespace

CostEstimate estimate_cost(const ModelConfig& config, std::size_t seq_len) {
    return estimate_cost(config, seq_len, config);
}

CostEstimate estimate_cost(const ModelConfig& config, std::size_t seq_len,
                           const ModelConfig& reference) {
    config.validate();
    const double d = static_cast<double>(config.hidden_dim);
    const double dh = static_cast<double>(config.head_dim);
    const double v = static_cast<double>(config.vocab_size);
    const double ctx = static_cast<double>(seq_len);

    CostEstimate est;
    est.param_count = static_cast<std::int64_t>(config.vocab_size * config.hidden_dim) * 2 +
                      static_cast<std::int64_t>(config.hidden_dim); // embedding, head, final gamma
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        const double h = static_cast<double>(config.num_heads[l]);
        const double g = static_cast<double>(config.num_groups[l]);
        const double ffn = static_cast<double>(config.ffn_dim[l]);
        const double norms = 2.0 + (config.postnorm_attn[l] ? 1.0 : 0.0) +
                             (config.postnorm_ffn[l] ? 1.0 : 0.0);

        est.param_count += static_cast<std::int64_t>(norms * d);                    // gammas
        est.param_count += static_cast<std::int64_t>(d * h * dh + 2.0 * d * g * dh); // q, k, v
        est.param_count += static_cast<std::int64_t>(h * dh * d);                    // o
        est.param_count += static_cast<std::int64_t>(2.0 * d * ffn + ffn * d);       // gate, up, down

        double flops = 0.0;
        flops += mm(d, h * dh) + 2.0 * mm(d, g * dh); // q, k, v projections
        flops += 3.0 * (h + g) * dh;                  // rotary
        flops += 2.0 * h * dh * ctx;                  // q · kᵀ over the context
        flops += 2.0 * h * dh * ctx;                  // probs · v
        flops += mm(h * dh, d);                       // output projection
        flops += 2.0 * mm(d, ffn) + 4.0 * ffn + mm(ffn, d); // gate/up, swish ⊙, down
        est.flops_per_token += flops;
        est.norm_flops_per_token += norms * norm_flops(d);
    }
    est.norm_flops_per_token += norm_flops(d); // final norm
    est.flops_per_token += est.norm_flops_per_token + mm(d, v);

    if (&reference == &config || reference == config) {
        est.relative_speed = 1.0;
    } else {
        est.relative_speed = estimate_cost(reference, seq_len).flops_per_token / est.flops_per_token;
    }
    return est;
}

} // namespace prunekit
