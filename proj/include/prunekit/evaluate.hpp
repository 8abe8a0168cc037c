#pragma once

#include "prunekit/calibrate.hpp"
#include "prunekit/model.hpp"

#include <cstdint>
#include <span>

namespace prunekit {

struct CostEstimate {
    std::int64_t param_count = 0;
    double flops_per_token = 0.0;      // analytic decode cost at the given context length
    double norm_flops_per_token = 0.0; // share spent in rmsnorm vector ops
    double relative_speed = 1.0;       // reference flops / candidate flops
};

struct EvalReport {
    double kd_loss = 0.0;
    double perplexity = 0.0;
    CostEstimate cost;
};

/// KL(softmax(teacher row) ‖ softmax(student row)) in nats, full vocabulary.
double kl_divergence(std::span<const float> teacher_logits, std::span<const float> student_logits);

/// Mean per-token forward KL between teacher and student over every position
/// of every sequence. Throws on a vocab mismatch.
double kd_loss(const WeightStore& teacher, const WeightStore& student, const CalibrationSet& data);

/// exp of the mean next-token negative log-likelihood. Throws when no
/// sequence has length >= 2.
double perplexity(const WeightStore& w, const CalibrationSet& data);

CostEstimate estimate_cost(const ModelConfig& config, std::size_t seq_len);
CostEstimate estimate_cost(const ModelConfig& config, std::size_t seq_len,
                           const ModelConfig& reference);

} // namespace prunekit
