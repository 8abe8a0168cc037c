#pragma once

#include "prunekit/calibrate.hpp"

#include <span>
#include <vector>

namespace prunekit {

/// The four activation-based score families. Scores are raw sums over the
/// calibration tokens (not averaged): downstream only ranks them, and ranks
/// are unchanged by the token count.
struct ImportanceScores {
    std::vector<double> channel;            // length d, summed over every RMSNorm site
    std::vector<std::vector<double>> head;  // [layer][query head]
    std::vector<std::vector<double>> ffn;   // [layer][neuron]
    std::vector<double> layer;              // block importance: 1 - mean input/output cosine
};

/// Sum of per-site absolute-activation sums across all RMSNorm sites,
/// post-norms and the final norm included.
std::vector<double> channel_scores(const ActivationStats& s);

std::vector<std::vector<double>> head_scores(const ActivationStats& s);

std::vector<std::vector<double>> ffn_scores(const ActivationStats& s);

/// 1 - cosine_sim_sum / token_count per layer. Throws on zero tokens.
std::vector<double> layer_scores(const ActivationStats& s);

ImportanceScores compute_scores(const ActivationStats& s);

/// Mean score of a KV group's surviving query heads. Throws on an empty group.
double kv_group_score(std::span<const double> surviving_head_scores);

std::vector<double> kv_group_scores(const std::vector<std::vector<double>>& surviving_per_group);

} // namespace prunekit
