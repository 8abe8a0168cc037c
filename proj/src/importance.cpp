#include "prunekit/importance.hpp"

#include "prunekit/errors.hpp"

#include <string>

namespace prunekit {

std::vector<double> channel_scores(const ActivationStats& s) {
    std::vector<double> scores(s.config.hidden_dim, 0.0);
    for (const auto& site : s.sites) {
        for (std::size_t k = 0; k < scores.size(); ++k) {
            scores[k] += site.channel_abs_sum[k];
        }
    }
    return scores;
}

std::vector<std::vector<double>> head_scores(const ActivationStats& s) {
    std::vector<std::vector<double>> scores;
    scores.reserve(s.layers.size());
    for (const auto& l : s.layers) {
        scores.push_back(l.head_l2_sum);
    }
    return scores;
}

std::vector<std::vector<double>> ffn_scores(const ActivationStats& s) {
    std::vector<std::vector<double>> scores;
    scores.reserve(s.layers.size());
    for (const auto& l : s.layers) {
        scores.push_back(l.ffn_abs_sum);
    }
    return scores;
}

std::vector<double> layer_scores(const ActivationStats& s) {
    std::vector<double> scores(s.layers.size());
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
        if (s.layers[l].token_count == 0) {
            throw ValidationError("layer_scores: layer " + std::to_string(l) +
                                  " has no calibration tokens");
        }
        scores[l] = 1.0 - s.layers[l].cosine_sim_sum / static_cast<double>(s.layers[l].token_count);
    }
    return scores;
}

ImportanceScores compute_scores(const ActivationStats& s) {
    return {channel_scores(s), head_scores(s), ffn_scores(s), layer_scores(s)};
}

double kv_group_score(std::span<const double> surviving_head_scores) {
    if (surviving_head_scores.empty()) {
        throw ValidationError("kv_group_score: group has no surviving heads");
    }
    double sum = 0.0;
    for (double v : surviving_head_scores) sum += v;
    return sum / static_cast<double>(surviving_head_scores.size());
}

std::vector<double> kv_group_scores(const std::vector<std::vector<double>>& surviving_per_group) {
    std::vector<double> out;
    out.reserve(surviving_per_group.size());
    for (const auto& g : surviving_per_group) {
        out.push_back(kv_group_score(g));
    }
    return out;
}

} // namespace prunekit
