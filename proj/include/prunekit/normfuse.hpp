#pragma once

#include "prunekit/calibrate.hpp"
#include "prunekit/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace prunekit {

enum class ModuleSite { Attention, Ffn };

struct SiteRef {
    std::size_t layer = 0;
    ModuleSite kind = ModuleSite::Attention;
    bool operator==(const SiteRef&) const = default;
};

struct SiteAbsorption {
    std::string site;
    double inv_scale;         // calibration-mean 1/sqrt(|x|²/d + eps), > 0
    std::int64_t token_count; // tokens behind the mean
};

struct AbsorptionReport {
    std::vector<SiteAbsorption> sites;
    // Max relative logit deviation on a probe set, when one was evaluated.
    double probe_max_rel_deviation = -1.0;
};

/// Calibration mean of the inverse RMS of the module outputs entering the
/// given post-norm site. Throws when the site saw no tokens.
double inv_scale(const ActivationStats& stats, SiteRef site);

/// Replaces each listed post-norm with a static per-channel scale and fuses
/// it into the producing projection: column j of w_o (attention site) or
/// w_down (FFN site) is multiplied by inv_scale * gamma_j, the post-norm flag
/// is cleared and its gamma dropped. Absorbing an absent site throws.
std::pair<WeightStore, AbsorptionReport> absorb(const WeightStore& w, const ActivationStats& stats,
                                                std::span<const SiteRef> sites);

/// Max over probe tokens of the relative deviation between the two models'
/// logit rows. Models must differ only by absorption.
double verify_absorption(const WeightStore& sandwich, const WeightStore& absorbed,
                         const CalibrationSet& probe);

/// Every post-norm still present in the model.
std::vector<SiteRef> present_sites(const ModelConfig& c);

/// "all" | "attn" | "ffn" | comma list of layer:kind entries ("0:attn,2:ffn").
std::vector<SiteRef> parse_sites(const std::string& text, const ModelConfig& c);

} // namespace prunekit
