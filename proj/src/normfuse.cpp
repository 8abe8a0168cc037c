#include "prunekit/normfuse.hpp"

#include "prunekit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace prunekit {

namespace {

std::string site_name(SiteRef site) {
    return "layers." + std::to_string(site.layer) +
           (site.kind == ModuleSite::Attention ? ".post_attn" : ".post_ffn");
}

} // namespace

double inv_scale(const ActivationStats& stats, SiteRef site) {
    if (site.layer >= stats.layers.size()) {
        throw ValidationError("inv_scale: layer " + std::to_string(site.layer) + " does not exist");
    }
    const LayerActivationStats& ls = stats.layers[site.layer];
    const double sum = site.kind == ModuleSite::Attention ? ls.attn_inv_scale_sum : ls.ffn_inv_scale_sum;
    const std::int64_t count =
        site.kind == ModuleSite::Attention ? ls.attn_site_token_count : ls.ffn_site_token_count;
    if (count == 0) {
        throw ValidationError("inv_scale: site " + site_name(site) + " saw no calibration tokens");
    }
    return sum / static_cast<double>(count);
}

std::pair<WeightStore, AbsorptionReport> absorb(const WeightStore& w, const ActivationStats& stats,
                                                std::span<const SiteRef> sites) {
    if (stats.layers.size() != w.config.num_layers) {
        throw ShapeError("absorb: stats cover " + std::to_string(stats.layers.size()) +
                         " layers, model has " + std::to_string(w.config.num_layers));
    }
    WeightStore out = w;
    AbsorptionReport report;
    for (const SiteRef& site : sites) {
        if (site.layer >= w.config.num_layers) {
            throw ValidationError("absorb: layer " + std::to_string(site.layer) + " does not exist");
        }
        const bool present = site.kind == ModuleSite::Attention
                                 ? out.config.postnorm_attn[site.layer]
                                 : out.config.postnorm_ffn[site.layer];
        if (!present) {
            throw ValidationError("absorb: site " + site_name(site) +
                                  " is already absorbed or absent");
        }
        const double s = inv_scale(stats, site);
        LayerWeights& lw = out.layers[site.layer];
        std::vector<float>& gamma =
            site.kind == ModuleSite::Attention ? lw.post_attn_gamma : lw.post_ffn_gamma;
        Tensor2D& proj = site.kind == ModuleSite::Attention ? lw.w_o : lw.w_down;
        // Column j of the producing projection picks up gamma_abs_j.
        for (std::size_t c = 0; c < proj.cols(); ++c) {
            const float g = static_cast<float>(s * static_cast<double>(gamma[c]));
            for (std::size_t r = 0; r < proj.rows(); ++r) {
                proj.at(r, c) *= g;
            }
        }
        gamma.clear();
        if (site.kind == ModuleSite::Attention) {
            out.config.postnorm_attn[site.layer] = false;
        } else {
            out.config.postnorm_ffn[site.layer] = false;
        }
        const LayerActivationStats& ls = stats.layers[site.layer];
        report.sites.push_back({site_name(site), s,
                                site.kind == ModuleSite::Attention ? ls.attn_site_token_count
                                                                   : ls.ffn_site_token_count});
    }
    out.validate();
    return {std::move(out), std::move(report)};
}

double verify_absorption(const WeightStore& sandwich, const WeightStore& absorbed,
                         const CalibrationSet& probe) {
    if (sandwich.config.num_layers != absorbed.config.num_layers ||
        sandwich.config.hidden_dim != absorbed.config.hidden_dim ||
        sandwich.config.vocab_size != absorbed.config.vocab_size) {
        throw ShapeError("verify_absorption: models differ by more than absorption");
    }
    probe.validate();
    double max_dev = 0.0;
    for (const auto& seq : probe.sequences) {
        const Tensor2D a = forward(sandwich, seq).logits;
        const Tensor2D b = forward(absorbed, seq).logits;
        for (std::size_t r = 0; r < a.rows(); ++r) {
            double diff = 0.0, ref = 0.0;
            for (std::size_t c = 0; c < a.cols(); ++c) {
                diff = std::max(diff, std::abs(static_cast<double>(a.at(r, c)) - b.at(r, c)));
                ref = std::max({ref, std::abs(static_cast<double>(a.at(r, c))),
                                std::abs(static_cast<double>(b.at(r, c)))});
            }
            if (diff > 0.0) {
                max_dev = std::max(max_dev, diff / std::max(ref, 1e-30));
            }
        }
    }
    return max_dev;
}

std::vector<SiteRef> present_sites(const ModelConfig& c) {
    std::vector<SiteRef> sites;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        if (c.postnorm_attn[l]) sites.push_back({l, ModuleSite::Attention});
        if (c.postnorm_ffn[l]) sites.push_back({l, ModuleSite::Ffn});
    }
    return sites;
}

std::vector<SiteRef> parse_sites(const std::string& text, const ModelConfig& c) {
    if (text == "none") return {};
    if (text == "all") return present_sites(c);
    if (text == "attn" || text == "ffn") {
        const ModuleSite kind = text == "attn" ? ModuleSite::Attention : ModuleSite::Ffn;
        std::vector<SiteRef> sites;
        for (const SiteRef& s : present_sites(c)) {
            if (s.kind == kind) sites.push_back(s);
        }
        return sites;
    }
    std::vector<SiteRef> sites;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw ValidationError("parse_sites: expected layer:kind, got '" + item + "'");
        }
        SiteRef site;
        try {
            site.layer = std::stoul(item.substr(0, colon));
        } catch (const std::exception&) {
            throw ValidationError("parse_sites: bad layer index in '" + item + "'");
        }
        const std::string kind = item.substr(colon + 1);
        if (kind == "attn") {
            site.kind = ModuleSite::Attention;
        } else if (kind == "ffn") {
            site.kind = ModuleSite::Ffn;
        } else {
            throw ValidationError("parse_sites: kind must be attn or ffn, got '" + kind + "'");
        }
        if (site.layer >= c.num_layers) {
            throw ValidationError("parse_sites: layer " + std::to_string(site.layer) +
                                  " does not exist");
        }
        sites.push_back(site);
    }
    return sites;
}

} // namespace prunekit
