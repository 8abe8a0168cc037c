#include "prunekit/surgery.hpp"

#include "prunekit/errors.hpp"
#include "prunekit/importance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>

namespace prunekit {

namespace {

Tensor2D select_rows(const Tensor2D& t, std::span<const std::size_t> ids) {
    Tensor2D out(ids.size(), t.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto src = t.row(ids[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Tensor2D select_cols(const Tensor2D& t, std::span<const std::size_t> ids) {
    Tensor2D out(t.rows(), ids.size());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            out.at(r, i) = t.at(r, ids[i]);
        }
    }
    return out;
}

std::vector<float> select_vec(const std::vector<float>& v, std::span<const std::size_t> ids) {
    std::vector<float> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out[i] = v[ids[i]];
    }
    return out;
}

// Expands block ids (heads, groups) into element column/row ids.
std::vector<std::size_t> expand_blocks(std::span<const std::size_t> blocks, std::size_t block_size) {
    std::vector<std::size_t> ids;
    ids.reserve(blocks.size() * block_size);
    for (std::size_t b : blocks) {
        for (std::size_t i = 0; i < block_size; ++i) {
            ids.push_back(b * block_size + i);
        }
    }
    return ids;
}

void erase_layer_entries(ModelConfig& c, const std::vector<bool>& remove) {
    ModelConfig out = c;
    out.num_heads.clear();
    out.num_groups.clear();
    out.ffn_dim.clear();
    out.postnorm_attn.clear();
    out.postnorm_ffn.clear();
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        if (remove[l]) continue;
        out.num_heads.push_back(c.num_heads[l]);
        out.num_groups.push_back(c.num_groups[l]);
        out.ffn_dim.push_back(c.ffn_dim[l]);
        out.postnorm_attn.push_back(c.postnorm_attn[l]);
        out.postnorm_ffn.push_back(c.postnorm_ffn[l]);
    }
    out.num_layers = out.num_heads.size();
    c = out;
}

void check_head_scores(const WeightStore& w, const std::vector<std::vector<double>>& scores) {
    if (scores.size() != w.config.num_layers) {
        throw ShapeError("head scores cover " + std::to_string(scores.size()) + " layers, model has " +
                         std::to_string(w.config.num_layers));
    }
    for (std::size_t l = 0; l < scores.size(); ++l) {
        if (scores[l].size() != w.config.num_heads[l]) {
            throw ShapeError("head scores for layer " + std::to_string(l) + " cover " +
                             std::to_string(scores[l].size()) + " heads, layer has " +
                             std::to_string(w.config.num_heads[l]));
        }
    }
}

} // namespace

PrunePlan PrunePlan::keep_all(const ModelConfig& c) {
    c.validate();
    PrunePlan p;
    p.keep_channels.resize(c.hidden_dim);
    std::iota(p.keep_channels.begin(), p.keep_channels.end(), 0);
    p.heads_per_group = c.heads_per_group(0);
    for (std::size_t l = 1; l < c.num_layers; ++l) {
        if (c.heads_per_group(l) != p.heads_per_group) {
            throw ValidationError("keep_all: layers disagree on heads per group; write the plan by hand");
        }
    }
    p.groups_per_layer = c.num_groups[0];
    p.keep_ffn = c.ffn_dim;
    p.layer_action.assign(c.num_layers, LayerAction::Keep);
    return p;
}

void PrunePlan::validate(const ModelConfig& c) const {
    if (keep_channels.empty()) {
        throw ValidationError("plan: keep_channels is empty");
    }
    for (std::size_t i = 0; i < keep_channels.size(); ++i) {
        if (keep_channels[i] >= c.hidden_dim) {
            throw ValidationError("plan: keep_channels entry " + std::to_string(keep_channels[i]) +
                                  " is outside hidden_dim " + std::to_string(c.hidden_dim));
        }
        if (i > 0 && keep_channels[i] <= keep_channels[i - 1]) {
            throw ValidationError("plan: keep_channels must be strictly increasing");
        }
    }
    if (heads_per_group < 1) {
        throw ValidationError("plan: heads_per_group must be >= 1");
    }
    if (groups_per_layer < 1) {
        throw ValidationError("plan: groups_per_layer must be >= 1");
    }
    if (keep_ffn.size() != c.num_layers || layer_action.size() != c.num_layers) {
        throw ValidationError("plan: keep_ffn and layer_action must have one entry per layer");
    }
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        if (heads_per_group > c.heads_per_group(l)) {
            throw ValidationError("plan: heads_per_group " + std::to_string(heads_per_group) +
                                  " exceeds layer " + std::to_string(l) + "'s " +
                                  std::to_string(c.heads_per_group(l)));
        }
        if (groups_per_layer > c.num_groups[l]) {
            throw ValidationError("plan: groups_per_layer " + std::to_string(groups_per_layer) +
                                  " exceeds layer " + std::to_string(l) + "'s " +
                                  std::to_string(c.num_groups[l]) + " KV groups");
        }
        if (keep_ffn[l] < 1 || keep_ffn[l] > c.ffn_dim[l]) {
            throw ValidationError("plan: keep_ffn[" + std::to_string(l) + "] = " +
                                  std::to_string(keep_ffn[l]) + " is outside [1, " +
                                  std::to_string(c.ffn_dim[l]) + "]");
        }
    }
    if (layer_action[0] == LayerAction::MergeIntoPredecessor) {
        throw ValidationError("plan: layer 0 cannot merge into a predecessor");
    }
    if (std::count(layer_action.begin(), layer_action.end(), LayerAction::Keep) == 0) {
        throw ValidationError("plan: at least one layer must be kept");
    }
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        if (layer_action[l] != LayerAction::MergeIntoPredecessor) continue;
        bool has_recipient = false;
        for (std::size_t r = l; r-- > 0;) {
            if (layer_action[r] == LayerAction::Keep) {
                has_recipient = true;
                break;
            }
        }
        if (!has_recipient) {
            throw ValidationError("plan: layer " + std::to_string(l) +
                                  " is merge-marked but no preceding layer is kept");
        }
    }
}

std::vector<std::size_t> select_top_k(std::span<const double> scores, std::size_t k) {
    if (k < 1 || k > scores.size()) {
        throw ValidationError("select_top_k: k = " + std::to_string(k) + " is outside [1, " +
                              std::to_string(scores.size()) + "]");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

WeightStore prune_channels(const WeightStore& w, std::span<const std::size_t> keep) {
    if (keep.empty()) {
        throw ValidationError("prune_channels: keep set is empty");
    }
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] >= w.config.hidden_dim) {
            throw ValidationError("prune_channels: channel " + std::to_string(keep[i]) +
                                  " is outside hidden_dim " + std::to_string(w.config.hidden_dim));
        }
        if (i > 0 && keep[i] <= keep[i - 1]) {
            throw ValidationError("prune_channels: keep set must be strictly increasing");
        }
    }
    WeightStore out;
    out.config = w.config;
    out.config.hidden_dim = keep.size();
    out.embedding = select_cols(w.embedding, keep);
    out.output_head = select_rows(w.output_head, keep);
    out.final_gamma = select_vec(w.final_gamma, keep);
    out.layers.reserve(w.layers.size());
    for (const LayerWeights& lw : w.layers) {
        LayerWeights nl;
        nl.pre_attn_gamma = select_vec(lw.pre_attn_gamma, keep);
        if (!lw.post_attn_gamma.empty()) nl.post_attn_gamma = select_vec(lw.post_attn_gamma, keep);
        nl.pre_ffn_gamma = select_vec(lw.pre_ffn_gamma, keep);
        if (!lw.post_ffn_gamma.empty()) nl.post_ffn_gamma = select_vec(lw.post_ffn_gamma, keep);
        nl.w_q = select_rows(lw.w_q, keep);
        nl.w_k = select_rows(lw.w_k, keep);
        nl.w_v = select_rows(lw.w_v, keep);
        nl.w_o = select_cols(lw.w_o, keep);
        nl.w_gate = select_rows(lw.w_gate, keep);
        nl.w_up = select_rows(lw.w_up, keep);
        nl.w_down = select_cols(lw.w_down, keep);
        out.layers.push_back(std::move(nl));
    }
    return out;
}

HeadPruneResult prune_heads(const WeightStore& w,
                            const std::vector<std::vector<double>>& head_scores,
                            std::size_t heads_per_group) {
    check_head_scores(w, head_scores);
    HeadPruneResult result;
    result.store = w;
    result.kept.resize(w.config.num_layers);
    for (std::size_t l = 0; l < w.config.num_layers; ++l) {
        const std::size_t hpg = w.config.heads_per_group(l);
        if (heads_per_group < 1 || heads_per_group > hpg) {
            throw ValidationError("prune_heads: q = " + std::to_string(heads_per_group) +
                                  " is outside [1, " + std::to_string(hpg) + "] for layer " +
                                  std::to_string(l));
        }
        std::vector<std::size_t>& kept = result.kept[l];
        for (std::size_t g = 0; g < w.config.num_groups[l]; ++g) {
            std::span<const double> group(head_scores[l].data() + g * hpg, hpg);
            for (std::size_t rel : select_top_k(group, heads_per_group)) {
                kept.push_back(g * hpg + rel);
            }
        }
        const auto cols = expand_blocks(kept, w.config.head_dim);
        LayerWeights& lw = result.store.layers[l];
        lw.w_q = select_cols(w.layers[l].w_q, cols);
        lw.w_o = select_rows(w.layers[l].w_o, cols);
        result.store.config.num_heads[l] = kept.size();
    }
    return result;
}

FfnPruneResult prune_ffn(const WeightStore& w,
                         const std::vector<std::vector<double>>& ffn_scores,
                         std::span<const std::size_t> keep_counts) {
    if (ffn_scores.size() != w.config.num_layers || keep_counts.size() != w.config.num_layers) {
        throw ShapeError("prune_ffn: scores and keep counts must have one entry per layer");
    }
    FfnPruneResult result;
    result.store = w;
    result.kept.resize(w.config.num_layers);
    for (std::size_t l = 0; l < w.config.num_layers; ++l) {
        if (ffn_scores[l].size() != w.config.ffn_dim[l]) {
            throw ShapeError("prune_ffn: layer " + std::to_string(l) + " scores cover " +
                             std::to_string(ffn_scores[l].size()) + " neurons, layer has " +
                             std::to_string(w.config.ffn_dim[l]));
        }
        if (keep_counts[l] < 1 || keep_counts[l] > w.config.ffn_dim[l]) {
            throw ValidationError("prune_ffn: keep count " + std::to_string(keep_counts[l]) +
                                  " is outside [1, " + std::to_string(w.config.ffn_dim[l]) +
                                  "] for layer " + std::to_string(l));
        }
        result.kept[l] = select_top_k(ffn_scores[l], keep_counts[l]);
        LayerWeights& lw = result.store.layers[l];
        lw.w_gate = select_cols(w.layers[l].w_gate, result.kept[l]);
        lw.w_up = select_cols(w.layers[l].w_up, result.kept[l]);
        lw.w_down = select_rows(w.layers[l].w_down, result.kept[l]);
        result.store.config.ffn_dim[l] = keep_counts[l];
    }
    return result;
}

WeightStore drop_layers(const WeightStore& w, std::span<const std::size_t> layer_ids) {
    std::vector<bool> remove(w.config.num_layers, false);
    for (std::size_t id : layer_ids) {
        if (id >= w.config.num_layers) {
            throw ValidationError("drop_layers: layer " + std::to_string(id) + " does not exist");
        }
        remove[id] = true;
    }
    const std::size_t removed = static_cast<std::size_t>(std::count(remove.begin(), remove.end(), true));
    if (removed == w.config.num_layers) {
        throw ValidationError("drop_layers: cannot drop every layer");
    }
    WeightStore out;
    out.config = w.config;
    erase_layer_entries(out.config, remove);
    out.embedding = w.embedding;
    out.final_gamma = w.final_gamma;
    out.output_head = w.output_head;
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        if (!remove[l]) out.layers.push_back(w.layers[l]);
    }
    return out;
}

namespace {

struct MergeRun {
    std::size_t recipient;
    std::vector<std::size_t> donors;
};

// Every merge-marked layer joins the run of its nearest preceding kept layer.
std::vector<MergeRun> find_merge_runs(const PrunePlan& plan) {
    std::map<std::size_t, std::vector<std::size_t>> runs;
    for (std::size_t l = 0; l < plan.layer_action.size(); ++l) {
        if (plan.layer_action[l] != LayerAction::MergeIntoPredecessor) continue;
        std::size_t recipient = 0;
        for (std::size_t r = l; r-- > 0;) {
            if (plan.layer_action[r] == LayerAction::Keep) {
                recipient = r;
                break;
            }
        }
        runs[recipient].push_back(l);
    }
    std::vector<MergeRun> out;
    for (auto& [recipient, donors] : runs) {
        out.push_back({recipient, std::move(donors)});
    }
    return out;
}

// Core of the cross-layer merge. `store` has already been head-pruned to q
// heads per group on every layer involved in a run; `kept_heads[l]` maps the
// surviving heads back to original ids and `original_scores` is indexed by
// those ids.
CrossLayerMergeResult merge_runs(const WeightStore& store,
                                 const std::vector<std::vector<std::size_t>>& kept_heads,
                                 const std::vector<std::vector<double>>& original_scores,
                                 const std::vector<MergeRun>& runs,
                                 std::size_t groups_per_layer) {
    CrossLayerMergeResult result;
    result.store = store;
    const std::size_t dh = store.config.head_dim;
    std::vector<bool> remove(store.config.num_layers, false);

    for (const MergeRun& run : runs) {
        std::vector<std::size_t> sources;
        sources.push_back(run.recipient);
        sources.insert(sources.end(), run.donors.begin(), run.donors.end());

        // Candidate order fixes tie-breaking: the recipient's groups first,
        // then each donor's in layer order.
        struct Candidate {
            std::size_t layer;
            std::size_t group;
            double score;
        };
        std::vector<Candidate> candidates;
        for (std::size_t o : sources) {
            const std::size_t q = store.config.heads_per_group(o);
            for (std::size_t g = 0; g < store.config.num_groups[o]; ++g) {
                double sum = 0.0;
                for (std::size_t i = 0; i < q; ++i) {
                    sum += original_scores[o][kept_heads[o][g * q + i]];
                }
                candidates.push_back({o, g, sum / static_cast<double>(q)});
            }
        }
        if (groups_per_layer > candidates.size()) {
            throw ValidationError("cross_layer_merge: groups_per_layer " +
                                  std::to_string(groups_per_layer) + " exceeds the " +
                                  std::to_string(candidates.size()) + " available groups");
        }
        std::vector<std::size_t> order(candidates.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return candidates[a].score > candidates[b].score;
        });
        order.resize(groups_per_layer);
        std::sort(order.begin(), order.end());

        MergeDecision decision;
        decision.recipient = run.recipient;
        decision.donors = run.donors;

        LayerWeights merged = store.layers[run.recipient];
        const std::size_t q = store.config.heads_per_group(run.recipient);
        merged.w_k = Tensor2D(store.layers[run.recipient].w_k.rows(), groups_per_layer * dh);
        merged.w_v = Tensor2D(merged.w_k.rows(), merged.w_k.cols());
        merged.w_q = Tensor2D(merged.w_k.rows(), groups_per_layer * q * dh);
        merged.w_o = Tensor2D(groups_per_layer * q * dh, store.layers[run.recipient].w_o.cols());

        for (std::size_t slot = 0; slot < order.size(); ++slot) {
            const Candidate& cand = candidates[order[slot]];
            const LayerWeights& src = store.layers[cand.layer];
            // K/V columns of the origin group.
            for (std::size_t r = 0; r < merged.w_k.rows(); ++r) {
                for (std::size_t i = 0; i < dh; ++i) {
                    merged.w_k.at(r, slot * dh + i) = src.w_k.at(r, cand.group * dh + i);
                    merged.w_v.at(r, slot * dh + i) = src.w_v.at(r, cand.group * dh + i);
                }
            }
            // Q columns / w_o rows of the group's surviving heads. In the
            // head-pruned store those occupy the contiguous block
            // [group*q, (group+1)*q).
            for (std::size_t i = 0; i < q * dh; ++i) {
                const std::size_t src_col = cand.group * q * dh + i;
                const std::size_t dst_col = slot * q * dh + i;
                for (std::size_t r = 0; r < merged.w_q.rows(); ++r) {
                    merged.w_q.at(r, dst_col) = src.w_q.at(r, src_col);
                }
                auto src_row = src.w_o.row(src_col);
                std::copy(src_row.begin(), src_row.end(), merged.w_o.row(dst_col).begin());
            }
            GroupChoice choice;
            choice.origin_layer = cand.layer;
            choice.group = cand.group;
            choice.score = cand.score;
            choice.kept_heads.assign(kept_heads[cand.layer].begin() + cand.group * q,
                                     kept_heads[cand.layer].begin() + (cand.group + 1) * q);
            decision.selected.push_back(std::move(choice));
        }

        result.store.layers[run.recipient] = std::move(merged);
        result.store.config.num_heads[run.recipient] = groups_per_layer * q;
        result.store.config.num_groups[run.recipient] = groups_per_layer;
        for (std::size_t donor : run.donors) {
            remove[donor] = true;
        }
        result.decisions.push_back(std::move(decision));
    }

    WeightStore pruned;
    pruned.config = result.store.config;
    erase_layer_entries(pruned.config, remove);
    pruned.embedding = std::move(result.store.embedding);
    pruned.final_gamma = std::move(result.store.final_gamma);
    pruned.output_head = std::move(result.store.output_head);
    for (std::size_t l = 0; l < result.store.layers.size(); ++l) {
        if (remove[l]) continue;
        pruned.layers.push_back(std::move(result.store.layers[l]));
        result.origin_layers.push_back(l);
        // Head provenance: merged layers pull from their selected groups,
        // untouched layers map to themselves.
        std::vector<HeadRef> refs;
        bool merged_here = false;
        for (const MergeDecision& d : result.decisions) {
            if (d.recipient != l) continue;
            merged_here = true;
            for (const GroupChoice& c : d.selected) {
                for (std::size_t head : c.kept_heads) {
                    refs.push_back({c.origin_layer, head});
                }
            }
        }
        if (!merged_here) {
            for (std::size_t head : kept_heads[l]) {
                refs.push_back({l, head});
            }
        }
        result.kept_heads.push_back(std::move(refs));
    }
    result.store = std::move(pruned);
    return result;
}

} // namespace

CrossLayerMergeResult cross_layer_merge(const WeightStore& w,
                                        const std::vector<std::vector<double>>& head_scores,
                                        const PrunePlan& plan) {
    plan.validate(w.config);
    check_head_scores(w, head_scores);
    const std::vector<MergeRun> runs = find_merge_runs(plan);
    if (runs.empty()) {
        throw ValidationError("cross_layer_merge: the plan marks no layer as merge-into-predecessor");
    }

    // Head-prune only the layers involved in a run; everything else keeps
    // its full head set.
    WeightStore pruned = w;
    std::vector<std::vector<std::size_t>> kept(w.config.num_layers);
    for (std::size_t l = 0; l < w.config.num_layers; ++l) {
        kept[l].resize(w.config.num_heads[l]);
        std::iota(kept[l].begin(), kept[l].end(), 0);
    }
    std::set<std::size_t> involved;
    for (const MergeRun& run : runs) {
        involved.insert(run.recipient);
        involved.insert(run.donors.begin(), run.donors.end());
    }
    for (std::size_t l : involved) {
        const std::size_t hpg = w.config.heads_per_group(l);
        std::vector<std::size_t>& ids = kept[l];
        ids.clear();
        for (std::size_t g = 0; g < w.config.num_groups[l]; ++g) {
            std::span<const double> group(head_scores[l].data() + g * hpg, hpg);
            for (std::size_t rel : select_top_k(group, plan.heads_per_group)) {
                ids.push_back(g * hpg + rel);
            }
        }
        const auto cols = expand_blocks(ids, w.config.head_dim);
        pruned.layers[l].w_q = select_cols(w.layers[l].w_q, cols);
        pruned.layers[l].w_o = select_rows(w.layers[l].w_o, cols);
        pruned.config.num_heads[l] = ids.size();
    }

    return merge_runs(pruned, kept, head_scores, runs, plan.groups_per_layer);
}

RescaleResult rescale_gamma_norms(const WeightStore& before_channel_prune, const WeightStore& after) {
    const ModelConfig& bc = before_channel_prune.config;
    const ModelConfig& ac = after.config;
    if (bc.num_layers != ac.num_layers || bc.postnorm_attn != ac.postnorm_attn ||
        bc.postnorm_ffn != ac.postnorm_ffn) {
        throw ShapeError("rescale_gamma_norms: models have different layer structure");
    }
    RescaleResult result;
    result.store = after;
    auto rescale = [&](const std::vector<float>& orig, std::vector<float>& pruned,
                       const std::string& site) {
        if (pruned.size() > orig.size()) {
            throw ShapeError("rescale_gamma_norms: " + site + " grew from " +
                             std::to_string(orig.size()) + " to " + std::to_string(pruned.size()) +
                             " entries");
        }
        const double denom = l2_norm(pruned);
        if (denom == 0.0) {
            throw NumericError("rescale_gamma_norms: every retained gamma entry of " + site +
                               " is zero");
        }
        const double c = l2_norm(orig) / denom;
        for (float& v : pruned) {
            v = static_cast<float>(c * static_cast<double>(v));
        }
        result.rescales.push_back({site, c});
    };
    for (std::size_t l = 0; l < ac.num_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        const LayerWeights& bw = before_channel_prune.layers[l];
        LayerWeights& aw = result.store.layers[l];
        rescale(bw.pre_attn_gamma, aw.pre_attn_gamma, p + "pre_attn");
        if (ac.postnorm_attn[l]) rescale(bw.post_attn_gamma, aw.post_attn_gamma, p + "post_attn");
        rescale(bw.pre_ffn_gamma, aw.pre_ffn_gamma, p + "pre_ffn");
        if (ac.postnorm_ffn[l]) rescale(bw.post_ffn_gamma, aw.post_ffn_gamma, p + "post_ffn");
    }
    rescale(before_channel_prune.final_gamma, result.store.final_gamma, "final");
    return result;
}

namespace {

void gamma_pair_stats(const std::vector<float>& orig, std::span<const std::size_t> keep,
                      const std::vector<float>& final_gamma, const std::string& site,
                      std::vector<GammaSiteStats>& out) {
    auto mean_std = [](std::span<const float> v) {
        double mean = 0.0;
        for (float x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (float x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        return std::pair<double, double>(mean, std::sqrt(var));
    };
    const std::vector<float> before = select_vec(orig, keep);
    auto [bm, bs] = mean_std(before);
    auto [am, as] = mean_std(final_gamma);
    out.push_back({site, bm, bs, am, as});
}

} // namespace

SurgeryResult apply_plan(const WeightStore& w, const ActivationStats& stats, const PrunePlan& plan) {
    plan.validate(w.config);
    if (stats.config != w.config) {
        throw ShapeError("apply_plan: activation stats were collected on a different model shape");
    }
    const auto scores_head = head_scores(stats);
    const auto scores_ffn = ffn_scores(stats);

    SurgeryReport report;
    report.keep_channels.assign(plan.keep_channels.begin(), plan.keep_channels.end());

    // 1. Head pruning everywhere; the surviving scores feed the merge step.
    HeadPruneResult hp = prune_heads(w, scores_head, plan.heads_per_group);

    // 2. Cross-layer merges.
    WeightStore current;
    std::vector<std::size_t> origin(w.config.num_layers);
    std::iota(origin.begin(), origin.end(), 0);
    std::vector<std::vector<HeadRef>> kept_heads;
    const auto runs = find_merge_runs(plan);
    if (!runs.empty()) {
        CrossLayerMergeResult mr =
            merge_runs(hp.store, hp.kept, scores_head, runs, plan.groups_per_layer);
        current = std::move(mr.store);
        origin = std::move(mr.origin_layers);
        kept_heads = std::move(mr.kept_heads);
        report.merges = std::move(mr.decisions);
    } else {
        current = std::move(hp.store);
        for (std::size_t l = 0; l < w.config.num_layers; ++l) {
            std::vector<HeadRef> refs;
            for (std::size_t head : hp.kept[l]) refs.push_back({l, head});
            kept_heads.push_back(std::move(refs));
        }
    }

    // 3. Plain layer drops, translated to post-merge indices.
    std::vector<std::size_t> drop_ids;
    for (std::size_t pos = 0; pos < origin.size(); ++pos) {
        if (plan.layer_action[origin[pos]] == LayerAction::Drop) {
            drop_ids.push_back(pos);
        }
    }
    if (!drop_ids.empty()) {
        current = drop_layers(current, drop_ids);
        std::vector<std::size_t> new_origin;
        std::vector<std::vector<HeadRef>> new_kept;
        for (std::size_t pos = 0; pos < origin.size(); ++pos) {
            if (plan.layer_action[origin[pos]] != LayerAction::Drop) {
                new_origin.push_back(origin[pos]);
                new_kept.push_back(std::move(kept_heads[pos]));
            }
        }
        origin = std::move(new_origin);
        kept_heads = std::move(new_kept);
    }
    report.origin_layers = origin;
    report.kept_heads = std::move(kept_heads);

    // 4. FFN pruning; budgets and scores follow the surviving origin layers.
    std::vector<std::vector<double>> ffn_for_current;
    std::vector<std::size_t> counts;
    for (std::size_t o : origin) {
        ffn_for_current.push_back(scores_ffn[o]);
        counts.push_back(plan.keep_ffn[o]);
    }
    FfnPruneResult fp = prune_ffn(current, ffn_for_current, counts);
    current = std::move(fp.store);
    report.kept_ffn = std::move(fp.kept);

    // 5/6. Channel pruning, then gamma-norm restoration against the
    // pre-channel-prune gammas (identical to the original model's, since no
    // earlier step touches them).
    WeightStore before_channels = current;
    current = prune_channels(current, plan.keep_channels);
    RescaleResult rr = rescale_gamma_norms(before_channels, current);
    current = std::move(rr.store);
    report.rescales = std::move(rr.rescales);

    // Gamma distribution report: "before" is the original gamma restricted to
    // the retained channels, "after" the final rescaled gamma.
    for (std::size_t l = 0; l < current.config.num_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        const LayerWeights& ow = w.layers[origin[l]];
        const LayerWeights& nw = current.layers[l];
        gamma_pair_stats(ow.pre_attn_gamma, plan.keep_channels, nw.pre_attn_gamma, p + "pre_attn",
                         report.gamma);
        if (current.config.postnorm_attn[l]) {
            gamma_pair_stats(ow.post_attn_gamma, plan.keep_channels, nw.post_attn_gamma,
                             p + "post_attn", report.gamma);
        }
        gamma_pair_stats(ow.pre_ffn_gamma, plan.keep_channels, nw.pre_ffn_gamma, p + "pre_ffn",
                         report.gamma);
        if (current.config.postnorm_ffn[l]) {
            gamma_pair_stats(ow.post_ffn_gamma, plan.keep_channels, nw.post_ffn_gamma, p + "post_ffn",
                             report.gamma);
        }
    }
    gamma_pair_stats(w.final_gamma, plan.keep_channels, current.final_gamma, "final", report.gamma);

    current.validate();
    report.final_config = current.config;
    return {std::move(current), std::move(report)};
}

ActivationStats restrict_stats(const ActivationStats& s, const SurgeryReport& report) {
    ActivationStats out = ActivationStats::zeros(report.final_config);
    if (!report.origin_layers.empty() &&
        *std::max_element(report.origin_layers.begin(), report.origin_layers.end()) >=
            s.config.num_layers) {
        throw ShapeError("restrict_stats: report references layers the stats do not cover");
    }
    std::map<std::string, std::size_t> site_index;
    for (std::size_t i = 0; i < s.sites.size(); ++i) {
        site_index[s.sites[i].name] = i;
    }
    auto restrict_site = [&](const std::string& from, NormSiteStats& dst) {
        const auto it = site_index.find(from);
        if (it == site_index.end()) {
            throw ShapeError("restrict_stats: stats have no site '" + from + "'");
        }
        const auto& src = s.sites[it->second].channel_abs_sum;
        for (std::size_t i = 0; i < report.keep_channels.size(); ++i) {
            dst.channel_abs_sum[i] = src[report.keep_channels[i]];
        }
    };
    std::size_t site = 0;
    for (std::size_t l = 0; l < report.final_config.num_layers; ++l) {
        const std::size_t o = report.origin_layers[l];
        const std::string p = "layers." + std::to_string(o) + ".";
        restrict_site(p + "pre_attn", out.sites[site++]);
        if (report.final_config.postnorm_attn[l]) restrict_site(p + "post_attn", out.sites[site++]);
        restrict_site(p + "pre_ffn", out.sites[site++]);
        if (report.final_config.postnorm_ffn[l]) restrict_site(p + "post_ffn", out.sites[site++]);

        LayerActivationStats& dst = out.layers[l];
        const LayerActivationStats& src = s.layers[o];
        for (std::size_t j = 0; j < report.kept_heads[l].size(); ++j) {
            const HeadRef& ref = report.kept_heads[l][j];
            dst.head_l2_sum[j] = s.layers[ref.layer].head_l2_sum[ref.head];
        }
        for (std::size_t m = 0; m < report.kept_ffn[l].size(); ++m) {
            dst.ffn_abs_sum[m] = src.ffn_abs_sum[report.kept_ffn[l][m]];
        }
        dst.cosine_sim_sum = src.cosine_sim_sum;
        dst.token_count = src.token_count;
        // The stored inverse-scale statistic is 1/sqrt(|x|²/d + eps) with the
        // original hidden width inside; re-express it for the pruned width.
        // Exact when the dropped channels carry negligible mass.
        const double width_ratio =
            std::sqrt(static_cast<double>(report.keep_channels.size()) /
                      static_cast<double>(s.config.hidden_dim));
        dst.attn_inv_scale_sum = src.attn_inv_scale_sum * width_ratio;
        dst.attn_site_token_count = src.attn_site_token_count;
        dst.ffn_inv_scale_sum = src.ffn_inv_scale_sum * width_ratio;
        dst.ffn_site_token_count = src.ffn_site_token_count;
    }
    restrict_site("final", out.sites[site]);
    out.token_count = s.token_count;
    return out;
}

} // namespace prunekit
