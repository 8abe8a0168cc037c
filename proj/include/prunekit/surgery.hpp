#pragma once

#include "prunekit/calibrate.hpp"
#include "prunekit/model.hpp"

#include <span>
#include <string>
#include <vector>

namespace prunekit {

enum class LayerAction { Keep, Drop, MergeIntoPredecessor };

/// Declarative target architecture, expressed against the original model:
/// keep_ffn and layer_action are indexed by original layer.
struct PrunePlan {
    std::vector<std::size_t> keep_channels; // strictly increasing indices into d
    std::size_t heads_per_group = 0;        // q, query heads kept per KV group
    std::size_t groups_per_layer = 0;       // KV groups kept in a merged layer
    std::vector<std::size_t> keep_ffn;      // neurons kept, per original layer
    std::vector<LayerAction> layer_action;  // per original layer

    /// Identity plan: retains every channel, head, neuron and layer.
    static PrunePlan keep_all(const ModelConfig& c);

    void validate(const ModelConfig& c) const;
};

struct GammaSiteStats {
    std::string site;
    double before_mean; // over the original gamma entries at the retained channels
    double before_std;
    double after_mean;  // over the final (pruned, rescaled) gamma
    double after_std;
};

struct GammaRescale {
    std::string site;
    double scale; // > 0
};

struct GroupChoice {
    std::size_t origin_layer;
    std::size_t group;
    double score;
    std::vector<std::size_t> kept_heads; // original head ids within origin_layer
};

struct MergeDecision {
    std::size_t recipient;             // original layer index
    std::vector<std::size_t> donors;   // original layer indices, ascending
    std::vector<GroupChoice> selected; // in merged-layer group order
};

/// Origin of one query head of a post-surgery layer.
struct HeadRef {
    std::size_t layer; // original layer
    std::size_t head;  // original head id
    bool operator==(const HeadRef&) const = default;
};

struct SurgeryReport {
    std::vector<GammaSiteStats> gamma;
    std::vector<GammaRescale> rescales;
    std::vector<MergeDecision> merges;
    std::vector<std::size_t> origin_layers;          // surviving layer -> original index
    std::vector<std::vector<HeadRef>> kept_heads;    // per surviving layer, new head order
    std::vector<std::vector<std::size_t>> kept_ffn;  // per surviving layer, original neuron ids
    std::vector<std::size_t> keep_channels;
    ModelConfig final_config;
};

/// Indices of the k largest scores, ties broken toward the lower index,
/// returned in ascending order.
std::vector<std::size_t> select_top_k(std::span<const double> scores, std::size_t k);

/// Restricts every d-sized axis to `keep`: embedding columns, output-head
/// rows, all gamma vectors, the input rows of w_q/w_k/w_v/w_gate/w_up and
/// the output columns of w_o/w_down. Gamma rescaling is a separate step.
WeightStore prune_channels(const WeightStore& w, std::span<const std::size_t> keep);

struct HeadPruneResult {
    WeightStore store;
    std::vector<std::vector<std::size_t>> kept; // per layer, ascending original head ids
};

/// Keeps the q highest-scoring query heads inside each KV group. w_q columns
/// and w_o rows shrink to the kept heads' blocks; w_k/w_v keep all groups.
HeadPruneResult prune_heads(const WeightStore& w,
                            const std::vector<std::vector<double>>& head_scores,
                            std::size_t heads_per_group);

struct FfnPruneResult {
    WeightStore store;
    std::vector<std::vector<std::size_t>> kept; // per layer, ascending original neuron ids
};

FfnPruneResult prune_ffn(const WeightStore& w,
                         const std::vector<std::vector<double>>& ffn_scores,
                         std::span<const std::size_t> keep_counts);

WeightStore drop_layers(const WeightStore& w, std::span<const std::size_t> layer_ids);

struct CrossLayerMergeResult {
    WeightStore store;
    std::vector<MergeDecision> decisions;
    std::vector<std::size_t> origin_layers;
    std::vector<std::vector<HeadRef>> kept_heads; // per surviving layer
};

/// Merges each merge-marked layer's attention into the nearest preceding
/// kept layer: per-group head pruning in the recipient and its donors, group
/// scores as the mean of surviving head scores, one joint ranking per
/// recipient, and the top groups_per_layer groups transplanted verbatim
/// (K/V columns, surviving-head Q columns and w_o rows) from their origin
/// layers. Donor layers are removed; drop-marked layers are left for
/// drop_layers. The merged layer keeps its own norms and FFN.
CrossLayerMergeResult cross_layer_merge(const WeightStore& w,
                                        const std::vector<std::vector<double>>& head_scores,
                                        const PrunePlan& plan);

struct RescaleResult {
    WeightStore store;
    std::vector<GammaRescale> rescales;
};

/// Restores each norm layer's gamma L2 norm after channel pruning:
/// gamma_new = (|gamma_before|₂ / |gamma_after|₂) · gamma_after. Throws
/// NumericError when every retained gamma entry of a site is zero.
RescaleResult rescale_gamma_norms(const WeightStore& before_channel_prune,
                                  const WeightStore& after);

struct SurgeryResult {
    WeightStore store;
    SurgeryReport report;
};

/// Runs the whole plan in a fixed order: head pruning, cross-layer merges,
/// plain layer drops, FFN pruning, channel pruning, gamma-norm rescaling.
SurgeryResult apply_plan(const WeightStore& w, const ActivationStats& stats, const PrunePlan& plan);

/// Projects calibration statistics onto a post-surgery model using the
/// report's kept-index lists, so absorption can reuse the original
/// calibration run.
ActivationStats restrict_stats(const ActivationStats& s, const SurgeryReport& report);

} // namespace prunekit
