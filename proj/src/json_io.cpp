#include "prunekit/json_io.hpp"

#include "prunekit/errors.hpp"

#include <fstream>

namespace prunekit {

using nlohmann::json;

json config_json(const ModelConfig& c) {
    return json{
        {"num_layers", c.num_layers},
        {"hidden_dim", c.hidden_dim},
        {"head_dim", c.head_dim},
        {"vocab_size", c.vocab_size},
        {"eps", c.eps},
        {"num_heads", c.num_heads},
        {"num_groups", c.num_groups},
        {"ffn_dim", c.ffn_dim},
        {"postnorm_attn", c.postnorm_attn},
        {"postnorm_ffn", c.postnorm_ffn},
    };
}

ModelConfig config_from_json_value(const json& j) {
    ModelConfig c;
    try {
        c.num_layers = j.at("num_layers").get<std::size_t>();
        c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        c.head_dim = j.at("head_dim").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.eps = j.at("eps").get<float>();
        c.num_heads = j.at("num_heads").get<std::vector<std::size_t>>();
        c.num_groups = j.at("num_groups").get<std::vector<std::size_t>>();
        c.ffn_dim = j.at("ffn_dim").get<std::vector<std::size_t>>();
        c.postnorm_attn = j.at("postnorm_attn").get<std::vector<bool>>();
        c.postnorm_ffn = j.at("postnorm_ffn").get<std::vector<bool>>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config json: ") + e.what());
    }
    c.validate();
    return c;
}

json stats_json(const ActivationStats& s) {
    json sites = json::array();
    for (const auto& site : s.sites) {
        sites.push_back(json{{"name", site.name}, {"channel_abs_sum", site.channel_abs_sum}});
    }
    json layers = json::array();
    for (const auto& l : s.layers) {
        layers.push_back(json{
            {"head_l2_sum", l.head_l2_sum},
            {"ffn_abs_sum", l.ffn_abs_sum},
            {"cosine_sim_sum", l.cosine_sim_sum},
            {"token_count", l.token_count},
            {"attn_inv_scale_sum", l.attn_inv_scale_sum},
            {"attn_site_token_count", l.attn_site_token_count},
            {"ffn_inv_scale_sum", l.ffn_inv_scale_sum},
            {"ffn_site_token_count", l.ffn_site_token_count},
        });
    }
    return json{{"config", config_json(s.config)},
                {"sites", sites},
                {"layers", layers},
                {"token_count", s.token_count}};
}

json scores_json(const ImportanceScores& s) {
    return json{{"channel", s.channel}, {"head", s.head}, {"ffn", s.ffn}, {"layer", s.layer}};
}

namespace {

std::string action_name(LayerAction a) {
    switch (a) {
        case LayerAction::Keep: return "keep";
        case LayerAction::Drop: return "drop";
        case LayerAction::MergeIntoPredecessor: return "merge";
    }
    return "keep";
}

LayerAction action_from_name(const std::string& name) {
    if (name == "keep") return LayerAction::Keep;
    if (name == "drop") return LayerAction::Drop;
    if (name == "merge") return LayerAction::MergeIntoPredecessor;
    throw ValidationError("plan json: unknown layer action '" + name + "'");
}

} // namespace

json plan_json(const PrunePlan& p) {
    json actions = json::array();
    for (LayerAction a : p.layer_action) actions.push_back(action_name(a));
    return json{{"keep_channels", p.keep_channels},
                {"heads_per_group", p.heads_per_group},
                {"groups_per_layer", p.groups_per_layer},
                {"keep_ffn", p.keep_ffn},
                {"layer_action", actions}};
}

PrunePlan plan_from_json_value(const json& j) {
    PrunePlan p;
    try {
        p.keep_channels = j.at("keep_channels").get<std::vector<std::size_t>>();
        p.heads_per_group = j.at("heads_per_group").get<std::size_t>();
        p.groups_per_layer = j.at("groups_per_layer").get<std::size_t>();
        p.keep_ffn = j.at("keep_ffn").get<std::vector<std::size_t>>();
        for (const auto& a : j.at("layer_action")) {
            p.layer_action.push_back(action_from_name(a.get<std::string>()));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("plan json: ") + e.what());
    }
    return p;
}

PrunePlan load_plan(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("load_plan: cannot open '" + path + "'");
    }
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw IoError("load_plan: '" + path + "' is not valid JSON: " + e.what());
    }
    return plan_from_json_value(j);
}

json surgery_report_json(const SurgeryReport& r) {
    json gamma = json::array();
    for (const auto& g : r.gamma) {
        gamma.push_back(json{{"site", g.site},
                             {"before_mean", g.before_mean},
                             {"before_std", g.before_std},
                             {"after_mean", g.after_mean},
                             {"after_std", g.after_std}});
    }
    json rescales = json::array();
    for (const auto& s : r.rescales) {
        rescales.push_back(json{{"site", s.site}, {"scale", s.scale}});
    }
    json merges = json::array();
    for (const auto& m : r.merges) {
        json selected = json::array();
        for (const auto& c : m.selected) {
            selected.push_back(json{{"origin_layer", c.origin_layer},
                                    {"group", c.group},
                                    {"score", c.score},
                                    {"kept_heads", c.kept_heads}});
        }
        merges.push_back(json{{"recipient", m.recipient}, {"donors", m.donors}, {"selected", selected}});
    }
    json kept_heads = json::array();
    for (const auto& layer : r.kept_heads) {
        json refs = json::array();
        for (const auto& ref : layer) {
            refs.push_back(json{{"layer", ref.layer}, {"head", ref.head}});
        }
        kept_heads.push_back(refs);
    }
    return json{{"gamma", gamma},
                {"rescales", rescales},
                {"merges", merges},
                {"origin_layers", r.origin_layers},
                {"kept_heads", kept_heads},
                {"kept_ffn", r.kept_ffn},
                {"keep_channels", r.keep_channels},
                {"final_config", config_json(r.final_config)}};
}

json absorption_report_json(const AbsorptionReport& r) {
    json sites = json::array();
    for (const auto& s : r.sites) {
        sites.push_back(
            json{{"site", s.site}, {"inv_scale", s.inv_scale}, {"token_count", s.token_count}});
    }
    json out{{"sites", sites}};
    if (r.probe_max_rel_deviation >= 0.0) {
        out["probe_max_rel_deviation"] = r.probe_max_rel_deviation;
    }
    return out;
}

json cost_json(const CostEstimate& c) {
    return json{{"param_count", c.param_count},
                {"flops_per_token", c.flops_per_token},
                {"norm_flops_per_token", c.norm_flops_per_token},
                {"relative_speed", c.relative_speed}};
}

json eval_report_json(const EvalReport& r) {
    return json{{"kd_loss", r.kd_loss}, {"perplexity", r.perplexity}, {"cost", cost_json(r.cost)}};
}

void write_json(const json& j, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw IoError("write_json: cannot open '" + path + "' for writing");
    }
    f << j.dump(2) << "\n";
    if (!f) {
        throw IoError("write_json: write to '" + path + "' failed");
    }
}

} // namespace prunekit
