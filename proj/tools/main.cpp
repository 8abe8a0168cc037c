#include "prunekit/checkpoint.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/evaluate.hpp"
#include "prunekit/importance.hpp"
#include "prunekit/json_io.hpp"
#include "prunekit/normfuse.hpp"
#include "prunekit/surgery.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using namespace prunekit;
using nlohmann::json;

namespace {

// Exit codes: 0 success, 2 usage, 3 validation/io, 4 numeric invariant.
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumeric = 4;

struct Options {
    std::string checkpoint;
    std::string teacher;
    std::string calib;
    std::string plan;
    std::string sites = "all";
    std::string out;
    std::string report;
    std::string reference;
    std::uint64_t seed = 0;
    std::size_t seq_len = 1024;
    // init-toy shape
    std::size_t layers = 4;
    std::size_t hidden = 16;
    std::size_t heads = 4;
    std::size_t groups = 2;
    std::size_t head_dim = 4;
    std::size_t ffn = 32;
    std::size_t vocab = 64;
    float eps = 1e-6f;
};

CalibrationSet resolve_calib(const Options& opt, const ModelConfig& config) {
    if (opt.calib.empty() || opt.calib == "builtin") {
        return builtin_calibration(opt.seed, config.vocab_size);
    }
    if (opt.calib.rfind("builtin:", 0) == 0) {
        return builtin_calibration(std::stoull(opt.calib.substr(8)), config.vocab_size);
    }
    return load_calibration(opt.calib);
}

std::string report_path(const Options& opt, const std::string& fallback) {
    return opt.report.empty() ? fallback : opt.report;
}

int cmd_init_toy(const Options& opt) {
    const ModelConfig config = ModelConfig::uniform(opt.layers, opt.hidden, opt.heads, opt.groups,
                                                    opt.head_dim, opt.ffn, opt.vocab, opt.eps);
    const WeightStore w = random_init(config, opt.seed);
    save_checkpoint(w, opt.out);
    CostEstimate cost = estimate_cost(config, opt.seq_len);
    std::cout << "init-toy: wrote " << opt.out << " (" << cost.param_count << " params, L="
              << config.num_layers << ", d=" << config.hidden_dim << ", V=" << config.vocab_size
              << ")\n";
    return 0;
}

int cmd_calibrate(const Options& opt) {
    const WeightStore w = load_checkpoint(opt.checkpoint);
    const CalibrationSet calib = resolve_calib(opt, w.config);
    const ActivationStats stats = collect(w, calib);
    const std::string path = report_path(opt, "stats.json");
    write_json(stats_json(stats), path);
    std::cout << "calibrate: " << stats.token_count << " tokens over " << calib.sequences.size()
              << " sequences (" << calib.provenance << ") -> " << path << "\n";
    return 0;
}

int cmd_score(const Options& opt) {
    const WeightStore w = load_checkpoint(opt.checkpoint);
    const CalibrationSet calib = resolve_calib(opt, w.config);
    const ImportanceScores scores = compute_scores(collect(w, calib));
    const std::string path = report_path(opt, "scores.json");
    write_json(scores_json(scores), path);
    std::cout << "score: " << scores.channel.size() << " channels, " << scores.layer.size()
              << " layers -> " << path << "\n";
    return 0;
}

int cmd_prune(const Options& opt) {
    const WeightStore w = load_checkpoint(opt.checkpoint);
    const CalibrationSet calib = resolve_calib(opt, w.config);
    const ActivationStats stats = collect(w, calib);
    const PrunePlan plan = load_plan(opt.plan);
    SurgeryResult result = apply_plan(w, stats, plan);
    save_checkpoint(result.store, opt.out);
    const std::string path = report_path(opt, "surgery_report.json");
    write_json(surgery_report_json(result.report), path);
    std::cout << "prune: " << w.config.num_layers << " -> " << result.store.config.num_layers
              << " layers, d " << w.config.hidden_dim << " -> " << result.store.config.hidden_dim
              << ", wrote " << opt.out << " and " << path << "\n";
    return 0;
}

int cmd_absorb(const Options& opt) {
    const WeightStore w = load_checkpoint(opt.checkpoint);
    const CalibrationSet calib = resolve_calib(opt, w.config);
    const ActivationStats stats = collect(w, calib);
    const auto sites = parse_sites(opt.sites, w.config);
    auto [absorbed, report] = absorb(w, stats, sites);
    report.probe_max_rel_deviation = verify_absorption(w, absorbed, calib);
    save_checkpoint(absorbed, opt.out);
    const std::string path = report_path(opt, "absorption_report.json");
    write_json(absorption_report_json(report), path);
    std::cout << "absorb: " << report.sites.size() << " sites, probe max rel deviation "
              << report.probe_max_rel_deviation << ", wrote " << opt.out << " and " << path << "\n";
    return 0;
}

int cmd_eval(const Options& opt) {
    const WeightStore teacher = load_checkpoint(opt.teacher);
    const WeightStore student = load_checkpoint(opt.checkpoint);
    const CalibrationSet calib = resolve_calib(opt, student.config);
    EvalReport report;
    report.kd_loss = kd_loss(teacher, student, calib);
    report.perplexity = perplexity(student, calib);
    report.cost = estimate_cost(student.config, opt.seq_len, teacher.config);
    const std::string path = report_path(opt, "eval.json");
    write_json(eval_report_json(report), path);
    std::cout << "eval:\n"
              << "  kd_loss         " << report.kd_loss << "\n"
              << "  perplexity      " << report.perplexity << "\n"
              << "  param_count     " << report.cost.param_count << "\n"
              << "  flops_per_token " << report.cost.flops_per_token << "\n"
              << "  relative_speed  " << report.cost.relative_speed << "\n";
    return 0;
}

int cmd_estimate(const Options& opt) {
    const WeightStore w = load_checkpoint(opt.checkpoint);
    CostEstimate cost;
    if (opt.reference.empty()) {
        cost = estimate_cost(w.config, opt.seq_len);
    } else {
        const WeightStore ref = load_checkpoint(opt.reference);
        cost = estimate_cost(w.config, opt.seq_len, ref.config);
    }
    const std::string path = report_path(opt, "cost.json");
    write_json(cost_json(cost), path);
    std::cout << "estimate: " << cost.param_count << " params, " << cost.flops_per_token
              << " flops/token at context " << opt.seq_len << ", relative speed "
              << cost.relative_speed << "\n";
    return 0;
}

int cmd_verify(const Options& opt) {
    const WeightStore w = load_checkpoint(opt.checkpoint);
    // load_checkpoint already validated shapes and finiteness; run a token
    // through to prove the model is forwardable.
    const std::int32_t probe[] = {0};
    const auto result = forward(w, probe);
    if (result.logits.cols() != w.config.vocab_size) {
        throw NumericError("verify: logits have unexpected width");
    }
    std::cout << "verify: " << opt.checkpoint << " ok (" << w.config.num_layers << " layers, d="
              << w.config.hidden_dim << ")\n";
    return 0;
}

int cmd_pipeline(const Options& opt) {
    fs::create_directories(opt.out);
    const auto artifact = [&](const std::string& name) { return (fs::path(opt.out) / name).string(); };

    const WeightStore teacher = load_checkpoint(opt.checkpoint);
    const CalibrationSet calib = resolve_calib(opt, teacher.config);

    // One calibration run feeds scoring, surgery and absorption.
    const ActivationStats stats = collect(teacher, calib);
    write_json(stats_json(stats), artifact("stats.json"));
    write_json(scores_json(compute_scores(stats)), artifact("scores.json"));

    const PrunePlan plan = load_plan(opt.plan);
    SurgeryResult surgery = apply_plan(teacher, stats, plan);
    write_json(surgery_report_json(surgery.report), artifact("surgery_report.json"));

    WeightStore student = std::move(surgery.store);
    const auto sites = parse_sites(opt.sites, student.config);
    if (!sites.empty()) {
        const ActivationStats restricted = restrict_stats(stats, surgery.report);
        auto [absorbed, report] = absorb(student, restricted, sites);
        report.probe_max_rel_deviation = verify_absorption(student, absorbed, calib);
        student = std::move(absorbed);
        write_json(absorption_report_json(report), artifact("absorption_report.json"));
    }
    save_checkpoint(student, artifact("student.pgl"));

    EvalReport eval;
    eval.kd_loss = kd_loss(teacher, student, calib);
    eval.perplexity = perplexity(student, calib);
    eval.cost = estimate_cost(student.config, opt.seq_len, teacher.config);
    write_json(eval_report_json(eval), artifact("eval.json"));

    // Final invariant re-check on the artifact that was written.
    const WeightStore reloaded = load_checkpoint(artifact("student.pgl"));
    reloaded.validate();

    std::cout << "pipeline: " << opt.out << "/student.pgl\n"
              << "  layers " << teacher.config.num_layers << " -> " << student.config.num_layers
              << ", d " << teacher.config.hidden_dim << " -> " << student.config.hidden_dim << "\n"
              << "  kd_loss " << eval.kd_loss << ", perplexity " << eval.perplexity
              << ", relative_speed " << eval.cost.relative_speed << "\n";
    return 0;
}

void print_error(const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Structured pruning toolkit for sandwich-norm GQA transformers"};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", opt.seed, "Seed for builtin calibration data");
        cmd->add_option("--report", opt.report, "Report JSON path");
    };

    CLI::App* init = app.add_subcommand("init-toy", "Write a seeded random toy checkpoint");
    init->add_option("--out", opt.out, "Output checkpoint (.pgl)")->required();
    init->add_option("--layers", opt.layers, "Layer count");
    init->add_option("--hidden", opt.hidden, "Hidden dimension");
    init->add_option("--heads", opt.heads, "Query heads per layer");
    init->add_option("--groups", opt.groups, "KV groups per layer");
    init->add_option("--head-dim", opt.head_dim, "Head dimension");
    init->add_option("--ffn", opt.ffn, "FFN intermediate dimension");
    init->add_option("--vocab", opt.vocab, "Vocabulary size");
    init->add_option("--eps", opt.eps, "RMSNorm epsilon");
    init->add_option("--seed", opt.seed, "Init seed");

    CLI::App* calibrate = app.add_subcommand("calibrate", "Collect activation statistics");
    calibrate->add_option("--checkpoint", opt.checkpoint)->required();
    calibrate->add_option("--calib", opt.calib, "Token file, 'builtin' or 'builtin:SEED'");
    add_common(calibrate);

    CLI::App* score = app.add_subcommand("score", "Compute importance scores");
    score->add_option("--checkpoint", opt.checkpoint)->required();
    score->add_option("--calib", opt.calib);
    add_common(score);

    CLI::App* prune = app.add_subcommand("prune", "Apply a prune plan");
    prune->add_option("--checkpoint", opt.checkpoint)->required();
    prune->add_option("--calib", opt.calib);
    prune->add_option("--plan", opt.plan, "PrunePlan JSON")->required();
    prune->add_option("--out", opt.out, "Output checkpoint")->required();
    add_common(prune);

    CLI::App* absorb_cmd = app.add_subcommand("absorb", "Absorb post-norms into projections");
    absorb_cmd->add_option("--checkpoint", opt.checkpoint)->required();
    absorb_cmd->add_option("--calib", opt.calib);
    absorb_cmd->add_option("--sites", opt.sites, "all | attn | ffn | layer:kind list");
    absorb_cmd->add_option("--out", opt.out, "Output checkpoint")->required();
    add_common(absorb_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "KD loss, perplexity and cost vs a teacher");
    eval_cmd->add_option("--checkpoint", opt.checkpoint, "Student checkpoint")->required();
    eval_cmd->add_option("--teacher", opt.teacher)->required();
    eval_cmd->add_option("--calib", opt.calib);
    eval_cmd->add_option("--seq-len", opt.seq_len, "Context length for the cost model");
    add_common(eval_cmd);

    CLI::App* estimate = app.add_subcommand("estimate", "Analytic cost estimate");
    estimate->add_option("--checkpoint", opt.checkpoint)->required();
    estimate->add_option("--reference", opt.reference, "Reference checkpoint for relative speed");
    estimate->add_option("--seq-len", opt.seq_len);
    add_common(estimate);

    CLI::App* verify = app.add_subcommand("verify", "Re-check every checkpoint invariant");
    verify->add_option("--checkpoint", opt.checkpoint)->required();

    CLI::App* pipeline = app.add_subcommand("pipeline", "calibrate, score, prune, absorb, eval, verify");
    pipeline->add_option("--checkpoint", opt.checkpoint, "Teacher checkpoint")->required();
    pipeline->add_option("--calib", opt.calib);
    pipeline->add_option("--plan", opt.plan)->required();
    pipeline->add_option("--sites", opt.sites, "Absorption sites; 'none' disables absorption");
    pipeline->add_option("--out", opt.out, "Output directory")->required();
    pipeline->add_option("--seq-len", opt.seq_len);
    pipeline->add_option("--seed", opt.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return kExitUsage;
    }

    try {
        if (init->parsed()) return cmd_init_toy(opt);
        if (calibrate->parsed()) return cmd_calibrate(opt);
        if (score->parsed()) return cmd_score(opt);
        if (prune->parsed()) return cmd_prune(opt);
        if (absorb_cmd->parsed()) return cmd_absorb(opt);
        if (eval_cmd->parsed()) return cmd_eval(opt);
        if (estimate->parsed()) return cmd_estimate(opt);
        if (verify->parsed()) return cmd_verify(opt);
        if (pipeline->parsed()) return cmd_pipeline(opt);
    } catch (const NumericError& e) {
        print_error("numeric", e.what());
        return kExitNumeric;
    } catch (const ShapeError& e) {
        print_error("shape", e.what());
        return kExitValidation;
    } catch (const ValidationError& e) {
        print_error("validation", e.what());
        return kExitValidation;
    } catch (const IoError& e) {
        print_error("io", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return kExitValidation;
    }
    return 0;
}
