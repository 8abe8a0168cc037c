#include "prunekit/checkpoint.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/evaluate.hpp"
#include "prunekit/importance.hpp"
#include "prunekit/json_io.hpp"
#include "prunekit/normfuse.hpp"
#include "prunekit/surgery.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

namespace py = pybind11;
using namespace prunekit;

namespace {

py::array_t<float> tensor_to_numpy(const Tensor2D& t) {
    py::array_t<float> out({t.rows(), t.cols()});
    std::memcpy(out.mutable_data(), t.data().data(), t.size() * sizeof(float));
    return out;
}

Tensor2D numpy_to_tensor(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) {
        throw ShapeError("expected a 2-D float array");
    }
    std::vector<float> data(static_cast<std::size_t>(a.size()));
    std::memcpy(data.data(), a.data(), data.size() * sizeof(float));
    return Tensor2D(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                    std::move(data));
}

std::vector<SiteRef> sites_from_text(const std::string& text, const WeightStore& w) {
    return parse_sites(text, w.config);
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Structured pruning toolkit for sandwich-norm GQA transformers";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ValueError);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_static("uniform", &ModelConfig::uniform, py::arg("layers"), py::arg("hidden"),
                    py::arg("heads"), py::arg("groups"), py::arg("head_dim"), py::arg("ffn"),
                    py::arg("vocab"), py::arg("eps") = 1e-6f)
        .def_readwrite("num_layers", &ModelConfig::num_layers)
        .def_readwrite("hidden_dim", &ModelConfig::hidden_dim)
        .def_readwrite("head_dim", &ModelConfig::head_dim)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("eps", &ModelConfig::eps)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("num_groups", &ModelConfig::num_groups)
        .def_readwrite("ffn_dim", &ModelConfig::ffn_dim)
        .def_readwrite("postnorm_attn", &ModelConfig::postnorm_attn)
        .def_readwrite("postnorm_ffn", &ModelConfig::postnorm_ffn)
        .def("validate", &ModelConfig::validate)
        .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; });

    py::class_<WeightStore>(m, "WeightStore")
        .def_readonly("config", &WeightStore::config)
        .def("validate", &WeightStore::validate)
        .def("tensor",
             [](const WeightStore& w, const std::string& name) -> py::object {
                 if (name == "embedding") return tensor_to_numpy(w.embedding);
                 if (name == "output_head") return tensor_to_numpy(w.output_head);
                 throw ValidationError("unknown tensor '" + name + "'");
             },
             "Fetch 'embedding' or 'output_head' as numpy")
        .def("__eq__", [](const WeightStore& a, const WeightStore& b) { return a == b; });

    py::class_<CalibrationSet>(m, "CalibrationSet")
        .def(py::init([](std::vector<std::vector<std::int32_t>> sequences, std::string provenance) {
                 CalibrationSet c{std::move(sequences), std::move(provenance)};
                 c.validate();
                 return c;
             }),
             py::arg("sequences"), py::arg("provenance") = "inline")
        .def_readonly("sequences", &CalibrationSet::sequences)
        .def_readonly("provenance", &CalibrationSet::provenance);

    py::class_<ActivationStats>(m, "ActivationStats")
        .def_readonly("token_count", &ActivationStats::token_count)
        .def("to_json", [](const ActivationStats& s) { return stats_json(s).dump(); });

    py::class_<ImportanceScores>(m, "ImportanceScores")
        .def_readonly("channel", &ImportanceScores::channel)
        .def_readonly("head", &ImportanceScores::head)
        .def_readonly("ffn", &ImportanceScores::ffn)
        .def_readonly("layer", &ImportanceScores::layer)
        .def("to_json", [](const ImportanceScores& s) { return scores_json(s).dump(); });

    py::enum_<LayerAction>(m, "LayerAction")
        .value("KEEP", LayerAction::Keep)
        .value("DROP", LayerAction::Drop)
        .value("MERGE", LayerAction::MergeIntoPredecessor);

    py::class_<PrunePlan>(m, "PrunePlan")
        .def(py::init<>())
        .def_static("keep_all", &PrunePlan::keep_all)
        .def_static("from_json",
                    [](const std::string& text) {
                        return plan_from_json_value(nlohmann::json::parse(text));
                    })
        .def_readwrite("keep_channels", &PrunePlan::keep_channels)
        .def_readwrite("heads_per_group", &PrunePlan::heads_per_group)
        .def_readwrite("groups_per_layer", &PrunePlan::groups_per_layer)
        .def_readwrite("keep_ffn", &PrunePlan::keep_ffn)
        .def_readwrite("layer_action", &PrunePlan::layer_action)
        .def("to_json", [](const PrunePlan& p) { return plan_json(p).dump(); })
        .def("validate", &PrunePlan::validate);

    py::class_<SurgeryReport>(m, "SurgeryReport")
        .def_readonly("origin_layers", &SurgeryReport::origin_layers)
        .def_readonly("keep_channels", &SurgeryReport::keep_channels)
        .def_readonly("final_config", &SurgeryReport::final_config)
        .def("to_json", [](const SurgeryReport& r) { return surgery_report_json(r).dump(); });

    py::class_<AbsorptionReport>(m, "AbsorptionReport")
        .def("to_json", [](const AbsorptionReport& r) { return absorption_report_json(r).dump(); });

    py::class_<CostEstimate>(m, "CostEstimate")
        .def_readonly("param_count", &CostEstimate::param_count)
        .def_readonly("flops_per_token", &CostEstimate::flops_per_token)
        .def_readonly("norm_flops_per_token", &CostEstimate::norm_flops_per_token)
        .def_readonly("relative_speed", &CostEstimate::relative_speed);

    // model and checkpoint
    m.def("random_init", &random_init, py::arg("config"), py::arg("seed"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
    m.def("save_checkpoint", &save_checkpoint, py::arg("weights"), py::arg("path"));
    m.def(
        "forward",
        [](const WeightStore& w, const std::vector<std::int32_t>& tokens) {
            return tensor_to_numpy(forward(w, tokens).logits);
        },
        py::arg("weights"), py::arg("tokens"), "Logits as an S x V numpy array");

    // kernel, mostly for experimentation from python
    m.def("matmul", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
                       const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
        return tensor_to_numpy(matmul(numpy_to_tensor(a), numpy_to_tensor(b)));
    });
    m.def("rmsnorm", [](const std::vector<float>& x, const std::vector<float>& gamma, float eps) {
        return rmsnorm(x, gamma, eps);
    });
    m.def("swish", &swish);

    // calibration and scores
    m.def("builtin_calibration", &builtin_calibration, py::arg("seed"), py::arg("vocab"),
          py::arg("num_sequences") = 32, py::arg("seq_len") = 64);
    m.def("load_calibration", &load_calibration, py::arg("path"));
    m.def("collect", &collect, py::arg("weights"), py::arg("calibration"));
    m.def("merge_stats", &merge, py::arg("a"), py::arg("b"));
    m.def("compute_scores", &compute_scores, py::arg("stats"));
    m.def("select_top_k", [](const std::vector<double>& scores, std::size_t k) {
        return select_top_k(scores, k);
    });

    // surgery
    m.def("apply_plan", [](const WeightStore& w, const ActivationStats& stats, const PrunePlan& plan) {
        SurgeryResult r = apply_plan(w, stats, plan);
        return py::make_tuple(std::move(r.store), std::move(r.report));
    });
    m.def("prune_channels", [](const WeightStore& w, const std::vector<std::size_t>& keep) {
        return prune_channels(w, keep);
    });
    m.def("restrict_stats", &restrict_stats, py::arg("stats"), py::arg("report"));

    // absorption
    m.def(
        "absorb",
        [](const WeightStore& w, const ActivationStats& stats, const std::string& sites) {
            auto [store, report] = absorb(w, stats, sites_from_text(sites, w));
            return py::make_tuple(std::move(store), std::move(report));
        },
        py::arg("weights"), py::arg("stats"), py::arg("sites") = "all");
    m.def("verify_absorption", &verify_absorption, py::arg("sandwich"), py::arg("absorbed"),
          py::arg("probe"));

    // evaluation
    m.def("kd_loss", &kd_loss, py::arg("teacher"), py::arg("student"), py::arg("data"));
    m.def("perplexity", &perplexity, py::arg("weights"), py::arg("data"));
    m.def(
        "estimate_cost",
        [](const ModelConfig& config, std::size_t seq_len, const ModelConfig* reference) {
            return reference ? estimate_cost(config, seq_len, *reference)
                             : estimate_cost(config, seq_len);
        },
        py::arg("config"), py::arg("seq_len") = 1024, py::arg("reference") = nullptr);
}
