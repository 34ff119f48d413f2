#include "lune/checkpoint.hpp"
#include "lune/config.hpp"
#include "lune/error.hpp"
#include "lune/eval.hpp"
#include "lune/gradcheck.hpp"
#include "lune/lab.hpp"
#include "lune/lora.hpp"
#include "lune/projection.hpp"
#include "lune/report.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace lune;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

RunConfig make_config(const std::map<std::string, std::string>& overrides) {
    RunConfig c;
    for (const auto& [k, v] : overrides) set_config_value(c, k, v);
    c.validate();
    return c;
}

py::dict fact_dict(const FactRecord& f) {
    py::dict d;
    d["id"] = f.id;
    d["subject"] = f.subject;
    d["relation"] = f.relation;
    d["object"] = f.object;
    d["split"] = split_name(f.split);
    return d;
}

py::dict report_dict(const EvalReport& r) {
    py::dict d;
    d["label"] = r.label;
    d["method"] = r.method;
    d["seed"] = r.seed;
    d["usr"] = r.usr;
    d["gur"] = r.gur;
    d["apr"] = r.apr;
    d["mia"] = r.mia;
    d["n_target"] = r.n_target;
    d["n_general"] = r.n_general;
    d["n_probe"] = r.n_probe;
    d["n_mia"] = r.n_mia;
    return d;
}

}  // namespace

PYBIND11_MODULE(_lune, m) {
    m.doc() = "LoRA negative-only unlearning lab";

    auto base = py::register_exception<Error>(m, "LuneError");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

    m.def("version", &version_string);

    m.def("config_keys", [] {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& k : config_keys()) out.emplace_back(k.name, k.doc);
        return out;
    });
    m.def(
        "config_toml", [](const std::map<std::string, std::string>& overrides) { return to_toml(make_config(overrides)); },
        py::arg("overrides") = std::map<std::string, std::string>{},
        "Resolved config as TOML; values are TOML literals keyed by dotted name.");
    m.def(
        "config_value",
        [](const std::string& key, const std::map<std::string, std::string>& overrides) {
            return get_config_value(make_config(overrides), key);
        },
        py::arg("key"), py::arg("overrides") = std::map<std::string, std::string>{});

    m.def(
        "generate_corpus",
        [](std::size_t n_facts, std::size_t n_targets, std::size_t n_holdout, std::uint64_t seed) {
            py::list out;
            for (const auto& f : generate_corpus({n_facts, n_targets, n_holdout, seed}).facts) out.append(fact_dict(f));
            return out;
        },
        py::arg("n_facts") = 220, py::arg("n_targets") = 20, py::arg("n_holdout") = 20, py::arg("seed") = 0);

    m.def("affirms_object", [](const std::string& text, const std::string& object) {
        return affirms_object(Tokenizer::split(text), object);
    });

    py::class_<Tokenizer>(m, "Tokenizer")
        .def_static("standard", &build_tokenizer, py::arg("max_vocab") = 512)
        .def("encode", &Tokenizer::encode)
        .def("decode", [](const Tokenizer& t, const std::vector<TokenId>& ids) { return t.decode(ids); })
        .def("__len__", &Tokenizer::size);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("d_ff", &ModelConfig::d_ff)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def_readwrite("seed", &ModelConfig::seed);

    py::class_<TransformerModel>(m, "TransformerModel")
        .def(py::init<const ModelConfig&>())
        .def_static("load", &load_model)
        .def("save", [](const TransformerModel& model, const std::filesystem::path& p) { save_model(p, model); })
        .def("logits", [](const TransformerModel& model, const std::vector<TokenId>& ids) { return to_numpy(model.logits(ids)); })
        .def("checksum", &TransformerModel::checksum)
        .def("parameter_count", &TransformerModel::parameter_count)
        .def("parameter", [](const TransformerModel& model, const std::string& n) { return to_numpy(model.parameter(n)); })
        .def("generate", [](const TransformerModel& model, const std::vector<TokenId>& prompt, std::size_t max_new) {
            return generate_greedy(model, prompt, max_new);
        });

    py::class_<AdaptedModel>(m, "AdaptedModel")
        .def("logits", [](const AdaptedModel& model, const std::vector<TokenId>& ids) { return to_numpy(model.logits(ids)); })
        .def("trainable_parameter_count", [](AdaptedModel& model) {
            std::size_t n = 0;
            for (const auto& p : model.trainable_parameters()) n += p.tensor.numel();
            return n;
        });

    m.def(
        "inject",
        [](const TransformerModel& model, std::size_t rank, std::uint64_t seed) {
            return inject(model, InjectionPlan::standard(model.config(), rank), seed);
        },
        py::arg("model"), py::arg("rank") = 16, py::arg("seed") = 0, py::keep_alive<0, 1>());

    m.def("count_params", &count_params);
    m.def("count_lora_params", [](const ModelConfig& c, std::size_t rank) {
        return count_lora_params(InjectionPlan::standard(c, rank));
    });

    m.def(
        "gradcheck",
        [](std::uint64_t seed, std::size_t instances, double tolerance) {
            py::list out;
            for (const auto& r : run_gradcheck(standard_gradcheck_cases(), seed, instances, tolerance)) {
                py::dict d;
                d["op"] = r.op;
                d["instances"] = r.instances;
                d["max_rel_error"] = r.max_rel_error;
                d["passed"] = r.passed;
                out.append(d);
            }
            return out;
        },
        py::arg("seed") = 0, py::arg("instances") = 20, py::arg("tolerance") = 1e-4);

    m.def(
        "projection_suite",
        [](std::size_t rank, std::size_t n_seeds, std::uint64_t seed) {
            py::list out;
            for (const auto& r : run_projection_suite(ModelConfig{}, rank,
                                                      {LayerLoss::kQuadratic, LayerLoss::kLinear,
                                                       LayerLoss::kCrossEntropy},
                                                      n_seeds, seed)) {
                py::dict d;
                d["layer"] = r.layer;
                d["loss"] = layer_loss_name(r.loss);
                d["seed"] = r.seed;
                d["max_ratio"] = r.report.max_ratio;
                d["passed"] = r.report.passed;
                out.append(d);
            }
            return out;
        },
        py::arg("rank") = 16, py::arg("n_seeds") = 10, py::arg("seed") = 0);

    m.def("mia_accuracy", [](const std::vector<double>& members, const std::vector<double>& nonmembers, std::uint64_t seed) {
        return mia_from_losses(members, nonmembers, seed).accuracy;
    });

    m.def("read_report", [](const std::filesystem::path& p) { return report_dict(read_report_json(p)); });
}
