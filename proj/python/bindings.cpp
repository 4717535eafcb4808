#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "focusgate/attention_dynamics.hpp"
#include "focusgate/dpp_select.hpp"
#include "focusgate/error.hpp"
#include "focusgate/halluc_metrics.hpp"
#include "focusgate/synth_fixtures.hpp"
#include "focusgate/trace_io.hpp"
#include "focusgate/var_analysis.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace focusgate;

namespace {

std::string header_json(const fs::path& path) {
    const auto loaded = read_trace(path);
    return std::visit([](const auto& t) { return header_to_json(t.header()).dump(); }, loaded.trace);
}

std::string phases_json(const fs::path& path, double lambda, double baseline_fraction,
                        std::optional<double> window_fraction) {
    PhaseConfig cfg;
    cfg.lambda = lambda;
    cfg.baseline_fraction = baseline_fraction;
    if (window_fraction) {
        cfg.window_fraction = *window_fraction;
    } else {
        cfg.auto_window = true;
    }
    cfg.validate();
    const auto profile = concentration_profile(read_attention_trace(path), cfg.sigma_floor);
    const auto outcome = detect_phases(profile, cfg);
    nlohmann::json j = std::visit([](const auto& o) { return to_json(o); }, outcome);
    j["profile"] = to_json(profile);
    return j.dump();
}

py::tuple greedy(const Eigen::MatrixXd& L, std::size_t k, unsigned threads) {
    DppKernel kernel;
    kernel.L = L;
    GreedyOptions opts;
    opts.threads = threads;
    SelectionResult r;
    {
        py::gil_scoped_release release;
        r = greedy_map(kernel, k, opts);
    }
    return py::make_tuple(r.selected, r.marginal_log_gains, r.stopped_early);
}

std::string metrics_json(const fs::path& captions, const fs::path& annotations, const fs::path& lexicon,
                         bool pooled, const std::string& suite) {
    const auto lex = ObjectLexicon::load(lexicon);
    const auto records = build_records(load_captions(captions), load_annotations(annotations), lex);
    return to_json(evaluate_captions(records, lex, pooled ? F1Mode::Pooled : F1Mode::PerImage), suite).dump();
}

double image_var(const fs::path& path) { return var_stats(read_decoder_trace(path), "").image_mean; }

std::string welch_json(const std::vector<double>& a, const std::vector<double>& b) {
    return to_json(compare_conditions(a, b)).dump();
}

void synth(const std::string& spec_json, const fs::path& out) {
    const auto spec = nlohmann::json::parse(spec_json);
    const std::string type = spec.value("type", std::string("phase"));
    if (type == "phase") {
        write_trace(out, gen_phase_trace(phase_spec_from_json(spec)));
    } else if (type == "features") {
        write_trace(out, gen_feature_dump(feature_spec_from_json(spec)).dump);
    } else if (type == "decoder") {
        write_trace(out, gen_decoder_trace(decoder_spec_from_json(spec)));
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown fixture type '" + type + "'");
    }
}

int run_cli(const std::vector<std::string>& args) {
    py::gil_scoped_release release;
    return cli::run(args);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "focusgate native core";

    PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
    error_type.call_once_and_store_result([&]() { return py::object(py::exception<Error>(m, "FocusgateError", PyExc_ValueError)); });
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            const py::object& type = error_type.get_stored();
            py::object err = type(py::str(e.what()));
            err.attr("code") = std::string(to_string(e.code()));
            PyErr_SetObject(type.ptr(), err.ptr());
        }
    });

    m.def("header_json", &header_json, py::arg("path"));
    m.def("phases_json", &phases_json, py::arg("path"), py::arg("lambda_") = 2.0, py::arg("baseline_fraction") = 0.25,
          py::arg("window_fraction") = 0.30);
    m.def("similarity_matrix", [](const Eigen::MatrixXd& f) { return similarity_matrix(f).S; }, py::arg("features"));
    m.def("build_kernel", [](const std::vector<double>& q, const Eigen::MatrixXd& s,
                             double jitter_rel) { return build_kernel(q, s, jitter_rel).L; },
          py::arg("q"), py::arg("similarity"), py::arg("jitter_rel") = 1e-6);
    m.def("greedy_map", &greedy, py::arg("kernel"), py::arg("k"), py::arg("threads") = 1);
    m.def("topk_select", [](const std::vector<double>& q, std::size_t k) { return topk_select(q, k).selected; },
          py::arg("q"), py::arg("k"));
    m.def("retained_count", &retained_count, py::arg("n_patches"), py::arg("ratio"),
          py::arg("ratio_means_retained") = false);
    m.def("metrics_json", &metrics_json, py::arg("captions"), py::arg("annotations"), py::arg("lexicon"),
          py::arg("pooled") = false, py::arg("suite") = "amber");
    m.def("image_var", &image_var, py::arg("path"));
    m.def("welch_json", &welch_json, py::arg("a"), py::arg("b"));
    m.def("synth", &synth, py::arg("spec_json"), py::arg("out"));
    m.def("run_cli", &run_cli, py::arg("args"));
}
