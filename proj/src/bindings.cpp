#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "steerlab/analysis.hpp"
#include "steerlab/metrics.hpp"
#include "steerlab/pipeline.hpp"
#include "steerlab/probe.hpp"
#include "steerlab/steer.hpp"
#include "steerlab/subspace.hpp"
#include "steerlab/synth.hpp"
#include "steerlab/toymodel.hpp"

namespace py = pybind11;
using namespace steerlab;

namespace {

Mat mat_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw py::value_error("expected a 2-D array");
    Mat m(int(arr.shape(0)), int(arr.shape(1)));
    std::memcpy(m.data.data(), arr.data(), sizeof(double) * m.data.size());
    return m;
}

py::array_t<double> numpy_from_mat(const Mat& m) {
    py::array_t<double> arr({m.rows, m.cols});
    std::memcpy(arr.mutable_data(), m.data.data(), sizeof(double) * m.data.size());
    return arr;
}

std::vector<double> vec_from_numpy(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 1) throw py::value_error("expected a 1-D array");
    return {arr.data(), arr.data() + arr.shape(0)};
}

json json_from_pystr(const std::string& s) { return json::parse(s); }

}  // namespace

PYBIND11_MODULE(_steerlab, m) {
    m.doc() = "activation-steering laboratory: probing, SVD subspaces, deflation, "
              "adaptive steering and composite metrics";

    py::register_exception<Error>(m, "SteerlabError");

    // ---- subspace operations -------------------------------------------------
    m.def(
        "top_k_svd",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& delta, int k) {
            DifferenceMatrix dm;
            dm.delta = mat_from_numpy(delta);
            SubspaceBasis sb = top_k_svd(dm, k);
            return py::make_tuple(numpy_from_mat(sb.basis), sb.singular_values);
        },
        py::arg("delta"), py::arg("k"),
        "top-k right singular vectors (columns) and singular values of a row matrix");

    m.def(
        "complement_project",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& basis,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
            ComplementProjector proj{mat_from_numpy(basis)};
            return proj.apply(vec_from_numpy(x));
        },
        py::arg("basis"), py::arg("x"), "x - V (V^T x) for an orthonormal-column basis V");

    m.def(
        "deflate_and_decompose",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& truth_delta,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& style_basis,
           int k) {
            DifferenceMatrix dm;
            dm.delta = mat_from_numpy(truth_delta);
            SubspaceBasis sb;
            sb.basis = mat_from_numpy(style_basis);
            sb.k = sb.basis.cols;
            SubspaceBasis out = deflate_and_decompose(dm, sb, k);
            return py::make_tuple(numpy_from_mat(out.basis), out.singular_values);
        },
        py::arg("truth_delta"), py::arg("style_basis"), py::arg("k"),
        "decompose truth differences after projecting out the style subspace");

    m.def(
        "info_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& truth_delta,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& style_basis) {
            DifferenceMatrix dm;
            dm.delta = mat_from_numpy(truth_delta);
            SubspaceBasis sb;
            sb.basis = mat_from_numpy(style_basis);
            sb.k = sb.basis.cols;
            InfoLossReport rep = info_loss(dm, sb);
            return py::make_tuple(rep.delta, rep.k_over_d);
        },
        py::arg("truth_delta"), py::arg("style_basis"),
        "(captured-energy fraction, k/d estimate)");

    // ---- probes ---------------------------------------------------------------
    py::class_<ProbeModel>(m, "ProbeModel")
        .def_readonly("weights", &ProbeModel::weights)
        .def_readonly("bias", &ProbeModel::bias)
        .def_readonly("has_bias", &ProbeModel::has_bias);

    m.def(
        "train_probe",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const std::vector<int>& y, double learning_rate, int epochs, double l2_weight,
           uint64_t seed, bool use_bias) {
            ProbeConfig cfg{learning_rate, epochs, l2_weight, seed, use_bias};
            return train_probe(mat_from_numpy(x), y, cfg);
        },
        py::arg("x"), py::arg("y"), py::arg("learning_rate") = 0.5, py::arg("epochs") = 500,
        py::arg("l2_weight") = 1e-4, py::arg("seed") = 1, py::arg("use_bias") = false);

    m.def(
        "evaluate_probe",
        [](const ProbeModel& probe,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const std::vector<int>& y) { return evaluate_probe(probe, mat_from_numpy(x), y); },
        py::arg("probe"), py::arg("x"), py::arg("y"));

    // ---- steering math ----------------------------------------------------------
    m.def("global_strength", &global_strength, py::arg("sigma"), py::arg("head_dim"));
    m.def(
        "adaptive_scale",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& mean_positive,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& activation,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& basis_vector) {
            auto mp = vec_from_numpy(mean_positive);
            auto a = vec_from_numpy(activation);
            auto v = vec_from_numpy(basis_vector);
            return adaptive_scale(mp, a, v);
        },
        py::arg("mean_positive"), py::arg("activation"), py::arg("basis_vector"));

    // ---- statistics -------------------------------------------------------------
    m.def(
        "cosine_similarity",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& u,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& v) {
            auto uu = vec_from_numpy(u);
            auto vv = vec_from_numpy(v);
            return cosine_similarity(uu, vv);
        },
        py::arg("u"), py::arg("v"));

    m.def(
        "welch_t_test",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            WelchResult r = welch_t_test(a, b);
            return py::make_tuple(r.t, r.dof, r.p_two_tailed, r.cohens_d);
        },
        py::arg("group_a"), py::arg("group_b"), "(t, dof, two-tailed p, Cohen's d)");

    m.def("student_t_two_tailed_p", &student_t_two_tailed_p, py::arg("t"), py::arg("dof"));

    // ---- metrics ------------------------------------------------------------------
    m.def("fluency_score", &fluency_score, py::arg("ppl"));
    m.def("overall_assessment", &overall_assessment, py::arg("si"), py::arg("sp"), py::arg("fs"));
    m.def("ti_fraction", &ti_fraction, py::arg("truthful"), py::arg("informative"));
    m.def("s_ti", &s_ti, py::arg("oa"), py::arg("ti"));
    m.def("judge_fraction", &judge_fraction, py::arg("logit_yes"), py::arg("logit_no"));
    m.def(
        "metric_report",
        [](const std::string& components_json) {
            return compute_metric_report(json_from_pystr(components_json)).s_ti;
        },
        py::arg("components_json"), "s_ti of a component-score JSON string");

    // ---- toy model -------------------------------------------------------------------
    py::class_<ToyModel>(m, "ToyModel");

    m.def(
        "init_model",
        [](int d_model, int n_layers, int n_heads, int head_dim, int d_ff, int max_seq_len,
           uint64_t seed) {
            ModelConfig cfg;
            cfg.d_model = d_model;
            cfg.n_layers = n_layers;
            cfg.n_heads = n_heads;
            cfg.head_dim = head_dim;
            cfg.d_ff = d_ff;
            cfg.max_seq_len = max_seq_len;
            return init_model(cfg, seed);
        },
        py::arg("d_model") = 64, py::arg("n_layers") = 2, py::arg("n_heads") = 4,
        py::arg("head_dim") = 16, py::arg("d_ff") = 128, py::arg("max_seq_len") = 96,
        py::arg("seed") = 0);

    m.def("save_model", [](const ToyModel& model, const std::string& dir) {
        save_model(model, dir);
    });
    m.def("load_model", [](const std::string& dir) { return load_model(dir); });

    m.def(
        "generate",
        [](const ToyModel& model, const std::string& prompt, int max_new) {
            return py::bytes(generate(model, prompt, nullptr, max_new).text);
        },
        py::arg("model"), py::arg("prompt"), py::arg("max_new") = 32,
        "greedy unedited generation (raw bytes)");

    m.def(
        "perplexity",
        [](const ToyModel& model, const std::string& text) { return perplexity(model, text); },
        py::arg("model"), py::arg("text"));

    // ---- pipeline --------------------------------------------------------------------
    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) { return run_cli(args); },
        py::arg("args"), "run a pipeline subcommand; returns the process exit code");
}
