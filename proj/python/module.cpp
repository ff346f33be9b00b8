#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <variant>
#include <vector>

#include "pointseq/commands.hpp"
#include "pointseq/config.hpp"
#include "pointseq/errors.hpp"
#include "pointseq/grpo.hpp"
#include "pointseq/metrics.hpp"
#include "pointseq/reward.hpp"
#include "pointseq/scene.hpp"
#include "pointseq/supervision.hpp"
#include "pointseq/tokenizer.hpp"

namespace py = pybind11;
using namespace pointseq;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Point> to_points(const DoubleArray& arr) {
    if (arr.ndim() != 2 || arr.shape(1) != 2)
        throw py::value_error("expected an (n, 2) array of points");
    auto a = arr.unchecked<2>();
    std::vector<Point> pts(static_cast<size_t>(arr.shape(0)));
    for (py::ssize_t i = 0; i < arr.shape(0); ++i) pts[static_cast<size_t>(i)] = {a(i, 0), a(i, 1)};
    return pts;
}

py::array_t<double> from_points(const std::vector<Point>& pts) {
    py::array_t<double> out({static_cast<py::ssize_t>(pts.size()), py::ssize_t(2)});
    auto a = out.mutable_unchecked<2>();
    for (size_t i = 0; i < pts.size(); ++i) {
        a(static_cast<py::ssize_t>(i), 0) = pts[i].x;
        a(static_cast<py::ssize_t>(i), 1) = pts[i].y;
    }
    return out;
}

Mask to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw py::value_error("expected an (h, w) boolean mask");
    auto a = arr.unchecked<2>();
    Mask m(static_cast<int>(arr.shape(1)), static_cast<int>(arr.shape(0)));
    for (py::ssize_t y = 0; y < arr.shape(0); ++y)
        for (py::ssize_t x = 0; x < arr.shape(1); ++x)
            if (a(y, x)) m.set(static_cast<int>(x), static_cast<int>(y));
    return m;
}

std::vector<Mask> to_masks(const std::vector<py::array_t<bool, py::array::c_style | py::array::forcecast>>& arrs) {
    std::vector<Mask> out;
    out.reserve(arrs.size());
    for (const auto& a : arrs) out.push_back(to_mask(a));
    return out;
}

py::array_t<double> from_vec(const Vec& v) {
    py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
    auto a = out.mutable_unchecked<1>();
    for (Eigen::Index i = 0; i < v.size(); ++i) a(i) = v(i);
    return out;
}

Vec to_vec(const DoubleArray& arr) {
    if (arr.ndim() != 1) throw py::value_error("expected a 1-d array");
    auto a = arr.unchecked<1>();
    Vec v(arr.shape(0));
    for (py::ssize_t i = 0; i < arr.shape(0); ++i) v(i) = a(i);
    return v;
}

ExperimentConfig config_from(const std::string& config_path,
                             const std::vector<std::string>& overrides) {
    return resolve_config(config_path, overrides);
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Autoregressive point-sequence detection: tokenizer, matching, metrics, "
              "GRPO primitives, and the experiment stages.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    // ---------------------------------------------------------- tokenizer
    m.def("quantize", &quantize, py::arg("x_norm"), py::arg("k"),
          "Nearest bin index of a normalized coordinate; ties to the lower bin.");
    m.def("dequantize", &dequantize, py::arg("i"), py::arg("k"), "Bin-center coordinate.");
    m.def(
        "encode_points",
        [](const DoubleArray& points, int w, int h, int k) {
            return encode_points(to_points(points), w, h, k).ids;
        },
        py::arg("points"), py::arg("w"), py::arg("h"), py::arg("k"),
        "Raster-sorted token ids, bracketed pairs between BOS and EOS.");
    m.def(
        "parse_points",
        [](const std::vector<int>& ids, int k, int l, int w, int h) -> py::object {
            TokenSequence seq;
            seq.ids = ids;
            Vocabulary vocab{k, l};
            ParseResult res = parse_sequence(seq, vocab, w, h);
            if (const auto* err = std::get_if<FormatError>(&res)) {
                py::dict d;
                d["error"] = err->describe();
                d["index"] = err->index;
                return d;
            }
            return from_points(std::get<ParsedDetections>(res).points);
        },
        py::arg("ids"), py::arg("k"), py::arg("l"), py::arg("w"), py::arg("h"),
        "Decoded (n, 2) point array, or a dict describing the format violation.");
    m.def("vocab_size", [](int k, int l) { return Vocabulary{k, l}.size(); }, py::arg("k"),
          py::arg("l"));

    // ----------------------------------------------------------- matching
    m.def(
        "hungarian_match",
        [](const DoubleArray& pred, const DoubleArray& gt) {
            Assignment a = hungarian_match(to_points(pred), to_points(gt));
            std::vector<std::pair<int, int>> pairs;
            pairs.reserve(a.pairs.size());
            for (const AssignedPair& p : a.pairs) pairs.emplace_back(p.pred, p.gt);
            return py::make_tuple(pairs, a.cost);
        },
        py::arg("pred"), py::arg("gt"),
        "Min-cost assignment as ([(pred_idx, gt_idx), ...], total_cost).");
    m.def(
        "detection_f1",
        [](const DoubleArray& pred, const DoubleArray& gt, double r_thresh) {
            F1Stats s = detection_f1(to_points(pred), to_points(gt), r_thresh);
            py::dict d;
            d["f1"] = s.f1;
            d["precision"] = s.precision;
            d["recall"] = s.recall;
            d["tp"] = s.tp;
            d["fp"] = s.fp;
            d["fn"] = s.fn;
            return d;
        },
        py::arg("pred"), py::arg("gt"), py::arg("r_thresh"));

    // ------------------------------------------------------------ metrics
    m.def(
        "aji",
        [](const std::vector<py::array_t<bool, py::array::c_style | py::array::forcecast>>& pred,
           const std::vector<py::array_t<bool, py::array::c_style | py::array::forcecast>>& gt) {
            return aji(to_masks(pred), to_masks(gt));
        },
        py::arg("pred_masks"), py::arg("gt_masks"),
        "Aggregated Jaccard index over instance masks.");
    m.def(
        "panoptic_quality",
        [](const std::vector<py::array_t<bool, py::array::c_style | py::array::forcecast>>& pred,
           const std::vector<py::array_t<bool, py::array::c_style | py::array::forcecast>>& gt) {
            PqStats s = panoptic_quality(to_masks(pred), to_masks(gt));
            py::dict d;
            d["pq"] = s.pq;
            d["dq"] = s.dq;
            d["sq"] = s.sq;
            d["tp"] = s.tp;
            d["fp"] = s.fp;
            d["fn"] = s.fn;
            return d;
        },
        py::arg("pred_masks"), py::arg("gt_masks"));

    // ------------------------------------------------------- supervision
    m.def(
        "soft_label",
        [](int t, int k, double sigma) { return from_vec(soft_label(t, k, sigma).probs); },
        py::arg("target_bin"), py::arg("k"), py::arg("sigma"),
        "Gaussian-smoothed coordinate target over k bins; sums to one.");

    // -------------------------------------------------------------- grpo
    m.def(
        "compute_advantages",
        [](const DoubleArray& rewards) { return from_vec(compute_advantages(to_vec(rewards))); },
        py::arg("rewards"), "Population-standardized group rewards.");
    m.def(
        "clipped_surrogate",
        [](double lp_new, double lp_old, double advantage, double epsilon) {
            SurrogateTerm t = clipped_surrogate(lp_new, lp_old, advantage, epsilon);
            return py::make_tuple(t.value, t.dvalue_dlogprob);
        },
        py::arg("lp_new"), py::arg("lp_old"), py::arg("advantage"), py::arg("epsilon"),
        "Per-token clipped objective value and its derivative in lp_new.");

    // -------------------------------------------------------------- scene
    m.def(
        "render_scene",
        [](uint64_t seed, int w, int h, int count_lo, int count_hi, double radius_lo,
           double radius_hi, double min_sep, double noise) {
            SceneConfig cfg;
            cfg.w = w;
            cfg.h = h;
            cfg.count_lo = count_lo;
            cfg.count_hi = count_hi;
            cfg.radius_lo = radius_lo;
            cfg.radius_hi = radius_hi;
            cfg.min_sep = min_sep;
            cfg.noise = noise;
            Scene s = generate_scene(cfg, seed);
            py::array_t<double> img({py::ssize_t(s.h), py::ssize_t(s.w)});
            auto a = img.mutable_unchecked<2>();
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) a(y, x) = s.at(x, y);
            std::vector<Point> centroids;
            for (const Instance& inst : s.instances) centroids.push_back(inst.centroid);
            py::dict d;
            d["intensity"] = img;
            d["centroids"] = from_points(centroids);
            return d;
        },
        py::arg("seed"), py::arg("w") = 64, py::arg("h") = 64, py::arg("count_lo") = 1,
        py::arg("count_hi") = 8, py::arg("radius_lo") = 3.0, py::arg("radius_hi") = 5.0,
        py::arg("min_sep") = 8.0, py::arg("noise") = 0.05,
        "Deterministic synthetic scene as {'intensity': (h, w), 'centroids': (n, 2)}.");

    // -------------------------------------------------------------- stages
    m.def("default_config", [] { return config_json(ExperimentConfig{}); },
          "Built-in configuration as pretty-printed JSON.");
    m.def(
        "resolved_config",
        [](const std::string& config, const std::vector<std::string>& overrides) {
            return config_json(config_from(config, overrides));
        },
        py::arg("config") = std::string(), py::arg("overrides") = std::vector<std::string>{});
    m.def(
        "generate",
        [](const std::string& out_dir, const std::string& config,
           const std::vector<std::string>& overrides, bool force) {
            GenerateResult r = cmd_generate(config_from(config, overrides), out_dir, force);
            py::dict d;
            d["manifest_path"] = r.manifest_path;
            d["n_train"] = r.n_train;
            d["n_val"] = r.n_val;
            return d;
        },
        py::arg("out_dir"), py::arg("config") = std::string(),
        py::arg("overrides") = std::vector<std::string>{}, py::arg("force") = false);
    m.def(
        "sft",
        [](const std::string& dataset_dir, const std::string& out_dir, const std::string& config,
           const std::vector<std::string>& overrides, bool resume) {
            SftResult r = cmd_sft(config_from(config, overrides), dataset_dir, out_dir, resume);
            py::dict d;
            d["checkpoint_path"] = r.checkpoint_path;
            d["decoder_path"] = r.decoder_path;
            d["steps_run"] = r.steps_run;
            d["final_loss"] = r.final_loss;
            d["final_val_f1"] = r.final_val_f1;
            return d;
        },
        py::arg("dataset_dir"), py::arg("out_dir"), py::arg("config") = std::string(),
        py::arg("overrides") = std::vector<std::string>{}, py::arg("resume") = false);
    m.def(
        "rft",
        [](const std::string& dataset_dir, const std::string& ckpt, const std::string& out_dir,
           const std::string& config, const std::vector<std::string>& overrides) {
            RftResult r = cmd_rft(config_from(config, overrides), dataset_dir, ckpt, out_dir);
            py::dict d;
            d["checkpoint_path"] = r.checkpoint_path;
            d["steps_run"] = r.steps_run;
            d["first_window_reward"] = r.first_window_reward;
            d["last_window_reward"] = r.last_window_reward;
            return d;
        },
        py::arg("dataset_dir"), py::arg("ckpt"), py::arg("out_dir"),
        py::arg("config") = std::string(), py::arg("overrides") = std::vector<std::string>{});
    m.def(
        "evaluate",
        [](const std::string& dataset_dir, const std::string& ckpt, const std::string& out_dir,
           const std::string& config, const std::vector<std::string>& overrides,
           const std::string& split) {
            EvalResult r =
                cmd_eval(config_from(config, overrides), dataset_dir, ckpt, out_dir, split);
            py::dict d;
            d["json_path"] = r.json_path;
            d["tsv_path"] = r.tsv_path;
            d["f1"] = r.report.f1;
            d["pq"] = r.report.pq;
            d["aji"] = r.report.aji;
            d["format_failures"] = r.report.format_failures;
            d["n_scenes"] = static_cast<int>(r.report.scenes.size());
            return d;
        },
        py::arg("dataset_dir"), py::arg("ckpt"), py::arg("out_dir"),
        py::arg("config") = std::string(), py::arg("overrides") = std::vector<std::string>{},
        py::arg("split") = std::string("val"));
    m.def(
        "report",
        [](const std::vector<std::string>& sft_logs, const std::vector<std::string>& rft_logs,
           const std::vector<std::string>& eval_reports, const std::string& out_dir) {
            ReportResult r = cmd_report(sft_logs, rft_logs, eval_reports, out_dir);
            py::dict d;
            d["plot_paths"] = r.plot_paths;
            d["summary_path"] = r.summary_path;
            d["warnings"] = r.warnings;
            return d;
        },
        py::arg("sft_logs"), py::arg("rft_logs"), py::arg("eval_reports"), py::arg("out_dir"));
}
