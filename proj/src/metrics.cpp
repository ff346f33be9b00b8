#include "pointseq/metrics.hpp"

#include <nlohmann/json.hpp>

#include "pointseq/errors.hpp"
#include "pointseq/parallel.hpp"
#include "pointseq/util.hpp"

namespace pointseq {

F1Stats detection_f1(const std::vector<Point>& pred, const std::vector<Point>& gt,
                     double r_thresh) {
    return f1_stats(classify_matches(hungarian_match(pred, gt), r_thresh));
}

double aji(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
    int w = -1, h = -1;
    auto check_raster = [&](const Mask& m) {
        if (w < 0) {
            w = m.w;
            h = m.h;
        } else if (m.w != w || m.h != h) {
            throw ConfigError("aji: masks disagree on raster size");
        }
    };
    for (const Mask& m : pred) check_raster(m);
    for (const Mask& m : gt) check_raster(m);

    if (!pred.empty()) {
        std::vector<uint8_t> covered(pred[0].bits.size(), 0);
        for (const Mask& m : pred)
            for (size_t i = 0; i < m.bits.size(); ++i)
                if (m.bits[i]) {
                    if (covered[i]) throw ConfigError("aji: predicted masks overlap");
                    covered[i] = 1;
                }
    }

    std::vector<char> used(pred.size(), 0);
    size_t num = 0, den = 0;
    for (const Mask& g : gt) {
        int best = -1;
        double best_iou = -1.0;
        size_t best_inter = 0, best_union = 0;
        for (size_t p = 0; p < pred.size(); ++p) {
            if (used[p]) continue;
            size_t inter = mask_intersection(g, pred[p]);
            if (inter == 0) continue;
            size_t uni = mask_union(g, pred[p]);
            double iou = static_cast<double>(inter) / static_cast<double>(uni);
            if (iou > best_iou) {
                best_iou = iou;
                best = static_cast<int>(p);
                best_inter = inter;
                best_union = uni;
            }
        }
        if (best >= 0) {
            used[static_cast<size_t>(best)] = 1;
            num += best_inter;
            den += best_union;
        } else {
            den += g.count();
        }
    }
    for (size_t p = 0; p < pred.size(); ++p)
        if (!used[p]) den += pred[p].count();

    if (den == 0) return 1.0; // nothing annotated and nothing predicted
    return static_cast<double>(num) / static_cast<double>(den);
}

EvalReport evaluate_split(const std::vector<Scene>& split,
                          const PredictionProvider& provider, const EvalConfig& cfg) {
    if (split.empty()) throw ConfigError("evaluate_split: empty split");
    if (!(cfg.r_thresh > 0.0))
        throw ConfigError("evaluate_split: r_thresh must be positive");

    EvalReport rep;
    rep.r_thresh = cfg.r_thresh;
    rep.scenes.resize(split.size());
    parallel_for(split.size(), [&](size_t i) {
        const Scene& scene = split[i];
        SceneRecord& rec = rep.scenes[i];
        rec.n_gt = static_cast<int>(scene.instances.size());

        ScenePrediction pr = provider(scene, i);
        if (!pr.format_ok) {
            rec.fn = rec.n_gt;
            return;
        }
        rec.format_ok = true;

        std::vector<Point> gts;
        std::vector<Mask> gt_masks;
        for (const Instance& inst : scene.instances) {
            gts.push_back(inst.centroid);
            gt_masks.push_back(inst.mask);
        }

        MatchResult mr = classify_matches(hungarian_match(pr.points, gts), cfg.r_thresh);
        F1Stats fs = f1_stats(mr);
        PqStats ps = panoptic_quality(pr.masks, gt_masks);
        rec.f1 = fs.f1;
        rec.precision = fs.precision;
        rec.recall = fs.recall;
        rec.pq = ps.pq;
        rec.dq = ps.dq;
        rec.sq = ps.sq;
        rec.aji = aji(pr.masks, gt_masks);
        rec.n_pred = static_cast<int>(pr.points.size());
        rec.tp = fs.tp;
        rec.fp = fs.fp;
        rec.fn = fs.fn;
    });

    const double n = static_cast<double>(split.size());
    for (const SceneRecord& rec : rep.scenes) {
        rep.f1 += rec.f1;
        rep.precision += rec.precision;
        rep.recall += rec.recall;
        rep.pq += rec.pq;
        rep.dq += rec.dq;
        rep.sq += rec.sq;
        rep.aji += rec.aji;
        if (!rec.format_ok) ++rep.format_failures;
    }
    rep.f1 /= n;
    rep.precision /= n;
    rep.recall /= n;
    rep.pq /= n;
    rep.dq /= n;
    rep.sq /= n;
    rep.aji /= n;
    return rep;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["format"] = "pointseq-eval";
    j["version"] = 1;
    j["r_thresh"] = r_thresh;
    j["iou_rule"] = iou_rule;
    j["n_scenes"] = scenes.size();
    j["format_failures"] = format_failures;
    j["aggregates"] = {{"f1", f1},         {"precision", precision}, {"recall", recall},
                       {"pq", pq},         {"dq", dq},               {"sq", sq},
                       {"aji", aji}};
    auto& arr = j["scenes"] = nlohmann::json::array();
    for (size_t i = 0; i < scenes.size(); ++i) {
        const SceneRecord& r = scenes[i];
        arr.push_back({{"index", i},
                       {"format_ok", r.format_ok},
                       {"f1", r.f1},
                       {"precision", r.precision},
                       {"recall", r.recall},
                       {"pq", r.pq},
                       {"dq", r.dq},
                       {"sq", r.sq},
                       {"aji", r.aji},
                       {"n_pred", r.n_pred},
                       {"n_gt", r.n_gt},
                       {"tp", r.tp},
                       {"fp", r.fp},
                       {"fn", r.fn}});
    }
    return j.dump(2) + "\n";
}

std::string EvalReport::to_tsv() const {
    std::string out =
        "index\tformat_ok\tn_pred\tn_gt\ttp\tfp\tfn\tf1\tprecision\trecall\tpq\tdq\tsq\taji\n";
    for (size_t i = 0; i < scenes.size(); ++i) {
        const SceneRecord& r = scenes[i];
        out += std::to_string(i);
        out += '\t';
        out += r.format_ok ? '1' : '0';
        for (int v : {r.n_pred, r.n_gt, r.tp, r.fp, r.fn}) {
            out += '\t';
            out += std::to_string(v);
        }
        for (double v : {r.f1, r.precision, r.recall, r.pq, r.dq, r.sq, r.aji}) {
            out += '\t';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

PredictionProvider policy_provider(const PolicyParams& params, const SegmenterConfig& seg) {
    return [&params, seg](const Scene& scene, size_t) {
        Rollout ro = sample_rollout(params, scene, 0.0, 0);
        ScenePrediction pr;
        if (!ro.format_ok()) return pr;
        pr.format_ok = true;
        pr.points = std::get<ParsedDetections>(ro.parsed).points;
        pr.masks = toy_segment(pr.points, scene, seg);
        return pr;
    };
}

} // namespace pointseq
