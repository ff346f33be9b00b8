#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pointseq/model.hpp"
#include "pointseq/reward.hpp"
#include "pointseq/scene.hpp"

namespace pointseq {

// Detection F1 at a match radius. Shares the matching code path with the
// training reward so evaluation can never drift from the optimized target.
F1Stats detection_f1(const std::vector<Point>& pred, const std::vector<Point>& gt,
                     double r_thresh);

// Aggregate Jaccard index over two instance mask sets on one raster.
// Ground truth claims predictions greedily in index order: each gt takes the
// unused prediction with the highest IoU among those it intersects at all.
// Unclaimed gt area and never-claimed prediction area inflate the
// denominator. Both sides empty scores 1. Predictions must be pairwise
// disjoint.
double aji(const std::vector<Mask>& pred, const std::vector<Mask>& gt);

struct ScenePrediction {
    bool format_ok = false;
    std::vector<Point> points;
    std::vector<Mask> masks; // instance masks on the scene raster
};

// Called once per scene with its index in the split. Must be safe to call
// concurrently for distinct scenes.
using PredictionProvider = std::function<ScenePrediction(const Scene&, size_t)>;

struct SceneRecord {
    bool format_ok = false;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double pq = 0.0;
    double dq = 0.0;
    double sq = 0.0;
    double aji = 0.0;
    int n_pred = 0;
    int n_gt = 0;
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

struct EvalConfig {
    double r_thresh = 6.0;
    SegmenterConfig seg;
};

struct EvalReport {
    std::vector<SceneRecord> scenes;
    double f1 = 0.0; // aggregates: unweighted mean over scenes
    double precision = 0.0;
    double recall = 0.0;
    double pq = 0.0;
    double dq = 0.0;
    double sq = 0.0;
    double aji = 0.0;
    int format_failures = 0;
    double r_thresh = 0.0;
    std::string iou_rule = "iou>0.5";

    std::string to_json() const;
    // One row per scene, tab-separated, header first.
    std::string to_tsv() const;
};

// Scores every scene of the split: det-F1 against instance centroids, PQ and
// AJI against instance masks. A format failure zeroes that scene's record
// and is tallied; aggregates average over all scenes, failures included.
EvalReport evaluate_split(const std::vector<Scene>& split,
                          const PredictionProvider& provider,
                          const EvalConfig& cfg = {});

// Greedy argmax decoding plus prompted segmentation at the decoded points.
// The returned callable references params; keep both alive while evaluating.
PredictionProvider policy_provider(const PolicyParams& params, const SegmenterConfig& seg);

} // namespace pointseq
