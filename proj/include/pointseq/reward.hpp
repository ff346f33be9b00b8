#pragma once

#include <cstdint>
#include <vector>

#include "pointseq/geometry.hpp"
#include "pointseq/model.hpp"
#include "pointseq/scene.hpp"

namespace pointseq {

// Min-cost bipartite assignment between predicted and ground-truth points.
struct AssignedPair {
    int pred = 0;
    int gt = 0;
    double distance = 0.0;
    bool operator==(const AssignedPair&) const = default;
};

struct Assignment {
    int n_pred = 0;
    int n_gt = 0;
    std::vector<AssignedPair> pairs; // size min(n_pred, n_gt), pred ascending
    double cost = 0.0;               // sum of matched distances
};

// Minimizes total Euclidean distance over all injections of the smaller
// side into the larger. Ties between equal-cost optima resolve to the
// lexicographically smallest assignment (by gt index per pred, in pred
// order, unmatched sorting last).
Assignment hungarian_match(const std::vector<Point>& pred,
                           const std::vector<Point>& gt);

struct MatchResult {
    std::vector<AssignedPair> pairs;
    std::vector<int> tp_pred; // matched with distance <= r_thresh, ascending
    std::vector<int> fp_pred; // far-matched or unmatched predictions
    std::vector<int> fn_gt;   // ground truth without a close prediction
    double r_thresh = 0.0;
    int tp() const { return static_cast<int>(tp_pred.size()); }
    int fp() const { return static_cast<int>(fp_pred.size()); }
    int fn() const { return static_cast<int>(fn_gt.size()); }
};

// r_thresh > 0. tp/fp partition the predictions; tp + fn equals n_gt.
MatchResult classify_matches(const Assignment& a, double r_thresh);

struct F1Stats {
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

// Conventions: no predictions and no ground truth scores 1; otherwise
// any result with zero true positives scores 0.
F1Stats f1_stats(const MatchResult& m);
double dm_reward(const MatchResult& m);

struct SegmenterConfig {
    double threshold = 0.5; // foreground intensity level
    double cap = 10.0;      // max pixel distance from prompt to claimed pixel
};

// Point-prompted segmentation: every pixel at or above the threshold is
// assigned to the nearest prompt within the cap (ties to the lower prompt
// index). Masks are pairwise disjoint; a background prompt yields an empty
// mask. Increments the global call counter.
std::vector<Mask> toy_segment(const std::vector<Point>& points,
                              const Scene& scene,
                              const SegmenterConfig& cfg = {});

// Process-wide segmenter call count, used to confirm configurations that
// should never invoke segmentation.
uint64_t toy_segment_call_count();
void reset_toy_segment_call_count();

struct PqStats {
    double pq = 0.0;
    double dq = 0.0;
    double sq = 0.0;
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

// Pairs pred/gt masks with IoU strictly above 0.5 (at most one partner
// each), then pq = sum of matched IoU / (tp + fp/2 + fn/2). Both lists
// empty scores 1 across the board.
PqStats panoptic_quality(const std::vector<Mask>& pred,
                         const std::vector<Mask>& gt);
double pq_reward(const std::vector<Mask>& pred, const std::vector<Mask>& gt);

struct RewardConfig {
    double r_thresh = 6.0;
    double gamma = 0.0;
    bool use_pq = false; // segmenter runs only when set
    SegmenterConfig seg;
};

struct RewardBreakdown {
    double r_dm = 0.0;
    double r_pq = 0.0;
    double gamma = 0.0;
    double r_total = 0.0;
    bool format_ok = false;
};

// Format failure yields the all-zero breakdown. Otherwise
// r_total = r_dm + gamma * r_pq, with r_pq = 0 when use_pq is off.
// match_out, when given, receives the detection matching for valid
// rollouts (left empty otherwise).
RewardBreakdown rollout_reward(const Rollout& rollout, const Scene& scene,
                               const RewardConfig& cfg,
                               MatchResult* match_out = nullptr);

} // namespace pointseq
