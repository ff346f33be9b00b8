#include "pointseq/reward.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "pointseq/errors.hpp"

namespace pointseq {
namespace {

constexpr double kBig = 1e9; // dwarfs any pixel distance on a raster

// Square min-cost perfect matching via shortest augmenting paths with
// potentials. a is m x m; returns col -> row.
std::vector<int> solve_square(const std::vector<std::vector<double>>& a) {
    const int n = static_cast<int>(a.size());
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = -1;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_of_col(n, -1);
    for (int j = 1; j <= n; ++j) row_of_col[j - 1] = p[j] - 1;
    return row_of_col;
}

// Total matched distance with per-prediction constraints: -2 free,
// -1 forced unmatched, j >= 0 forced onto gt j. Infinity when infeasible.
double constrained_total(const std::vector<Point>& pred,
                         const std::vector<Point>& gt,
                         const std::vector<int>& forced) {
    const int np = static_cast<int>(pred.size());
    const int ng = static_cast<int>(gt.size());
    const int m = std::max(np, ng);
    std::vector<std::vector<double>> a(m, std::vector<double>(m, 0.0));
    for (int i = 0; i < np; ++i)
        for (int j = 0; j < ng; ++j) a[i][j] = distance(pred[i], gt[j]);
    for (int i = 0; i < np; ++i) {
        if (forced[i] == -2) continue;
        for (int j = 0; j < m; ++j) {
            bool allowed = forced[i] == -1 ? j >= ng : j == forced[i];
            if (!allowed) a[i][j] = kBig;
        }
    }
    auto row_of_col = solve_square(a);
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
        int i = row_of_col[j];
        if (a[i][j] >= kBig / 2) return std::numeric_limits<double>::infinity();
        if (i < np && j < ng) total += a[i][j];
    }
    return total;
}

} // namespace

Assignment hungarian_match(const std::vector<Point>& pred,
                           const std::vector<Point>& gt) {
    Assignment out;
    out.n_pred = static_cast<int>(pred.size());
    out.n_gt = static_cast<int>(gt.size());
    if (pred.empty() || gt.empty()) return out;

    std::vector<int> forced(pred.size(), -2);
    const double optimum = constrained_total(pred, gt, forced);
    const double tol = 1e-9 * (1.0 + std::abs(optimum));

    // Fix predictions one by one, taking the lowest gt index (unmatched
    // last) that still reaches the optimal total. This selects the
    // lexicographically smallest optimum and keeps ties deterministic.
    std::vector<char> used_gt(gt.size(), 0);
    int unmatched_budget = std::max(out.n_pred - out.n_gt, 0);
    for (int i = 0; i < out.n_pred; ++i) {
        int chosen = -3;
        for (int j = 0; j < out.n_gt && chosen == -3; ++j) {
            if (used_gt[j]) continue;
            forced[i] = j;
            if (constrained_total(pred, gt, forced) <= optimum + tol) chosen = j;
        }
        if (chosen == -3 && unmatched_budget > 0) {
            forced[i] = -1;
            if (constrained_total(pred, gt, forced) <= optimum + tol) chosen = -1;
        }
        if (chosen == -3) {
            // Drift beyond the tolerance: fall back to the cheapest
            // remaining candidate, still lowest-index on exact ties.
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < out.n_gt; ++j) {
                if (used_gt[j]) continue;
                forced[i] = j;
                double c = constrained_total(pred, gt, forced);
                if (c < best) {
                    best = c;
                    chosen = j;
                }
            }
            if (unmatched_budget > 0) {
                forced[i] = -1;
                if (constrained_total(pred, gt, forced) < best) chosen = -1;
            }
        }
        forced[i] = chosen;
        if (chosen >= 0) {
            used_gt[chosen] = 1;
            out.pairs.push_back({i, chosen, distance(pred[i], gt[chosen])});
            out.cost += out.pairs.back().distance;
        } else {
            --unmatched_budget;
        }
    }
    return out;
}

MatchResult classify_matches(const Assignment& a, double r_thresh) {
    if (!(r_thresh > 0.0))
        throw ConfigError("classify_matches: r_thresh must be positive");
    MatchResult m;
    m.r_thresh = r_thresh;
    m.pairs = a.pairs;
    std::vector<char> pred_matched(a.n_pred, 0), gt_close(a.n_gt, 0);
    for (const auto& pr : a.pairs) {
        pred_matched[pr.pred] = 1;
        if (pr.distance <= r_thresh) {
            m.tp_pred.push_back(pr.pred);
            gt_close[pr.gt] = 1;
        } else {
            m.fp_pred.push_back(pr.pred);
        }
    }
    for (int i = 0; i < a.n_pred; ++i)
        if (!pred_matched[i]) m.fp_pred.push_back(i);
    std::sort(m.fp_pred.begin(), m.fp_pred.end());
    for (int j = 0; j < a.n_gt; ++j)
        if (!gt_close[j]) m.fn_gt.push_back(j);
    return m;
}

F1Stats f1_stats(const MatchResult& m) {
    F1Stats s;
    s.tp = m.tp();
    s.fp = m.fp();
    s.fn = m.fn();
    const int n_pred = s.tp + s.fp;
    const int n_gt = s.tp + s.fn;
    if (n_pred == 0 && n_gt == 0) {
        s.f1 = s.precision = s.recall = 1.0;
        return s;
    }
    s.precision = n_pred > 0 ? static_cast<double>(s.tp) / n_pred : 0.0;
    s.recall = n_gt > 0 ? static_cast<double>(s.tp) / n_gt : 0.0;
    double denom = s.precision + s.recall;
    s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
    return s;
}

double dm_reward(const MatchResult& m) { return f1_stats(m).f1; }

namespace {
std::atomic<uint64_t> g_segment_calls{0};
} // namespace

std::vector<Mask> toy_segment(const std::vector<Point>& points,
                              const Scene& scene, const SegmenterConfig& cfg) {
    g_segment_calls.fetch_add(1, std::memory_order_relaxed);
    if (!(cfg.cap > 0.0)) throw ConfigError("toy_segment: cap must be positive");
    for (const auto& p : points)
        if (p.x < 0.0 || p.x > scene.w || p.y < 0.0 || p.y > scene.h)
            throw ConfigError("toy_segment: prompt outside the scene");

    std::vector<Mask> masks(points.size(), Mask(scene.w, scene.h));
    const double cap2 = cfg.cap * cfg.cap;
    for (int y = 0; y < scene.h; ++y)
        for (int x = 0; x < scene.w; ++x) {
            if (scene.intensity[static_cast<size_t>(y) * scene.w + x] <
                cfg.threshold)
                continue;
            int best = -1;
            double best_d2 = 0.0;
            for (size_t i = 0; i < points.size(); ++i) {
                double dx = x - points[i].x, dy = y - points[i].y;
                double d2 = dx * dx + dy * dy;
                if (d2 > cap2) continue;
                if (best < 0 || d2 < best_d2) {
                    best = static_cast<int>(i);
                    best_d2 = d2;
                }
            }
            if (best >= 0) masks[best].set(x, y);
        }
    return masks;
}

uint64_t toy_segment_call_count() {
    return g_segment_calls.load(std::memory_order_relaxed);
}

void reset_toy_segment_call_count() {
    g_segment_calls.store(0, std::memory_order_relaxed);
}

PqStats panoptic_quality(const std::vector<Mask>& pred,
                         const std::vector<Mask>& gt) {
    for (const auto& m : pred)
        if (!gt.empty() && (m.w != gt[0].w || m.h != gt[0].h))
            throw ConfigError("panoptic_quality: raster mismatch");
    for (size_t i = 1; i < gt.size(); ++i)
        if (gt[i].w != gt[0].w || gt[i].h != gt[0].h)
            throw ConfigError("panoptic_quality: raster mismatch");
    for (size_t i = 1; i < pred.size(); ++i)
        if (pred[i].w != pred[0].w || pred[i].h != pred[0].h)
            throw ConfigError("panoptic_quality: raster mismatch");

    PqStats s;
    if (pred.empty() && gt.empty()) {
        s.pq = s.dq = s.sq = 1.0;
        return s;
    }
    // IoU above one half pins each mask to at most one partner, so a
    // single scan finds every match.
    std::vector<char> pred_used(pred.size(), 0);
    double iou_sum = 0.0;
    for (const auto& g : gt) {
        for (size_t i = 0; i < pred.size(); ++i) {
            if (pred_used[i]) continue;
            double iou = mask_iou(pred[i], g);
            if (iou > 0.5) {
                pred_used[i] = 1;
                iou_sum += iou;
                ++s.tp;
                break;
            }
        }
    }
    s.fp = static_cast<int>(pred.size()) - s.tp;
    s.fn = static_cast<int>(gt.size()) - s.tp;
    const double denom = s.tp + 0.5 * s.fp + 0.5 * s.fn;
    s.pq = iou_sum / denom;
    s.dq = s.tp / denom;
    s.sq = s.tp > 0 ? iou_sum / s.tp : 0.0;
    return s;
}

double pq_reward(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
    return panoptic_quality(pred, gt).pq;
}

RewardBreakdown rollout_reward(const Rollout& rollout, const Scene& scene,
                               const RewardConfig& cfg,
                               MatchResult* match_out) {
    RewardBreakdown out;
    out.gamma = cfg.gamma;
    if (match_out) *match_out = MatchResult{};
    if (!rollout.format_ok()) return out;

    const auto& parsed = std::get<ParsedDetections>(rollout.parsed);
    std::vector<Point> gts;
    gts.reserve(scene.instances.size());
    for (const auto& inst : scene.instances) gts.push_back(inst.centroid);

    MatchResult match =
        classify_matches(hungarian_match(parsed.points, gts), cfg.r_thresh);
    out.r_dm = dm_reward(match);
    if (cfg.use_pq) {
        std::vector<Mask> gt_masks;
        gt_masks.reserve(scene.instances.size());
        for (const auto& inst : scene.instances) gt_masks.push_back(inst.mask);
        out.r_pq = pq_reward(toy_segment(parsed.points, scene, cfg.seg), gt_masks);
    }
    out.r_total = out.r_dm + cfg.gamma * out.r_pq;
    out.format_ok = true;
    if (match_out) *match_out = std::move(match);
    return out;
}

} // namespace pointseq
