#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "pointseq/errors.hpp"
#include "pointseq/reward.hpp"
#include "pointseq/rng.hpp"
#include "pointseq/tokenizer.hpp"

using namespace pointseq;

namespace {

// Exhaustive search over all injections of predictions into ground truth
// (or the reverse), tracking the cheapest assignment; ties resolve to the
// lexicographically smallest pred -> gt vector with unmatched last.
struct BruteResult {
    double cost = std::numeric_limits<double>::infinity();
    std::vector<int> assign; // per pred: gt index or -1
};

void brute_dfs(const std::vector<Point>& pred, const std::vector<Point>& gt,
               size_t i, int unmatched_left, double cur, std::vector<int>& a,
               std::vector<char>& used, BruteResult& best) {
    if (i == pred.size()) {
        const double tol = 1e-9 * (1.0 + std::min(best.cost, cur));
        if (cur < best.cost - tol) {
            best = {cur, a};
        } else if (cur <= best.cost + tol) {
            auto rank = [](int v) { return v < 0 ? std::numeric_limits<int>::max() : v; };
            for (size_t j = 0; j < a.size(); ++j) {
                if (rank(a[j]) == rank(best.assign[j])) continue;
                if (rank(a[j]) < rank(best.assign[j])) best = {cur, a};
                break;
            }
        }
        return;
    }
    for (size_t j = 0; j < gt.size(); ++j) {
        if (used[j]) continue;
        used[j] = 1;
        a[i] = static_cast<int>(j);
        brute_dfs(pred, gt, i + 1, unmatched_left, cur + distance(pred[i], gt[j]), a,
                  used, best);
        used[j] = 0;
    }
    if (unmatched_left > 0) {
        a[i] = -1;
        brute_dfs(pred, gt, i + 1, unmatched_left - 1, cur, a, used, best);
    }
    a[i] = -2;
}

BruteResult brute_match(const std::vector<Point>& pred, const std::vector<Point>& gt) {
    BruteResult best;
    std::vector<int> a(pred.size(), -2);
    std::vector<char> used(gt.size(), 0);
    int unmatched = static_cast<int>(pred.size()) -
                    static_cast<int>(std::min(pred.size(), gt.size()));
    brute_dfs(pred, gt, 0, unmatched, 0.0, a, used, best);
    if (pred.empty()) best.cost = 0.0;
    return best;
}

std::vector<int> assign_vector(const Assignment& a) {
    std::vector<int> v(a.n_pred, -1);
    for (const auto& p : a.pairs) v[p.pred] = p.gt;
    return v;
}

std::vector<Point> random_points(Rng& rng, int n, double span) {
    std::vector<Point> pts;
    for (int i = 0; i < n; ++i)
        pts.push_back({rng.uniform(0.0, span), rng.uniform(0.0, span)});
    return pts;
}

MatchResult match_points(const std::vector<Point>& pred,
                         const std::vector<Point>& gt, double r) {
    return classify_matches(hungarian_match(pred, gt), r);
}

Mask rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
    Mask m(w, h);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.set(x, y);
    return m;
}

Scene blank_scene(int w, int h) {
    Scene s;
    s.w = w;
    s.h = h;
    s.intensity.assign(static_cast<size_t>(w) * h, 0.0);
    return s;
}

Rollout rollout_from_points(const std::vector<Point>& pts, const Scene& scene,
                            const Vocabulary& vocab) {
    Rollout r;
    r.tokens = encode_points(pts, scene.w, scene.h, vocab.k);
    r.parsed = parse_sequence(r.tokens, vocab, scene.w, scene.h);
    return r;
}

} // namespace

TEST_SUITE("reward") {

TEST_CASE("identical point sets pair identically at zero cost") {
    std::vector<Point> pts = {{3.2, 4.1}, {10.0, 10.0}, {50.5, 20.25}};
    Assignment a = hungarian_match(pts, pts);
    REQUIRE(a.pairs.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(a.pairs[i].pred == i);
        CHECK(a.pairs[i].gt == i);
        CHECK(a.pairs[i].distance == 0.0);
    }
    CHECK(a.cost == 0.0);
}

TEST_CASE("empty sides yield empty assignments") {
    std::vector<Point> two = {{1.0, 1.0}, {2.0, 2.0}};
    for (auto& [pred, gt] : {std::pair{std::vector<Point>{}, two},
                             std::pair{two, std::vector<Point>{}},
                             std::pair{std::vector<Point>{}, std::vector<Point>{}}}) {
        Assignment a = hungarian_match(pred, gt);
        CHECK(a.pairs.empty());
        CHECK(a.cost == 0.0);
        CHECK(a.n_pred == static_cast<int>(pred.size()));
        CHECK(a.n_gt == static_cast<int>(gt.size()));
    }
}

TEST_CASE("matching equals the exhaustive optimum on small instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        int np = static_cast<int>(rng.uniform_int(8));
        int ng = static_cast<int>(rng.uniform_int(8));
        auto pred = random_points(rng, np, 64.0);
        auto gt = random_points(rng, ng, 64.0);
        Assignment a = hungarian_match(pred, gt);
        BruteResult b = brute_match(pred, gt);
        if (np == 0 || ng == 0) {
            CHECK(a.pairs.empty());
            continue;
        }
        CHECK(a.cost == doctest::Approx(b.cost).epsilon(1e-9));
        CHECK(a.pairs.size() == static_cast<size_t>(std::min(np, ng)));
        std::vector<char> gt_used(ng, 0);
        int last_pred = -1;
        for (const auto& p : a.pairs) {
            CHECK(p.pred > last_pred);
            last_pred = p.pred;
            CHECK(!gt_used[p.gt]);
            gt_used[p.gt] = 1;
        }
    }
}

TEST_CASE("equal-cost optima resolve to the lexicographically smallest pairing") {
    // Two coincident predictions, two ground-truth points at equal range.
    Assignment a = hungarian_match({{0.0, 0.0}, {0.0, 0.0}}, {{1.0, 0.0}, {0.0, 1.0}});
    REQUIRE(a.pairs.size() == 2);
    CHECK(a.pairs[0].pred == 0);
    CHECK(a.pairs[0].gt == 0);
    CHECK(a.pairs[1].gt == 1);

    // Surplus predictions: the earlier of two equally good candidates wins.
    Assignment b = hungarian_match({{0.0, 0.0}, {5.0, 5.0}, {0.0, 0.0}}, {{0.0, 0.0}});
    REQUIRE(b.pairs.size() == 1);
    CHECK(b.pairs[0].pred == 0);
    CHECK(b.pairs[0].gt == 0);
    CHECK(b.cost == 0.0);

    // Integer grids collide constantly; compare the full assignment vector
    // against the exhaustive lexicographic optimum.
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        int np = 1 + static_cast<int>(rng.uniform_int(4));
        int ng = 1 + static_cast<int>(rng.uniform_int(4));
        std::vector<Point> pred, gt;
        for (int i = 0; i < np; ++i)
            pred.push_back({static_cast<double>(rng.uniform_int(4)),
                            static_cast<double>(rng.uniform_int(4))});
        for (int j = 0; j < ng; ++j)
            gt.push_back({static_cast<double>(rng.uniform_int(4)),
                          static_cast<double>(rng.uniform_int(4))});
        Assignment got = hungarian_match(pred, gt);
        BruteResult want = brute_match(pred, gt);
        CHECK(assign_vector(got) == want.assign);
    }
}

TEST_CASE("classification splits matched pairs at the threshold") {
    MatchResult exact = match_points({{30.0, 30.0}}, {{30.0, 30.0}}, 6.0);
    CHECK(exact.tp() == 1);
    CHECK(exact.fp() == 0);
    CHECK(exact.fn() == 0);

    MatchResult far = match_points({{0.0, 0.0}}, {{10.0, 0.0}}, 6.0);
    CHECK(far.tp() == 0);
    CHECK(far.fp() == 1);
    CHECK(far.fn() == 1);
    CHECK(far.pairs.size() == 1); // still matched, just beyond the threshold

    MatchResult mixed = match_points({{0.0, 0.0}, {20.0, 0.0}, {40.0, 0.0}},
                                     {{1.0, 0.0}, {21.0, 0.0}}, 6.0);
    CHECK(mixed.tp() == 2);
    CHECK(mixed.fp() == 1);
    CHECK(mixed.fn() == 0);
    CHECK(mixed.tp_pred == std::vector<int>{0, 1});
    CHECK(mixed.fp_pred == std::vector<int>{2});

    CHECK_THROWS_AS(classify_matches(Assignment{}, 0.0), ConfigError);
}

TEST_CASE("f1 follows the empty and zero-tp conventions") {
    F1Stats empty = f1_stats(match_points({}, {}, 6.0));
    CHECK(empty.f1 == 1.0);
    CHECK(empty.precision == 1.0);
    CHECK(empty.recall == 1.0);

    Rng rng(1);
    CHECK(dm_reward(match_points({}, random_points(rng, 3, 64.0), 6.0)) == 0.0);

    MatchResult half = match_points({{10.0, 10.0}}, {{10.0, 10.0}, {40.0, 40.0}}, 6.0);
    F1Stats s = f1_stats(half);
    CHECK(s.precision == 1.0);
    CHECK(s.recall == 0.5);
    CHECK(s.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    // Reward saturates only when every prediction is a distinct hit.
    std::vector<Point> gts = {{10.0, 10.0}, {30.0, 30.0}};
    CHECK(dm_reward(match_points(gts, gts, 6.0)) == 1.0);
    CHECK(dm_reward(match_points({gts[0]}, gts, 6.0)) < 1.0);
    CHECK(dm_reward(match_points({gts[0], gts[1], {50.0, 50.0}}, gts, 6.0)) < 1.0);
    CHECK(dm_reward(match_points({{50.0, 50.0}}, {{50.0, 50.0}, {50.0, 50.0}}, 6.0)) < 1.0);
}

TEST_CASE("detection reward is invariant under prediction permutation") {
    Rng rng(5150);
    for (int trial = 0; trial < 50; ++trial) {
        int np = 1 + static_cast<int>(rng.uniform_int(7));
        int ng = 1 + static_cast<int>(rng.uniform_int(7));
        auto pred = random_points(rng, np, 64.0);
        auto gt = random_points(rng, ng, 64.0);

        std::vector<size_t> perm(pred.size());
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
        std::vector<Point> shuffled(pred.size());
        for (size_t i = 0; i < perm.size(); ++i) shuffled[i] = pred[perm[i]];

        MatchResult base = match_points(pred, gt, 6.0);
        MatchResult moved = match_points(shuffled, gt, 6.0);
        CHECK(base.tp() == moved.tp());
        CHECK(base.fp() == moved.fp());
        CHECK(base.fn() == moved.fn());
        CHECK(dm_reward(base) == dm_reward(moved));
    }
}

TEST_CASE("toy segmentation covers discs prompted at their centroids") {
    SceneConfig cfg;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Scene s = generate_scene(cfg, seed);
        std::vector<Point> prompts;
        for (const auto& inst : s.instances) prompts.push_back(inst.centroid);
        auto masks = toy_segment(prompts, s);
        REQUIRE(masks.size() == s.instances.size());

        size_t bit_sum = 0;
        Mask unioned(s.w, s.h);
        for (size_t i = 0; i < masks.size(); ++i) {
            CHECK(mask_iou(masks[i], s.instances[i].mask) >= 0.9);
            bit_sum += masks[i].count();
            for (size_t b = 0; b < unioned.bits.size(); ++b)
                unioned.bits[b] |= masks[i].bits[b];
        }
        CHECK(unioned.count() == bit_sum); // pairwise disjoint

        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                if (unioned.get(x, y))
                    CHECK(s.intensity[static_cast<size_t>(y) * s.w + x] >= 0.5);
    }
}

TEST_CASE("background prompts, duplicates, and bad inputs") {
    Scene s = blank_scene(24, 24);
    for (int y = 20; y < 23; ++y)
        for (int x = 20; x < 23; ++x) s.intensity[static_cast<size_t>(y) * 24 + x] = 0.8;

    auto far = toy_segment({{2.0, 2.0}}, s);
    CHECK(far[0].count() == 0); // bright block is beyond the cap

    auto dup = toy_segment({{21.0, 21.0}, {21.0, 21.0}}, s);
    CHECK(dup[0].count() == 9); // every tie resolves to the lower index
    CHECK(dup[1].count() == 0);

    CHECK_THROWS_AS(toy_segment({{-1.0, 5.0}}, s), ConfigError);
    CHECK_THROWS_AS(toy_segment({{5.0, 5.0}}, s, {0.5, 0.0}), ConfigError);
}

TEST_CASE("segmenter call counter tracks invocations") {
    Scene s = blank_scene(8, 8);
    reset_toy_segment_call_count();
    CHECK(toy_segment_call_count() == 0);
    for (int i = 0; i < 3; ++i) toy_segment({}, s);
    CHECK(toy_segment_call_count() == 3);
    reset_toy_segment_call_count();
    CHECK(toy_segment_call_count() == 0);
}

TEST_CASE("panoptic quality matches the rectangle construction") {
    Mask gt = rect_mask(20, 20, 0, 0, 10, 10);
    Mask pred = rect_mask(20, 20, 0, 0, 6, 10);
    PqStats s = panoptic_quality({pred}, {gt});
    CHECK(s.tp == 1);
    CHECK(s.pq == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(s.dq == 1.0);
    CHECK(s.sq == doctest::Approx(0.6).epsilon(1e-12));

    PqStats ident = panoptic_quality({gt, pred}, {gt, pred});
    CHECK(ident.pq == 1.0);

    PqStats misses = panoptic_quality({Mask(20, 20), Mask(20, 20)}, {gt});
    CHECK(misses.tp == 0);
    CHECK(misses.fp == 2);
    CHECK(misses.fn == 1);
    CHECK(misses.pq == 0.0);

    PqStats both_empty = panoptic_quality({}, {});
    CHECK(both_empty.pq == 1.0);
    CHECK(both_empty.dq == 1.0);
    CHECK(both_empty.sq == 1.0);

    CHECK_THROWS_AS(panoptic_quality({Mask(10, 10)}, {Mask(20, 20)}), ConfigError);
}

TEST_CASE("pq factorizes into dq times sq") {
    SceneConfig cfg;
    Rng rng(31);
    for (uint64_t seed = 40; seed < 52; ++seed) {
        Scene s = generate_scene(cfg, seed);
        std::vector<Point> prompts;
        std::vector<Mask> gts;
        for (const auto& inst : s.instances) {
            gts.push_back(inst.mask);
            if (rng.uniform() < 0.8) prompts.push_back(inst.centroid); // drop some
        }
        prompts.push_back({rng.uniform(0.0, 64.0), rng.uniform(0.0, 64.0)});
        PqStats p = panoptic_quality(toy_segment(prompts, s), gts);
        CHECK(p.pq >= 0.0);
        CHECK(p.pq <= 1.0);
        CHECK(std::abs(p.pq - p.dq * p.sq) <= 1e-9);
    }
}

TEST_CASE("rollout rewards gate on format and compose linearly") {
    Vocabulary vocab{64, 0};
    SceneConfig cfg;
    Scene s = generate_scene(cfg, 5);
    std::vector<Point> centroids;
    std::vector<Mask> gt_masks;
    for (const auto& inst : s.instances) {
        centroids.push_back(inst.centroid);
        gt_masks.push_back(inst.mask);
    }

    Rollout bad;
    bad.tokens.ids = {vocab.bos()};
    bad.parsed = parse_sequence(bad.tokens, vocab, s.w, s.h);
    REQUIRE(!bad.format_ok());
    reset_toy_segment_call_count();
    MatchResult match;
    RewardBreakdown rb = rollout_reward(bad, s, {6.0, 0.5, true, {}}, &match);
    CHECK(rb.r_total == 0.0);
    CHECK(rb.r_dm == 0.0);
    CHECK(rb.r_pq == 0.0);
    CHECK(!rb.format_ok);
    CHECK(match.pairs.empty());
    CHECK(toy_segment_call_count() == 0); // gated before segmentation

    Rollout good = rollout_from_points(centroids, s, vocab);
    REQUIRE(good.format_ok());
    RewardBreakdown dm_only = rollout_reward(good, s, {6.0, 0.0, false, {}});
    CHECK(dm_only.format_ok);
    CHECK(dm_only.r_dm == 1.0);
    CHECK(dm_only.r_total == 1.0);
    CHECK(toy_segment_call_count() == 0); // detection-only never segments

    RewardBreakdown with_pq = rollout_reward(good, s, {6.0, 0.5, true, {}});
    const auto& parsed = std::get<ParsedDetections>(good.parsed);
    double p = pq_reward(toy_segment(parsed.points, s), gt_masks);
    CHECK(p > 0.0);
    CHECK(with_pq.r_pq == p);
    CHECK(with_pq.r_total == doctest::Approx(1.0 + 0.5 * p).epsilon(1e-12));
}

} // TEST_SUITE
