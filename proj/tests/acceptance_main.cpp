// Acceptance gate: one check per shipped claim, one [PASS]/[FAIL] line each,
// nonzero exit if any fail. The later criteria run real experiments and are
// the slow part; everything through criterion 8 finishes in seconds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pointseq/commands.hpp"
#include "pointseq/config.hpp"
#include "pointseq/decoder.hpp"
#include "pointseq/errors.hpp"
#include "pointseq/grpo.hpp"
#include "pointseq/metrics.hpp"
#include "pointseq/model.hpp"
#include "pointseq/reward.hpp"
#include "pointseq/rng.hpp"
#include "pointseq/scene.hpp"
#include "pointseq/supervision.hpp"
#include "pointseq/tokenizer.hpp"

#include "grad_check.hpp"

using namespace pointseq;
namespace fs = std::filesystem;

namespace {

struct Check {
    bool ok = true;
    std::string detail;
    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path workspace() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "pointseq_acceptance";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// ------------------------------------------------------------- criterion 1

Check tokenizer_round_trip() {
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    const int k = 64;
    Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform();
        double back = dequantize(quantize(u, k), k);
        worst = std::max(worst, std::abs(back - u));
    }
    c.require(worst <= 1.0 / (2 * k) + 1e-15,
              "quantization error " + fmt(worst) + " above half bin width");

    const int w = 64, h = 48;
    for (int rep = 0; rep < 200; ++rep) {
        int n = static_cast<int>(rng.uniform_int(13));
        std::vector<Point> pts(n);
        for (Point& p : pts) p = {rng.uniform() * w, rng.uniform() * h};
        ParseResult res = parse_sequence(encode_points(pts, w, h, k), Vocabulary{k, 0}, w, h);
        if (!std::holds_alternative<ParsedDetections>(res)) {
            c.require(false, "encoded sequence failed to parse");
            break;
        }
        std::vector<Point> centers(n);
        for (int i = 0; i < n; ++i)
            centers[i] = {dequantize(quantize(pts[i].x / w, k), k) * w,
                          dequantize(quantize(pts[i].y / h, k), k) * h};
        centers = raster_sort(std::move(centers), w, h, k);
        const auto& got = std::get<ParsedDetections>(res).points;
        bool same = got.size() == centers.size();
        for (size_t i = 0; same && i < got.size(); ++i)
            same = got[i].x == centers[i].x && got[i].y == centers[i].y;
        if (!same) {
            c.require(false, "decoded points are not the bin centers");
            break;
        }
    }
    double dt = elapsed_s(t0);
    c.require(dt < 1.0, "took " + fmt(dt) + " s, budget 1 s");
    if (c.ok) c.detail = fmt(dt) + " s";
    return c;
}

// ------------------------------------------------------------- criterion 2

double brute_force_cost(const std::vector<Point>& pred, const std::vector<Point>& gt) {
    const bool pred_small = pred.size() <= gt.size();
    const auto& small = pred_small ? pred : gt;
    const auto& large = pred_small ? gt : pred;
    if (small.empty()) return 0.0;
    Mat d(small.size(), large.size());
    for (size_t i = 0; i < small.size(); ++i)
        for (size_t j = 0; j < large.size(); ++j)
            d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                distance(small[i], large[j]);
    std::vector<int> idx(large.size());
    std::iota(idx.begin(), idx.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double cost = 0.0;
        for (size_t i = 0; i < small.size(); ++i)
            cost += d(static_cast<Eigen::Index>(i), idx[i]);
        best = std::min(best, cost);
    } while (std::next_permutation(idx.begin(), idx.end()));
    return best;
}

Check hungarian_oracle() {
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(202);
    for (int rep = 0; rep < 1000 && c.ok; ++rep) {
        int a = 1 + static_cast<int>(rng.uniform_int(7)); // small side 1..7
        int b = a + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(9 - a)));
        int n_pred = a, n_gt = b;
        if (rng.uniform() < 0.5) std::swap(n_pred, n_gt);
        std::vector<Point> pred(n_pred), gt(n_gt);
        for (Point& p : pred) p = {rng.uniform() * 100, rng.uniform() * 100};
        for (Point& p : gt) p = {rng.uniform() * 100, rng.uniform() * 100};
        double fast = hungarian_match(pred, gt).cost;
        double slow = brute_force_cost(pred, gt);
        c.require(std::abs(fast - slow) <= 1e-9,
                  "case " + std::to_string(rep) + ": assignment cost " + fmt(fast) +
                      " vs exhaustive " + fmt(slow));
    }
    double dt = elapsed_s(t0);
    c.require(dt < 30.0, "took " + fmt(dt) + " s, budget 30 s");
    if (c.ok) c.detail = fmt(dt) + " s";
    return c;
}

// ------------------------------------------------------------- criterion 3

Check gradient_suite() {
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(303);

    // standalone soft-NTP loss: perturb logits
    {
        Vocabulary vocab{8, 2};
        Mat logits(vocab.size(), 4);
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            for (Eigen::Index i = 0; i < logits.rows(); ++i) logits(i, j) = rng.gaussian();
        std::vector<int> targets = {2, vocab.lbrack(), 5, vocab.eos()};
        auto loss_of = [&] { return soft_ntp_loss(logits, targets, vocab, 1.0).loss; };
        NtpResult res = soft_ntp_loss(logits, targets, vocab, 1.0);
        double worst = 0.0;
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            for (Eigen::Index i = 0; i < logits.rows(); ++i) {
                double num = testutil::central_difference(&logits(i, j), loss_of, 1e-5);
                worst = std::max(worst, testutil::relative_error(res.dlogits(i, j), num));
            }
        c.require(worst < 1e-4, "soft-NTP gradient off by " + fmt(worst));
    }

    // standalone CoVT (BCE + Dice) loss: perturb pixel logits
    {
        Mask gt(8, 8);
        for (int y = 2; y < 6; ++y)
            for (int x = 2; x < 6; ++x) gt.set(x, y);
        Vec z(64);
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.gaussian();
        auto loss_of = [&] { return covt_loss(z, gt).loss; };
        CovtResult res = covt_loss(z, gt);
        double worst = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            double num = testutil::central_difference(&z(i), loss_of, 1e-5);
            worst = std::max(worst, testutil::relative_error(res.dlogits(i), num));
        }
        c.require(worst < 1e-4, "CoVT gradient off by " + fmt(worst));
    }

    // tiny full policy + frozen decoder, one scene
    ModelConfig mc;
    mc.k = 16;
    mc.l = 2;
    mc.d = 8;
    mc.n_heads = 2;
    mc.n_blocks = 1;
    mc.patch = 4;
    mc.scene_w = 16;
    mc.scene_h = 16;
    mc.max_tokens = 18;
    SceneConfig sc;
    sc.w = 16;
    sc.h = 16;
    sc.count_lo = 1;
    sc.count_hi = 2;
    sc.radius_lo = 2.0;
    sc.radius_hi = 3.0;
    sc.min_sep = 6.0;
    Scene scene = generate_scene(sc, 5);
    Mask fg = foreground_mask(scene);
    std::vector<Point> centroids;
    for (const Instance& inst : scene.instances) centroids.push_back(inst.centroid);
    TokenSequence target = encode_points(centroids, sc.w, sc.h, mc.k);
    std::vector<int> content(target.ids.begin() + 1, target.ids.end());
    Vocabulary vocab = mc.vocab();

    DecoderConfig dc;
    dc.d_latent = mc.d;
    dc.l = mc.l;
    dc.d_inner = 8;
    dc.hid = 16;
    dc.block = 4;
    dc.scene_w = sc.w;
    dc.scene_h = sc.h;
    FrozenMaskDecoder dec = init_decoder(dc, 7);

    PolicyParams p = init_params(mc, 17);
    const double alpha = 0.5;
    auto loss_of = [&] {
        TfResult f = forward_teacher_forced(p, scene, target);
        double ntp = soft_ntp_loss(f.logits, content, vocab, 1.0).loss;
        double covt = covt_loss(decode_mask(dec, f.latents, scene), fg).loss;
        return ntp + alpha * covt;
    };
    {
        TfResult f = forward_teacher_forced(p, scene, target);
        NtpResult ntp = soft_ntp_loss(f.logits, content, vocab, 1.0);
        CovtResult covt = covt_loss(decode_mask(dec, f.latents, scene), fg);
        Mat dlat = alpha * decode_mask_backward(dec, f.latents, scene, covt.dlogits);
        PolicyParams grads = zeros_like(p);
        backward(p, f.tape, ntp.dlogits, dlat, grads);
        auto prefs = tensor_refs(p);
        auto grefs = tensor_refs(grads);
        double worst = 0.0;
        for (size_t t = 0; t < prefs.size(); ++t) {
            size_t n = prefs[t].size();
            for (size_t i : {size_t{0}, n / 3, n / 2, n - 1}) {
                double num = testutil::central_difference(prefs[t].data + i, loss_of, 1e-4);
                worst = std::max(worst, testutil::relative_error(grefs[t].data[i], num));
            }
        }
        c.require(worst < 1e-3, "policy gradient off by " + fmt(worst));
    }

    // decoder latent pullback on its own
    {
        Mat latents(dc.d_latent, dc.l);
        for (Eigen::Index j = 0; j < latents.cols(); ++j)
            for (Eigen::Index i = 0; i < latents.rows(); ++i) latents(i, j) = rng.gaussian() * 0.5;
        auto mask_loss = [&] { return covt_loss(decode_mask(dec, latents, scene), fg).loss; };
        CovtResult covt = covt_loss(decode_mask(dec, latents, scene), fg);
        Mat dlat = decode_mask_backward(dec, latents, scene, covt.dlogits);
        double worst = 0.0;
        for (Eigen::Index j = 0; j < latents.cols(); ++j)
            for (Eigen::Index i = 0; i < latents.rows(); ++i) {
                double num = testutil::central_difference(&latents(i, j), mask_loss, 1e-4);
                worst = std::max(worst, testutil::relative_error(dlat(i, j), num));
            }
        c.require(worst < 1e-3, "decoder latent gradient off by " + fmt(worst));
    }

    double dt = elapsed_s(t0);
    c.require(dt < 120.0, "took " + fmt(dt) + " s, budget 120 s");
    if (c.ok) c.detail = fmt(dt) + " s";
    return c;
}

// ------------------------------------------------------------- criterion 4

Check ce_gradient_asymmetry() {
    Check c;
    Rng rng(404);
    for (int rep = 0; rep < 50 && c.ok; ++rep) {
        int k = 4 + static_cast<int>(rng.uniform_int(29));
        Vec logits(k);
        for (Eigen::Index i = 0; i < k; ++i) logits(i) = rng.gaussian() * 2.0;
        int t = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(k)));
        Vec onehot = Vec::Zero(k);
        onehot(t) = 1.0;
        CeResult res = softmax_ce(logits, onehot);

        Vec z = logits.array() - logits.maxCoeff();
        Vec p = z.array().exp();
        p /= p.sum();
        c.require((res.grad - (p - onehot)).lpNorm<Eigen::Infinity>() <= 1e-9,
                  "gradient differs from p - onehot");
        c.require(res.grad(t) < 0.0, "target component not negative");
        for (Eigen::Index i = 0; i < k; ++i)
            if (i != t) c.require(res.grad(i) > 0.0, "non-target component not positive");
    }
    return c;
}

// ------------------------------------------------------------- criterion 5

Check grpo_fixtures() {
    Check c;
    {
        Vec r(3);
        r << 0.0, 0.5, 1.0;
        Vec a = compute_advantages(r);
        c.require(std::abs(a(0) + 1.2247) < 1e-4, "low reward advantage " + fmt(a(0)));
        c.require(std::abs(a(1)) < 1e-4, "middle reward advantage " + fmt(a(1)));
        c.require(std::abs(a(2) - 1.2247) < 1e-4, "high reward advantage " + fmt(a(2)));
    }
    {
        Vec r(3);
        r << 0.20, 0.20, 0.21;
        Vec a = compute_advantages(r);
        c.require(std::abs(a.maxCoeff() - 1.4142) < 1e-4,
                  "flat group max advantage " + fmt(a.maxCoeff()));
        c.require(a.maxCoeff() > 1.2247, "flat group does not out-score the spread group");
        c.require(!lvgf_retains(r, 0.01), "delta 0.01 failed to filter the flat group");
    }
    {
        // a fully filtered step must hand the optimizer an exactly-zero
        // gradient and leave the parameters untouched
        ModelConfig mc;
        mc.k = 16;
        mc.l = 2;
        mc.d = 8;
        mc.n_heads = 2;
        mc.n_blocks = 1;
        mc.patch = 4;
        mc.scene_w = 16;
        mc.scene_h = 16;
        mc.max_tokens = 18;
        SceneConfig sc;
        sc.w = 16;
        sc.h = 16;
        sc.count_lo = 1;
        sc.count_hi = 2;
        sc.radius_lo = 2.0;
        sc.radius_hi = 3.0;
        sc.min_sep = 6.0;
        PolicyParams params = init_params(mc, 55);
        PolicyParams snapshot = params;
        AdamState opt;
        RftConfig rcfg;
        rcfg.group_size = 4;
        rcfg.delta = 1e9; // above any observable spread
        rcfg.temperature = 1.0;
        std::vector<Scene> scenes = {generate_scene(sc, 1), generate_scene(sc, 2)};
        PolicyParams grad = init_params(mc, 56); // junk that must be overwritten
        GrpoReport rep = grpo_step(params, opt, scenes, rcfg, 99, &grad);
        c.require(rep.filtered_fraction == 1.0, "groups unexpectedly retained");
        auto grefs = tensor_refs(grad);
        for (const auto& r : grefs)
            for (size_t e = 0; e < r.size(); ++e)
                c.require(r.data[e] == 0.0, "filtered step produced a nonzero gradient");
        auto a = tensor_refs(params);
        auto b = tensor_refs(snapshot);
        for (size_t t = 0; t < a.size(); ++t)
            for (size_t e = 0; e < a[t].size(); ++e)
                c.require(a[t].data[e] == b[t].data[e], "filtered step moved the parameters");
        c.require(opt.t == 0, "filtered step advanced the optimizer");
    }
    return c;
}

// ------------------------------------------------------------- criterion 6

Check fgas_fixtures() {
    Check c;
    Vocabulary vocab{16, 2};
    const int w = 64, h = 64;
    auto rollout_with_two_points = [&](int xa, int ya, int xb, int yb) {
        Rollout ro;
        ro.tokens.ids = {vocab.bos(),    vocab.latent(0), vocab.latent(1),
                         vocab.lbrack(), xa,              vocab.sep(),
                         ya,             vocab.rbrack(),  vocab.sep(),
                         vocab.lbrack(), xb,              vocab.sep(),
                         yb,             vocab.rbrack(),  vocab.eos()};
        ro.parsed = parse_sequence(ro.tokens, vocab, w, h);
        return ro;
    };
    Rollout ro = rollout_with_two_points(3, 4, 9, 10);
    MatchResult match;
    match.tp_pred = {0};
    match.fp_pred = {1};
    match.r_thresh = 6.0;

    const double beta = 0.5;
    auto shaped_with = [&](double adv) {
        return fgas_shape({ro}, {match}, Vec::Constant(1, adv), beta, FgasSpan::coords)[0];
    };

    // false positive under a positive advantage decays to beta * A
    std::vector<double> up = shaped_with(1.0);
    c.require(up[10] == beta * 1.0 && up[12] == beta * 1.0,
              "FP coords under A>0 not scaled by beta");
    c.require(up[4] == 1.0 && up[6] == 1.0, "TP coords under A>0 were altered");

    // true positive under a negative advantage decays to beta * A
    std::vector<double> down = shaped_with(-1.0);
    c.require(down[4] == beta * -1.0 && down[6] == beta * -1.0,
              "TP coords under A<0 not scaled by beta");
    c.require(down[10] == -1.0 && down[12] == -1.0, "FP coords under A<0 were altered");

    for (const std::vector<double>& sh : {up, down}) {
        for (size_t i : {size_t{0}, size_t{1}, size_t{2}, size_t{3}, size_t{5}, size_t{7},
                         size_t{8}, size_t{9}, size_t{11}, size_t{13}, size_t{14}}) {
            double base = &sh == &up ? 1.0 : -1.0;
            c.require(sh[i] == base, "non-coordinate token was shaped");
        }
        for (size_t i = 0; i < sh.size(); ++i) {
            double base = &sh == &up ? 1.0 : -1.0;
            c.require(std::signbit(sh[i]) == std::signbit(base), "shaping flipped a sign");
        }
    }
    return c;
}

// ------------------------------------------------------------- criterion 7

Check clip_arithmetic() {
    Check c;
    const double eps = 0.2;
    SurrogateTerm hi = clipped_surrogate(std::log(2.0), 0.0, 1.0, eps);
    c.require(std::abs(hi.value - 1.2) < 1e-12, "ratio 2.0 contribution " + fmt(hi.value));
    SurrogateTerm lo = clipped_surrogate(std::log(0.5), 0.0, 1.0, eps);
    c.require(std::abs(lo.value - 0.5) < 1e-12, "ratio 0.5 contribution " + fmt(lo.value));
    return c;
}

// ------------------------------------------------------------- criterion 8

Check metric_identities() {
    Check c;
    Rng rng(808);

    // pq = dq * sq on random mask collections; instances within a
    // collection sit in separate 8-pixel bands so they never overlap
    for (int rep = 0; rep < 40 && c.ok; ++rep) {
        auto random_masks = [&](int n) {
            std::vector<Mask> ms;
            for (int i = 0; i < n; ++i) {
                Mask m(24, 24);
                int side = 2 + static_cast<int>(rng.uniform_int(6));
                int x0 = i * 8 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(8 - side + 1)));
                int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(24 - side + 1)));
                for (int y = y0; y < y0 + side; ++y)
                    for (int x = x0; x < x0 + side; ++x) m.set(x, y);
                ms.push_back(m);
            }
            return ms;
        };
        PqStats s = panoptic_quality(random_masks(static_cast<int>(rng.uniform_int(4))),
                                     random_masks(static_cast<int>(rng.uniform_int(4))));
        c.require(std::abs(s.pq - s.dq * s.sq) <= 1e-9, "pq does not factor into dq * sq");
    }

    // constructed IoU 0.6 pair: prediction covers 60 of the 100 gt pixels
    {
        Mask gt(16, 16), pred(16, 16);
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) gt.set(x, y);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 10; ++x) pred.set(x, y);
        PqStats s = panoptic_quality({pred}, {gt});
        c.require(std::abs(s.pq - 0.6) < 1e-12, "IoU 0.6 construction gives pq " + fmt(s.pq));
        double a = aji({pred}, {gt});
        c.require(std::abs(a - 0.6) < 1e-12, "IoU 0.6 construction gives aji " + fmt(a));
    }

    // half coverage scores AJI exactly one half
    {
        Mask gt(16, 16), pred(16, 16);
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) gt.set(x, y);
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 10; ++x) pred.set(x, y);
        double a = aji({pred}, {gt});
        c.require(std::abs(a - 0.5) < 1e-12, "half coverage gives aji " + fmt(a));
    }

    // the eval-side F1 and the reward-side score are the same function
    for (int rep = 0; rep < 100 && c.ok; ++rep) {
        int n = static_cast<int>(rng.uniform_int(7));
        int m = static_cast<int>(rng.uniform_int(7));
        std::vector<Point> pred(n), gt(m);
        for (Point& p : pred) p = {rng.uniform() * 64, rng.uniform() * 64};
        for (Point& p : gt) p = {rng.uniform() * 64, rng.uniform() * 64};
        F1Stats f = detection_f1(pred, gt, 6.0);
        double r = dm_reward(classify_matches(hungarian_match(pred, gt), 6.0));
        c.require(f.f1 == r, "detection f1 and reward disagree");
    }
    return c;
}

// ------------------------------------------------------ criteria 9 and 10

struct ToyArtifacts {
    fs::path data;
    fs::path sft;
    double sft_f1 = -1.0;
    bool ready = false;
};

ToyArtifacts g_toy;

Check toy_sft() {
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg; // the built-in defaults are the toy experiment
    g_toy.data = workspace() / "data";
    g_toy.sft = workspace() / "sft";
    cmd_generate(cfg, g_toy.data.string());
    cmd_sft(cfg, g_toy.data.string(), g_toy.sft.string());
    EvalResult ev = cmd_eval(cfg, g_toy.data.string(), (g_toy.sft / "policy.ckpt").string(),
                             (workspace() / "sft_eval").string());
    g_toy.sft_f1 = ev.report.f1;
    g_toy.ready = true;
    double dt = elapsed_s(t0);
    c.require(ev.report.f1 >= 0.90,
              "held-out F1 " + fmt(ev.report.f1) + " below 0.90 (" + fmt(dt) + " s)");
    if (c.ok) c.detail = "F1 " + fmt(ev.report.f1) + ", " + fmt(dt) + " s";
    return c;
}

Check toy_rft() {
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    c.require(g_toy.ready, "no SFT artifacts to start from");
    if (!c.ok) return c;

    const std::string data = g_toy.data.string();
    const std::string ckpt = (g_toy.sft / "policy.ckpt").string();

    auto run_eval = [&](const ExperimentConfig& cfg, const std::string& tag) {
        fs::path out = workspace() / tag;
        RftResult r = cmd_rft(cfg, data, ckpt, out.string());
        EvalResult ev = cmd_eval(cfg, data, (out / "policy.ckpt").string(),
                                 (out / "eval").string());
        return std::pair<RftResult, double>(r, ev.report.f1);
    };

    double shaped_sum = 0.0, plain_sum = 0.0;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        ExperimentConfig shaped;
        shaped.seed = seed;
        auto [rr, f1] = run_eval(shaped, "rft_shaped_" + std::to_string(seed));
        shaped_sum += f1;
        if (seed == 1) {
            c.require(rr.last_window_reward > rr.first_window_reward,
                      "reward did not improve: " + fmt(rr.first_window_reward) + " -> " +
                          fmt(rr.last_window_reward));
            c.require(f1 >= g_toy.sft_f1 - 0.01,
                      "F1 dropped from " + fmt(g_toy.sft_f1) + " to " + fmt(f1));
        }

        ExperimentConfig plain;
        plain.seed = seed;
        plain.rft.use_fgas = false;
        plain.rft.delta = 0.0;
        auto [pr, pf1] = run_eval(plain, "rft_plain_" + std::to_string(seed));
        (void)pr;
        plain_sum += pf1;
    }
    double shaped_mean = shaped_sum / 3.0, plain_mean = plain_sum / 3.0;
    c.require(shaped_mean >= plain_mean - 0.01,
              "LVGF+FGAS mean F1 " + fmt(shaped_mean) + " trails plain GRPO " + fmt(plain_mean));
    double dt = elapsed_s(t0);
    if (c.ok)
        c.detail = "shaped " + fmt(shaped_mean) + " vs plain " + fmt(plain_mean) + ", " +
                   fmt(dt) + " s";
    return c;
}

// ------------------------------------------------------------ criterion 11

Check sass_limits() {
    Check c;
    Rng rng(111);
    Vocabulary vocab{16, 2};
    for (int rep = 0; rep < 20 && c.ok; ++rep) {
        Mat logits(vocab.size(), 5);
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            for (Eigen::Index i = 0; i < logits.rows(); ++i) logits(i, j) = rng.gaussian() * 2.0;
        std::vector<int> targets = {1, 7, vocab.sep(), 12, vocab.eos()};
        double l_soft = soft_ntp_loss(logits, targets, vocab, 1e-6).loss;
        double l_hard = soft_ntp_loss(logits, targets, vocab, 0.0).loss;
        c.require(std::abs(l_soft - l_hard) < 1e-6,
                  "sigma 1e-6 differs from hard loss by " + fmt(std::abs(l_soft - l_hard)));
    }
    {
        // confident near miss: all mass on the neighboring bin
        Vocabulary vocab{16, 0};
        Mat logits = Mat::Zero(vocab.size(), 1);
        logits(8, 0) = 10.0; // predicts bin 8, target is bin 7
        std::vector<int> targets = {7};
        double l_soft = soft_ntp_loss(logits, targets, vocab, 1.0).loss;
        double l_hard = soft_ntp_loss(logits, targets, vocab, 0.0).loss;
        c.require(l_soft < l_hard, "near miss not rewarded by the soft target");
    }
    return c;
}

// ------------------------------------------------------------ criterion 12

Check determinism() {
    Check c;
    ExperimentConfig cfg;
    cfg.scene.w = 16;
    cfg.scene.h = 16;
    cfg.scene.count_hi = 2;
    cfg.scene.radius_lo = 2.0;
    cfg.scene.radius_hi = 3.0;
    cfg.scene.min_sep = 6.0;
    cfg.n_train = 4;
    cfg.n_val = 2;
    cfg.k = 16;
    cfg.l = 2;
    cfg.d = 8;
    cfg.n_heads = 2;
    cfg.n_blocks = 1;
    cfg.patch = 4;
    cfg.max_tokens = 18;
    cfg.dec_inner = 8;
    cfg.dec_hid = 16;
    cfg.pretrain.steps = 20;
    cfg.pretrain.n_train = 6;
    cfg.pretrain.n_holdout = 2;
    cfg.sft.steps = 12;
    cfg.sft.batch = 2;
    cfg.sft.val_every = 6;

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
    };

    fs::path a = workspace() / "det_a", b = workspace() / "det_b";
    for (const fs::path* root : {&a, &b}) {
        cmd_generate(cfg, (*root / "data").string());
        cmd_sft(cfg, (*root / "data").string(), (*root / "sft").string());
        cmd_eval(cfg, (*root / "data").string(), (*root / "sft" / "policy.ckpt").string(),
                 (*root / "eval").string());
    }
    Manifest m = load_manifest((a / "data" / "manifest.json").string());
    c.require(slurp(a / "data" / "manifest.json") == slurp(b / "data" / "manifest.json"),
              "manifests differ");
    for (const ManifestEntry& e : m.entries)
        c.require(slurp(a / "data" / e.file) == slurp(b / "data" / e.file),
                  "scene " + e.file + " differs");
    for (const char* f : {"policy.ckpt", "sft_log.jsonl", "decoder.bin"})
        c.require(slurp(a / "sft" / f) == slurp(b / "sft" / f),
                  std::string(f) + " differs between reruns");
    for (const char* f : {"eval.json", "eval.tsv"})
        c.require(slurp(a / "eval" / f) == slurp(b / "eval" / f),
                  std::string(f) + " differs between reruns");
    return c;
}

} // namespace

int main() {
    struct Entry {
        int id;
        const char* name;
        std::function<Check()> run;
    };
    const std::vector<Entry> entries = {
        {1, "tokenizer round-trip within half a bin", tokenizer_round_trip},
        {2, "assignment cost equals the exhaustive optimum", hungarian_oracle},
        {3, "analytic gradients match central differences", gradient_suite},
        {4, "cross-entropy gradient is p minus onehot", ce_gradient_asymmetry},
        {5, "group advantage fixtures and variance filtering", grpo_fixtures},
        {6, "advantage shaping decays only contradictory tokens", fgas_fixtures},
        {7, "clipped surrogate arithmetic", clip_arithmetic},
        {8, "metric identities and shared scoring path", metric_identities},
        {9, "toy SFT reaches held-out F1 0.90", toy_sft},
        {10, "toy RFT improves reward and preserves F1", toy_rft},
        {11, "soft supervision recovers the hard-label limit", sass_limits},
        {12, "generate, sft, and eval rerun byte-identically", determinism},
    };

    int failures = 0;
    for (const Entry& e : entries) {
        Check c;
        try {
            c = e.run();
        } catch (const std::exception& ex) {
            c.ok = false;
            c.detail = std::string("exception: ") + ex.what();
        }
        if (c.ok) {
            std::printf("[PASS] %2d. %s%s%s\n", e.id, e.name,
                        c.detail.empty() ? "" : " -- ", c.detail.c_str());
        } else {
            std::printf("[FAIL] %2d. %s -- %s\n", e.id, e.name, c.detail.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    if (failures) std::printf("%d of 12 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
