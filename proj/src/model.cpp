#include "pointseq/model.hpp"

#include <cmath>

#include "pointseq/errors.hpp"
#include "pointseq/parallel.hpp"
#include "pointseq/rng.hpp"
#include "pointseq/util.hpp"

namespace pointseq {

void ModelConfig::validate() const {
    if (k < 2) throw ConfigError("model: k must be at least 2");
    if (l < 0) throw ConfigError("model: l must be non-negative");
    if (d < 2 || n_heads < 1 || d % n_heads != 0)
        throw ConfigError("model: d must be a positive multiple of n_heads");
    if (n_blocks < 1 || n_blocks > 2) throw ConfigError("model: n_blocks must be 1 or 2");
    if (patch < 1 || scene_w < patch || scene_h < patch || scene_w % patch != 0 || scene_h % patch != 0)
        throw ConfigError("model: scene dimensions must be divisible by patch size");
    if (max_tokens < l + 2) throw ConfigError("model: max_tokens leaves no room after the prefix");
}

// ------------------------------------------------------------------- params

std::vector<TensorRef> tensor_refs(PolicyParams& p) {
    std::vector<TensorRef> out;
    auto add_m = [&](const std::string& name, Mat& m) { out.push_back({name, m.data(), m.rows(), m.cols()}); };
    auto add_v = [&](const std::string& name, Vec& v) { out.push_back({name, v.data(), v.size(), 1}); };
    add_m("tok_embed", p.tok_embed);
    add_m("tok_pos", p.tok_pos);
    add_m("patch_proj", p.patch_proj);
    add_v("patch_bias", p.patch_bias);
    add_m("patch_pos", p.patch_pos);
    for (size_t b = 0; b < p.blocks.size(); ++b) {
        std::string prefix = "block" + std::to_string(b) + ".";
        AttnBlock& blk = p.blocks[b];
        add_m(prefix + "wq", blk.wq);
        add_v(prefix + "bq", blk.bq);
        add_m(prefix + "wk", blk.wk);
        add_v(prefix + "bk", blk.bk);
        add_m(prefix + "wv", blk.wv);
        add_v(prefix + "bv", blk.bv);
        add_m(prefix + "wo", blk.wo);
        add_v(prefix + "bo", blk.bo);
        add_v(prefix + "ln1_g", blk.ln1_g);
        add_v(prefix + "ln1_b", blk.ln1_b);
        add_v(prefix + "ln2_g", blk.ln2_g);
        add_v(prefix + "ln2_b", blk.ln2_b);
        add_m(prefix + "w1", blk.w1);
        add_v(prefix + "b1", blk.b1);
        add_m(prefix + "w2", blk.w2);
        add_v(prefix + "b2", blk.b2);
    }
    add_v("lnf_g", p.lnf_g);
    add_v("lnf_b", p.lnf_b);
    add_m("head_w", p.head_w);
    add_v("head_b", p.head_b);
    return out;
}

static void shape_params(PolicyParams& p, const ModelConfig& cfg) {
    p.cfg = cfg;
    int v = cfg.vocab().size();
    p.tok_embed = Mat::Zero(cfg.d, v);
    p.tok_pos = Mat::Zero(cfg.d, cfg.max_tokens);
    p.patch_proj = Mat::Zero(cfg.d, cfg.patch_dim());
    p.patch_bias = Vec::Zero(cfg.d);
    p.patch_pos = Mat::Zero(cfg.d, cfg.n_patches());
    p.blocks.assign(static_cast<size_t>(cfg.n_blocks), {});
    for (auto& blk : p.blocks) {
        blk.wq = blk.wk = blk.wv = blk.wo = Mat::Zero(cfg.d, cfg.d);
        blk.bq = blk.bk = blk.bv = blk.bo = Vec::Zero(cfg.d);
        blk.ln1_g = blk.ln2_g = Vec::Ones(cfg.d);
        blk.ln1_b = blk.ln2_b = Vec::Zero(cfg.d);
        blk.w1 = Mat::Zero(cfg.ffn_dim(), cfg.d);
        blk.b1 = Vec::Zero(cfg.ffn_dim());
        blk.w2 = Mat::Zero(cfg.d, cfg.ffn_dim());
        blk.b2 = Vec::Zero(cfg.d);
    }
    p.lnf_g = Vec::Ones(cfg.d);
    p.lnf_b = Vec::Zero(cfg.d);
    p.head_w = Mat::Zero(v, cfg.d);
    p.head_b = Vec::Zero(v);
}

PolicyParams init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    PolicyParams p;
    shape_params(p, cfg);
    Rng rng(mix_seed(seed, 0x1217));
    auto fill = [&](Mat& m) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.gaussian() * 0.02;
    };
    fill(p.tok_embed);
    fill(p.tok_pos);
    fill(p.patch_proj);
    fill(p.patch_pos);
    for (auto& blk : p.blocks) {
        fill(blk.wq);
        fill(blk.wk);
        fill(blk.wv);
        fill(blk.wo);
        fill(blk.w1);
        fill(blk.w2);
    }
    fill(p.head_w);

    // Geometry is seeded, not discovered: patch positions get a 2D sin-cos
    // code by grid cell and coordinate tokens a 1D code by bin, added on
    // top of the noise. Everything stays trainable; without this the short
    // training budget is spent reinventing the coordinate system.
    auto wave = [](Mat& m, Eigen::Index col, int chan0, int n_pairs, double pos) {
        for (int f = 0; f < n_pairs; ++f) {
            double omega = std::pow(10000.0, -static_cast<double>(f) / n_pairs);
            m(chan0 + 2 * f, col) += std::sin(omega * pos);
            m(chan0 + 2 * f + 1, col) += std::cos(omega * pos);
        }
    };
    const int quarter = cfg.d / 4;
    for (int py = 0; py < cfg.patches_y(); ++py)
        for (int px = 0; px < cfg.patches_x(); ++px) {
            Eigen::Index pi = py * cfg.patches_x() + px;
            wave(p.patch_pos, pi, 0, quarter, px);
            wave(p.patch_pos, pi, 2 * quarter, quarter, py);
        }
    for (int bin = 0; bin < cfg.k; ++bin) wave(p.tok_embed, bin, 0, cfg.d / 2, bin);
    return p;
}

PolicyParams zeros_like(const PolicyParams& p) {
    PolicyParams z;
    shape_params(z, p.cfg);
    for (auto& blk : z.blocks) {
        blk.ln1_g.setZero();
        blk.ln2_g.setZero();
    }
    z.lnf_g.setZero();
    return z;
}

size_t param_count(const PolicyParams& p) {
    size_t n = 0;
    for (const auto& r : tensor_refs(const_cast<PolicyParams&>(p))) n += r.size();
    return n;
}

// ------------------------------------------------------------ scene encoder

SceneFeatures encode_scene(const PolicyParams& p, const Scene& scene) {
    const ModelConfig& cfg = p.cfg;
    if (scene.w != cfg.scene_w || scene.h != cfg.scene_h)
        throw ConfigError("scene dimensions do not match the model configuration");
    int px_count = cfg.patches_x();
    SceneFeatures out;
    out.patches = Mat(cfg.patch_dim(), cfg.n_patches());
    for (int py = 0; py < cfg.patches_y(); ++py)
        for (int px = 0; px < px_count; ++px) {
            int pi = py * px_count + px;
            for (int dy = 0; dy < cfg.patch; ++dy)
                for (int dx = 0; dx < cfg.patch; ++dx)
                    out.patches(dy * cfg.patch + dx, pi) = scene.at(px * cfg.patch + dx, py * cfg.patch + dy);
        }
    out.feats = p.patch_proj * out.patches;
    out.feats.colwise() += p.patch_bias;
    out.feats += p.patch_pos;
    return out;
}

// ----------------------------------------------------------------- forward

Vec log_softmax(const Vec& z) {
    double mx = z.maxCoeff();
    Vec e = (z.array() - mx).exp();
    double lse = std::log(e.sum());
    return (z.array() - mx - lse).matrix();
}

namespace {

struct SeqCaches {
    std::vector<Mat> kc, vc; // per block, d x capacity
    int len = 0;
};

SeqCaches make_caches(const ModelConfig& cfg, int capacity) {
    SeqCaches c;
    c.kc.assign(static_cast<size_t>(cfg.n_blocks), Mat(cfg.d, capacity));
    c.vc.assign(static_cast<size_t>(cfg.n_blocks), Mat(cfg.d, capacity));
    return c;
}

inline double gelu(double x) {
    double u = 0.7978845608028654 * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
    double x2 = x * x;
    double u = 0.7978845608028654 * (x + 0.044715 * x2 * x);
    double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * 0.7978845608028654 * (1.0 + 3.0 * 0.044715 * x2);
}

constexpr double kLnEps = 1e-5;

Vec layer_norm(const Vec& x, const Vec& g, const Vec& b, Vec& xhat, double& inv_std) {
    double mu = x.mean();
    Vec cent = (x.array() - mu).matrix();
    double var = cent.squaredNorm() / static_cast<double>(x.size());
    inv_std = 1.0 / std::sqrt(var + kLnEps);
    xhat = cent * inv_std;
    return (g.array() * xhat.array() + b.array()).matrix();
}

// Processes one position through every block, appending to the K/V caches.
// The tape, when present, records intermediates at column c.len. Sampling,
// scoring, and the training forward all run through here, so their logits
// agree bit for bit.
Vec forward_one(const PolicyParams& p, const Vec& x_in, SeqCaches& c, ForwardTape* tape) {
    const ModelConfig& cfg = p.cfg;
    const int i = c.len;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Vec x = x_in;
    if (tape) tape->x0.col(i) = x;
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const AttnBlock& blk = p.blocks[static_cast<size_t>(b)];
        BlockTape* bt = tape ? &tape->blocks[static_cast<size_t>(b)] : nullptr;
        if (bt) bt->x_in.col(i) = x;

        Vec xhat;
        double inv_std;
        Vec h = layer_norm(x, blk.ln1_g, blk.ln1_b, xhat, inv_std);
        if (bt) {
            bt->ln1.xhat.col(i) = xhat;
            bt->ln1.inv_std[i] = inv_std;
            bt->ln1.out.col(i) = h;
        }
        Vec q = blk.wq * h + blk.bq;
        Vec k = blk.wk * h + blk.bk;
        Vec v = blk.wv * h + blk.bv;
        c.kc[static_cast<size_t>(b)].col(i) = k;
        c.vc[static_cast<size_t>(b)].col(i) = v;
        if (bt) {
            bt->q.col(i) = q;
            bt->k.col(i) = k;
            bt->v.col(i) = v;
        }

        Vec ctx(cfg.d);
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            auto qh = q.segment(hd * dh, dh);
            Vec scores(i + 1);
            for (int j = 0; j <= i; ++j)
                scores[j] = qh.dot(c.kc[static_cast<size_t>(b)].col(j).segment(hd * dh, dh)) * scale;
            double mx = scores.maxCoeff();
            Vec w = (scores.array() - mx).exp().matrix();
            w /= w.sum();
            Vec ctxh = Vec::Zero(dh);
            for (int j = 0; j <= i; ++j)
                ctxh += w[j] * c.vc[static_cast<size_t>(b)].col(j).segment(hd * dh, dh);
            ctx.segment(hd * dh, dh) = ctxh;
            if (bt) bt->attn[static_cast<size_t>(hd)].row(i).head(i + 1) = w.transpose();
        }
        if (bt) bt->ctx.col(i) = ctx;
        x += blk.wo * ctx + blk.bo;
        if (bt) bt->x_mid.col(i) = x;

        Vec xhat2;
        double inv_std2;
        Vec h2 = layer_norm(x, blk.ln2_g, blk.ln2_b, xhat2, inv_std2);
        if (bt) {
            bt->ln2.xhat.col(i) = xhat2;
            bt->ln2.inv_std[i] = inv_std2;
            bt->ln2.out.col(i) = h2;
        }
        Vec h1 = blk.w1 * h2 + blk.b1;
        Vec g = h1.unaryExpr([](double z) { return gelu(z); });
        if (bt) {
            bt->h1.col(i) = h1;
            bt->g.col(i) = g;
        }
        x += blk.w2 * g + blk.b2;
        if (bt) bt->x_out.col(i) = x;
    }
    Vec xhatf;
    double inv_stdf;
    Vec y = layer_norm(x, p.lnf_g, p.lnf_b, xhatf, inv_stdf);
    if (tape) {
        tape->lnf.xhat.col(i) = xhatf;
        tape->lnf.inv_std[i] = inv_stdf;
        tape->lnf.out.col(i) = y;
        tape->y.col(i) = y;
        tape->t = i + 1;
    }
    c.len = i + 1;
    return y;
}

ForwardTape make_tape(const ModelConfig& cfg, int t) {
    ForwardTape tape;
    tape.x0 = Mat::Zero(cfg.d, t);
    tape.blocks.resize(static_cast<size_t>(cfg.n_blocks));
    for (auto& b : tape.blocks) {
        b.x_in = Mat::Zero(cfg.d, t);
        b.q = Mat::Zero(cfg.d, t);
        b.k = Mat::Zero(cfg.d, t);
        b.v = Mat::Zero(cfg.d, t);
        b.ctx = Mat::Zero(cfg.d, t);
        b.x_mid = Mat::Zero(cfg.d, t);
        b.x_out = Mat::Zero(cfg.d, t);
        b.h1 = Mat::Zero(cfg.ffn_dim(), t);
        b.g = Mat::Zero(cfg.ffn_dim(), t);
        for (auto* ln : {&b.ln1, &b.ln2}) {
            ln->xhat = Mat::Zero(cfg.d, t);
            ln->inv_std = Vec::Zero(t);
            ln->out = Mat::Zero(cfg.d, t);
        }
        b.attn.assign(static_cast<size_t>(cfg.n_heads), Mat::Zero(t, t));
    }
    tape.lnf.xhat = Mat::Zero(cfg.d, t);
    tape.lnf.inv_std = Vec::Zero(t);
    tape.lnf.out = Mat::Zero(cfg.d, t);
    tape.y = Mat::Zero(cfg.d, t);
    return tape;
}

Vec token_embedding(const PolicyParams& p, int id, int slot) {
    return p.tok_embed.col(id) + p.tok_pos.col(slot);
}

// Scene patches, BOS, and the latent prefix; shared by every consumer of a
// (params, scene) pair.
struct Prefix {
    SeqCaches caches;
    Mat latents; // d x L
    Vec y_last;  // output at the final prefix position
};

Prefix run_prefix(const PolicyParams& p, const SceneFeatures& sf, int capacity) {
    const ModelConfig& cfg = p.cfg;
    Vocabulary vocab = cfg.vocab();
    Prefix pre;
    pre.caches = make_caches(cfg, capacity);
    for (int i = 0; i < cfg.n_patches(); ++i) forward_one(p, sf.feats.col(i), pre.caches, nullptr);
    pre.y_last = forward_one(p, token_embedding(p, vocab.bos(), 0), pre.caches, nullptr);
    pre.latents = Mat::Zero(cfg.d, cfg.l);
    for (int i = 0; i < cfg.l; ++i) {
        pre.y_last = forward_one(p, token_embedding(p, vocab.latent(i), 1 + i), pre.caches, nullptr);
        pre.latents.col(i) = pre.y_last;
    }
    return pre;
}

constexpr uint64_t kSampleSalt = 0x9a11e7;

Rollout continue_rollout(const PolicyParams& p, Prefix pre, double temperature, uint64_t seed) {
    const ModelConfig& cfg = p.cfg;
    Vocabulary vocab = cfg.vocab();
    Rollout r;
    r.latents = pre.latents;
    r.tokens.ids.push_back(vocab.bos());
    for (int i = 0; i < cfg.l; ++i) r.tokens.ids.push_back(vocab.latent(i));
    r.tokens.logprobs.assign(r.tokens.ids.size(), 0.0);
    r.sample_logprobs.assign(r.tokens.ids.size(), 0.0);

    Rng rng(mix_seed(seed, kSampleSalt));
    Vec y = pre.y_last;
    for (int t = 0; t < cfg.content_budget(); ++t) {
        Vec logits = p.head_w * y + p.head_b;
        Vec lsm = log_softmax(logits);
        int id = 0;
        double sample_lp = 0.0;
        if (temperature <= 0.0) {
            for (Eigen::Index j = 1; j < logits.size(); ++j)
                if (logits[j] > logits[id]) id = static_cast<int>(j);
        } else {
            Vec lsm_t = log_softmax(logits / temperature);
            Vec probs = lsm_t.array().exp().matrix();
            double u = rng.uniform();
            double cum = 0.0;
            id = static_cast<int>(probs.size()) - 1;
            for (Eigen::Index j = 0; j < probs.size(); ++j) {
                cum += probs[j];
                if (u < cum) {
                    id = static_cast<int>(j);
                    break;
                }
            }
            sample_lp = lsm_t[id];
        }
        r.tokens.ids.push_back(id);
        r.tokens.logprobs.push_back(lsm[id]);
        r.sample_logprobs.push_back(sample_lp);
        if (id == vocab.eos()) break;
        y = forward_one(p, token_embedding(p, id, 1 + cfg.l + t), pre.caches, nullptr);
    }
    r.parsed = parse_sequence(r.tokens, vocab, cfg.scene_w, cfg.scene_h);
    return r;
}

} // namespace

TfResult forward_teacher_forced(const PolicyParams& p, const Scene& scene, const TokenSequence& target) {
    const ModelConfig& cfg = p.cfg;
    Vocabulary vocab = cfg.vocab();
    if (target.ids.empty() || target.ids[0] != vocab.bos())
        throw ConfigError("teacher-forced target must start with BOS");
    size_t start = 1;
    while (start < target.ids.size() && vocab.is_latent(target.ids[start])) ++start;
    std::vector<int> content(target.ids.begin() + static_cast<std::ptrdiff_t>(start), target.ids.end());
    for (int id : content)
        if (!vocab.valid_id(id)) throw ConfigError("teacher-forced target contains an invalid id");
    if (static_cast<int>(content.size()) > cfg.content_budget())
        throw ConfigError("teacher-forced target exceeds the sequence budget");

    int n_patches = cfg.n_patches();
    int n_sup = static_cast<int>(content.size());
    int t_total = n_patches + 1 + cfg.l + std::max(n_sup - 1, 0);

    SceneFeatures sf = encode_scene(p, scene);
    TfResult out;
    out.tape = make_tape(cfg, t_total);
    out.tape.n_patches = n_patches;
    out.tape.patches = sf.patches;
    SeqCaches caches = make_caches(cfg, t_total);

    for (int i = 0; i < n_patches; ++i) forward_one(p, sf.feats.col(i), caches, &out.tape);
    out.tape.token_ids.push_back(vocab.bos());
    Vec y = forward_one(p, token_embedding(p, vocab.bos(), 0), caches, &out.tape);
    out.latents = Mat::Zero(cfg.d, cfg.l);
    for (int i = 0; i < cfg.l; ++i) {
        y = forward_one(p, token_embedding(p, vocab.latent(i), 1 + i), caches, &out.tape);
        out.latents.col(i) = y;
        out.tape.token_ids.push_back(vocab.latent(i));
    }
    out.logits = Mat::Zero(vocab.size(), n_sup);
    for (int j = 0; j < n_sup; ++j) {
        out.logits.col(j) = p.head_w * y + p.head_b;
        out.tape.sup_cols.push_back(caches.len - 1);
        if (j + 1 < n_sup) {
            y = forward_one(p, token_embedding(p, content[static_cast<size_t>(j)], 1 + cfg.l + j), caches,
                            &out.tape);
            out.tape.token_ids.push_back(content[static_cast<size_t>(j)]);
        }
    }
    return out;
}

// ----------------------------------------------------------------- backward

namespace {

Mat ln_backward(const Mat& dout, const LnCache& cache, const Vec& gain, Vec& dgain, Vec& dbias, int t) {
    Mat dx(dout.rows(), t);
    for (int i = 0; i < t; ++i) {
        Vec dxhat = dout.col(i).cwiseProduct(gain);
        dgain += dout.col(i).cwiseProduct(cache.xhat.col(i));
        dbias += dout.col(i);
        double m1 = dxhat.mean();
        double m2 = dxhat.cwiseProduct(cache.xhat.col(i)).mean();
        dx.col(i) = cache.inv_std[i] * (dxhat.array() - m1 - cache.xhat.col(i).array() * m2).matrix();
    }
    return dx;
}

} // namespace

void backward(const PolicyParams& p, const ForwardTape& tape, const Mat& dlogits, const Mat& dlatents,
              PolicyParams& grads) {
    const ModelConfig& cfg = p.cfg;
    const int t = tape.t;
    const int n_patches = tape.n_patches;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat dy = Mat::Zero(cfg.d, t);
    if (dlogits.size() > 0) {
        if (static_cast<size_t>(dlogits.cols()) != tape.sup_cols.size())
            throw ConfigError("backward: dlogits column count mismatch");
        for (Eigen::Index j = 0; j < dlogits.cols(); ++j) {
            int col = tape.sup_cols[static_cast<size_t>(j)];
            grads.head_w += dlogits.col(j) * tape.y.col(col).transpose();
            grads.head_b += dlogits.col(j);
            dy.col(col) += p.head_w.transpose() * dlogits.col(j);
        }
    }
    if (dlatents.size() > 0) {
        if (dlatents.rows() != cfg.d || dlatents.cols() != cfg.l)
            throw ConfigError("backward: dlatents shape mismatch");
        for (int i = 0; i < cfg.l; ++i) dy.col(n_patches + 1 + i) += dlatents.col(i);
    }

    Mat dx = ln_backward(dy, tape.lnf, p.lnf_g, grads.lnf_g, grads.lnf_b, t);

    for (int b = cfg.n_blocks - 1; b >= 0; --b) {
        const AttnBlock& blk = p.blocks[static_cast<size_t>(b)];
        AttnBlock& gblk = grads.blocks[static_cast<size_t>(b)];
        const BlockTape& bt = tape.blocks[static_cast<size_t>(b)];

        // feed-forward branch; dx is the gradient at x_out
        const Mat& df = dx;
        gblk.w2.noalias() += df * bt.g.leftCols(t).transpose();
        gblk.b2 += df.rowwise().sum();
        Mat dg = blk.w2.transpose() * df;
        Mat dh1 = dg.cwiseProduct(bt.h1.leftCols(t).unaryExpr([](double z) { return gelu_grad(z); }));
        gblk.w1.noalias() += dh1 * bt.ln2.out.leftCols(t).transpose();
        gblk.b1 += dh1.rowwise().sum();
        Mat dln2out = blk.w1.transpose() * dh1;
        Mat dx_mid = ln_backward(dln2out, bt.ln2, blk.ln2_g, gblk.ln2_g, gblk.ln2_b, t);
        dx_mid += dx; // residual

        // attention branch; dx_mid is the gradient at x_mid
        const Mat& da = dx_mid;
        gblk.wo.noalias() += da * bt.ctx.leftCols(t).transpose();
        gblk.bo += da.rowwise().sum();
        Mat dctx = blk.wo.transpose() * da;

        Mat dq = Mat::Zero(cfg.d, t), dk = Mat::Zero(cfg.d, t), dv = Mat::Zero(cfg.d, t);
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            const Mat& wh = bt.attn[static_cast<size_t>(hd)];
            auto dctxh = dctx.middleRows(hd * dh, dh);
            auto vh = bt.v.middleRows(hd * dh, dh).leftCols(t);
            auto qh = bt.q.middleRows(hd * dh, dh).leftCols(t);
            auto kh = bt.k.middleRows(hd * dh, dh).leftCols(t);

            Mat dwh = dctxh.transpose() * vh; // (i,j): dctx_i . v_j
            dv.middleRows(hd * dh, dh).noalias() += dctxh * wh.topLeftCorner(t, t);

            Mat ds = Mat::Zero(t, t);
            for (int i = 0; i < t; ++i) {
                auto w = wh.row(i).head(i + 1);
                auto dw = dwh.row(i).head(i + 1);
                double dot = (w.array() * dw.array()).sum();
                ds.row(i).head(i + 1) = (w.array() * (dw.array() - dot)).matrix();
            }
            dq.middleRows(hd * dh, dh).noalias() += kh * ds.transpose() * scale;
            dk.middleRows(hd * dh, dh).noalias() += qh * ds * scale;
        }
        gblk.wq.noalias() += dq * bt.ln1.out.leftCols(t).transpose();
        gblk.bq += dq.rowwise().sum();
        gblk.wk.noalias() += dk * bt.ln1.out.leftCols(t).transpose();
        gblk.bk += dk.rowwise().sum();
        gblk.wv.noalias() += dv * bt.ln1.out.leftCols(t).transpose();
        gblk.bv += dv.rowwise().sum();
        Mat dln1out = blk.wq.transpose() * dq + blk.wk.transpose() * dk + blk.wv.transpose() * dv;
        Mat dx_block = ln_backward(dln1out, bt.ln1, blk.ln1_g, gblk.ln1_g, gblk.ln1_b, t);
        dx = dx_mid + dx_block;
    }

    grads.patch_proj.noalias() += dx.leftCols(n_patches) * tape.patches.transpose();
    grads.patch_bias += dx.leftCols(n_patches).rowwise().sum();
    grads.patch_pos.leftCols(n_patches) += dx.leftCols(n_patches);
    for (int i = n_patches; i < t; ++i) {
        int slot = i - n_patches;
        int id = tape.token_ids[static_cast<size_t>(slot)];
        grads.tok_embed.col(id) += dx.col(i);
        grads.tok_pos.col(slot) += dx.col(i);
    }
}

// ----------------------------------------------------------------- sampling

Rollout sample_rollout(const PolicyParams& p, const Scene& scene, double temperature, uint64_t seed) {
    SceneFeatures sf = encode_scene(p, scene);
    Prefix pre = run_prefix(p, sf, p.cfg.seq_len());
    return continue_rollout(p, std::move(pre), temperature, seed);
}

std::vector<Rollout> sample_group(const PolicyParams& p, const Scene& scene, int g, double temperature,
                                  uint64_t seed) {
    if (g < 1) throw ConfigError("group size must be positive");
    SceneFeatures sf = encode_scene(p, scene);
    Prefix pre = run_prefix(p, sf, p.cfg.seq_len());
    std::vector<Rollout> out(static_cast<size_t>(g));
    parallel_for(static_cast<size_t>(g), [&](size_t i) {
        out[i] = continue_rollout(p, pre, temperature, mix_seed(seed, i));
    });
    return out;
}

std::vector<double> logprob_of(const PolicyParams& p, const Scene& scene, const TokenSequence& tokens) {
    const ModelConfig& cfg = p.cfg;
    Vocabulary vocab = cfg.vocab();
    size_t prefix_len = 1 + static_cast<size_t>(cfg.l);
    if (tokens.ids.size() < prefix_len || tokens.ids[0] != vocab.bos())
        throw ConfigError("logprob_of: sequence must start with the BOS/latent prefix");
    for (int i = 0; i < cfg.l; ++i)
        if (tokens.ids[1 + static_cast<size_t>(i)] != vocab.latent(i))
            throw ConfigError("logprob_of: sequence must start with the BOS/latent prefix");
    if (tokens.ids.size() > static_cast<size_t>(cfg.max_tokens))
        throw ConfigError("logprob_of: sequence exceeds the token budget");
    for (int id : tokens.ids)
        if (!vocab.valid_id(id)) throw ConfigError("logprob_of: invalid vocabulary id");

    SceneFeatures sf = encode_scene(p, scene);
    Prefix pre = run_prefix(p, sf, cfg.seq_len());
    std::vector<double> out(tokens.ids.size(), 0.0);
    Vec y = pre.y_last;
    for (size_t j = prefix_len; j < tokens.ids.size(); ++j) {
        Vec logits = p.head_w * y + p.head_b;
        Vec lsm = log_softmax(logits);
        out[j] = lsm[tokens.ids[j]];
        if (j + 1 < tokens.ids.size())
            y = forward_one(p, token_embedding(p, tokens.ids[j], static_cast<int>(j)), pre.caches, nullptr);
    }
    return out;
}

// ---------------------------------------------------------------- optimizer

void adamw_step(std::vector<TensorRef> weights, std::vector<TensorRef> grads, AdamState& opt, double lr,
                double weight_decay) {
    if (weights.size() != grads.size()) throw ConfigError("optimizer: tensor list mismatch");
    size_t total = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
        if (weights[i].name != grads[i].name || weights[i].rows != grads[i].rows ||
            weights[i].cols != grads[i].cols)
            throw ConfigError("optimizer: gradient shape mismatch at " + weights[i].name);
        if (!all_finite(grads[i].data, grads[i].size()))
            throw NumericError("non-finite gradient in " + grads[i].name);
        total += weights[i].size();
    }
    if (opt.m.empty()) {
        opt.m.assign(total, 0.0);
        opt.v.assign(total, 0.0);
    } else if (opt.m.size() != total || opt.v.size() != total) {
        throw ConfigError("optimizer: state size mismatch");
    }

    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    opt.t += 1;
    double bc1 = 1.0 - std::pow(b1, static_cast<double>(opt.t));
    double bc2 = 1.0 - std::pow(b2, static_cast<double>(opt.t));
    size_t off = 0;
    for (size_t ti = 0; ti < weights.size(); ++ti) {
        double* w = weights[ti].data;
        const double* g = grads[ti].data;
        size_t n = weights[ti].size();
        for (size_t i = 0; i < n; ++i) {
            double m = opt.m[off + i] = b1 * opt.m[off + i] + (1.0 - b1) * g[i];
            double v = opt.v[off + i] = b2 * opt.v[off + i] + (1.0 - b2) * g[i] * g[i];
            w[i] -= lr * ((m / bc1) / (std::sqrt(v / bc2) + eps) + weight_decay * w[i]);
        }
        off += n;
    }
}

void update(PolicyParams& params, PolicyParams& grads, AdamState& opt, double lr, double weight_decay) {
    if (!(params.cfg == grads.cfg)) throw ConfigError("update: gradient config mismatch");
    adamw_step(tensor_refs(params), tensor_refs(grads), opt, lr, weight_decay);
    params.version += 1;
}

} // namespace pointseq
