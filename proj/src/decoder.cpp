#include "pointseq/decoder.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pointseq/errors.hpp"
#include "pointseq/parallel.hpp"
#include "pointseq/rng.hpp"
#include "pointseq/supervision.hpp"
#include "pointseq/util.hpp"
#include "tensor_io.hpp"

namespace pointseq {

void DecoderConfig::validate() const {
    if (d_latent < 1 || d_inner < 1 || hid < 1 || l < 1)
        throw ConfigError("decoder: dimensions must be positive");
    if (block < 1 || scene_w < block || scene_h < block || scene_w % block != 0 || scene_h % block != 0)
        throw ConfigError("decoder: scene dimensions must be divisible by the block size");
}

std::vector<TensorRef> decoder_refs(FrozenMaskDecoder& dec) {
    std::vector<TensorRef> out;
    auto add_m = [&](const std::string& name, Mat& m) { out.push_back({name, m.data(), m.rows(), m.cols()}); };
    auto add_v = [&](const std::string& name, Vec& v) { out.push_back({name, v.data(), v.size(), 1}); };
    add_m("wq", dec.wq);
    add_v("bq", dec.bq);
    add_m("block_pos", dec.block_pos);
    add_m("wk", dec.wk);
    add_m("wv", dec.wv);
    add_m("head_w1", dec.head_w1);
    add_v("head_b1", dec.head_b1);
    add_m("head_w2", dec.head_w2);
    add_v("head_b2", dec.head_b2);
    return out;
}

static void shape_decoder(FrozenMaskDecoder& dec, const DecoderConfig& cfg) {
    dec.cfg = cfg;
    dec.wq = Mat::Zero(cfg.d_inner, cfg.block_dim());
    dec.bq = Vec::Zero(cfg.d_inner);
    dec.block_pos = Mat::Zero(cfg.d_inner, cfg.n_blocks());
    dec.wk = Mat::Zero(cfg.d_inner, cfg.d_latent);
    dec.wv = Mat::Zero(cfg.d_inner, cfg.d_latent);
    dec.head_w1 = Mat::Zero(cfg.hid, 2 * cfg.d_inner);
    dec.head_b1 = Vec::Zero(cfg.hid);
    dec.head_w2 = Mat::Zero(cfg.block_dim(), cfg.hid);
    dec.head_b2 = Vec::Zero(cfg.block_dim());
}

FrozenMaskDecoder init_decoder(const DecoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    FrozenMaskDecoder dec;
    shape_decoder(dec, cfg);
    Rng rng(mix_seed(seed, 0xdec0de));
    auto fill = [&](Mat& m) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.gaussian() * 0.02;
    };
    fill(dec.wq);
    fill(dec.block_pos);
    fill(dec.wk);
    fill(dec.wv);
    fill(dec.head_w1);
    fill(dec.head_w2);
    return dec;
}

FrozenMaskDecoder decoder_zeros_like(const FrozenMaskDecoder& dec) {
    FrozenMaskDecoder z;
    shape_decoder(z, dec.cfg);
    return z;
}

uint64_t FrozenMaskDecoder::checksum() const {
    std::string desc = "mask-decoder d_latent=" + std::to_string(cfg.d_latent) + " l=" + std::to_string(cfg.l) +
                       " d_inner=" + std::to_string(cfg.d_inner) + " hid=" + std::to_string(cfg.hid) +
                       " block=" + std::to_string(cfg.block) + " scene=" + std::to_string(cfg.scene_w) + "x" +
                       std::to_string(cfg.scene_h);
    uint64_t h = fnv1a64(desc);
    for (const auto& r : decoder_refs(const_cast<FrozenMaskDecoder&>(*this)))
        h = fnv1a64(r.data, r.size() * sizeof(double), h);
    return h;
}

namespace {

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

Vec block_pixels(const DecoderConfig& cfg, const Scene& scene, int bx, int by) {
    Vec pix(cfg.block_dim());
    for (int dy = 0; dy < cfg.block; ++dy)
        for (int dx = 0; dx < cfg.block; ++dx)
            pix[dy * cfg.block + dx] = scene.at(bx * cfg.block + dx, by * cfg.block + dy);
    return pix;
}

void check_latents(const FrozenMaskDecoder& dec, const Mat& latents) {
    if (latents.rows() != dec.cfg.d_latent || latents.cols() != dec.cfg.l)
        throw ConfigError("decoder: latent bundle has the wrong shape");
}

void check_scene(const FrozenMaskDecoder& dec, const Scene& scene) {
    if (scene.w != dec.cfg.scene_w || scene.h != dec.cfg.scene_h)
        throw ConfigError("decoder: scene dimensions do not match");
}

// Shared forward; when dlogits is non-null, runs the matching backward and
// accumulates into dlatents (and wgrads when given).
Vec decode_impl(const FrozenMaskDecoder& dec, const Mat& latents, const Scene& scene, const Vec* dlogits,
                FrozenMaskDecoder* wgrads, Mat* dlatents) {
    const DecoderConfig& cfg = dec.cfg;
    check_latents(dec, latents);
    check_scene(dec, scene);
    if (dlogits && dlogits->size() != static_cast<Eigen::Index>(scene.w) * scene.h)
        throw ConfigError("decoder: pixel gradient has the wrong length");

    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_inner));
    Mat keys = dec.wk * latents;   // d_inner x L
    Mat values = dec.wv * latents; // d_inner x L
    Mat dkeys, dvalues;
    if (dlogits) {
        dkeys = Mat::Zero(cfg.d_inner, cfg.l);
        dvalues = Mat::Zero(cfg.d_inner, cfg.l);
    }

    Vec out(static_cast<Eigen::Index>(scene.w) * scene.h);
    for (int by = 0; by < cfg.blocks_y(); ++by)
        for (int bx = 0; bx < cfg.blocks_x(); ++bx) {
            int b = by * cfg.blocks_x() + bx;
            Vec pix = block_pixels(cfg, scene, bx, by);
            Vec q = dec.wq * pix + dec.bq + dec.block_pos.col(b);
            Vec scores = keys.transpose() * q * scale; // L
            double mx = scores.maxCoeff();
            Vec attnw = (scores.array() - mx).exp().matrix();
            attnw /= attnw.sum();
            Vec readout = values * attnw; // d_inner
            Vec cat(2 * cfg.d_inner);
            cat << readout, q;
            Vec pre1 = dec.head_w1 * cat + dec.head_b1;
            Vec h = pre1.unaryExpr([](double z) { return gelu(z); });
            Vec blk = dec.head_w2 * h + dec.head_b2;
            for (int dy = 0; dy < cfg.block; ++dy)
                for (int dx = 0; dx < cfg.block; ++dx)
                    out[(by * cfg.block + dy) * scene.w + bx * cfg.block + dx] = blk[dy * cfg.block + dx];

            if (!dlogits) continue;
            Vec dblk(cfg.block_dim());
            for (int dy = 0; dy < cfg.block; ++dy)
                for (int dx = 0; dx < cfg.block; ++dx)
                    dblk[dy * cfg.block + dx] =
                        (*dlogits)[(by * cfg.block + dy) * scene.w + bx * cfg.block + dx];
            Vec dh = dec.head_w2.transpose() * dblk;
            Vec dpre1 = dh.cwiseProduct(pre1.unaryExpr([](double z) { return gelu_grad(z); }));
            Vec dcat = dec.head_w1.transpose() * dpre1;
            Vec dreadout = dcat.head(cfg.d_inner);
            Vec dq = dcat.tail(cfg.d_inner);
            dvalues += dreadout * attnw.transpose();
            Vec dattnw = values.transpose() * dreadout;
            double dot = attnw.dot(dattnw);
            Vec dscores = attnw.cwiseProduct((dattnw.array() - dot).matrix());
            dq += keys * dscores * scale;
            dkeys += q * dscores.transpose() * scale;
            if (wgrads) {
                wgrads->head_w2.noalias() += dblk * h.transpose();
                wgrads->head_b2 += dblk;
                wgrads->head_w1.noalias() += dpre1 * cat.transpose();
                wgrads->head_b1 += dpre1;
                wgrads->wq.noalias() += dq * pix.transpose();
                wgrads->bq += dq;
                wgrads->block_pos.col(b) += dq;
            }
        }

    if (dlogits) {
        if (wgrads) {
            wgrads->wk.noalias() += dkeys * latents.transpose();
            wgrads->wv.noalias() += dvalues * latents.transpose();
        }
        if (dlatents) *dlatents += dec.wk.transpose() * dkeys + dec.wv.transpose() * dvalues;
    }
    return out;
}

} // namespace

Vec decode_mask(const FrozenMaskDecoder& dec, const Mat& latents, const Scene& scene) {
    return decode_impl(dec, latents, scene, nullptr, nullptr, nullptr);
}

Mat decode_mask_backward(const FrozenMaskDecoder& dec, const Mat& latents, const Scene& scene,
                         const Vec& dlogits, FrozenMaskDecoder* wgrads) {
    Mat dlatents = Mat::Zero(dec.cfg.d_latent, dec.cfg.l);
    decode_impl(dec, latents, scene, &dlogits, wgrads, &dlatents);
    return dlatents;
}

// ----------------------------------------------------------- oracle latents

std::vector<TensorRef> producer_refs(OracleProducer& prod) {
    std::vector<TensorRef> out;
    out.push_back({"producer_w", prod.w.data(), prod.w.rows(), prod.w.cols()});
    out.push_back({"producer_b", prod.b.data(), prod.b.size(), 1});
    return out;
}

OracleProducer init_producer(int d, int l, int grid, uint64_t seed) {
    if (d < 1 || l < 1 || grid < 1) throw ConfigError("oracle producer: dimensions must be positive");
    OracleProducer prod;
    prod.d = d;
    prod.l = l;
    prod.grid = grid;
    prod.w = Mat::Zero(l * d, grid * grid);
    prod.b = Vec::Zero(l * d);
    Rng rng(mix_seed(seed, 0x04ac1e));
    for (Eigen::Index j = 0; j < prod.w.cols(); ++j)
        for (Eigen::Index i = 0; i < prod.w.rows(); ++i) prod.w(i, j) = rng.gaussian() * 0.02;
    return prod;
}

Vec centroid_splat(const Scene& scene, int grid) {
    if (grid < 1) throw ConfigError("centroid splat: grid must be positive");
    Vec out = Vec::Zero(static_cast<Eigen::Index>(grid) * grid);
    const double sigma = 2.0; // pixels
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            double cx = (gx + 0.5) * scene.w / grid;
            double cy = (gy + 0.5) * scene.h / grid;
            double v = 0.0;
            for (const auto& inst : scene.instances) {
                double ddx = cx - inst.centroid.x;
                double ddy = cy - inst.centroid.y;
                v += std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * sigma * sigma));
            }
            out[gy * grid + gx] = v;
        }
    return out;
}

Mat oracle_latents(const OracleProducer& prod, const Scene& scene) {
    Vec flat = prod.w * centroid_splat(scene, prod.grid) + prod.b;
    Mat latents(prod.d, prod.l);
    for (int i = 0; i < prod.l; ++i) latents.col(i) = flat.segment(i * prod.d, prod.d);
    return latents;
}

// ------------------------------------------------------------- pretraining

void DecoderPretrainConfig::validate() const {
    if (steps < 1 || batch < 1 || n_train < 1 || n_holdout < 0 || lr <= 0.0)
        throw ConfigError("decoder pretraining: invalid schedule");
}

PretrainResult pretrain_mask_decoder(const SceneConfig& scenes, const DecoderConfig& cfg,
                                     const DecoderPretrainConfig& train, uint64_t seed) {
    cfg.validate();
    train.validate();
    if (cfg.scene_w != scenes.w || cfg.scene_h != scenes.h)
        throw ConfigError("decoder pretraining: scene dimensions do not match the decoder");

    PretrainResult res;
    res.decoder = init_decoder(cfg, mix_seed(seed, 1));
    res.producer = init_producer(cfg.d_latent, cfg.l, 16, mix_seed(seed, 2));

    int total_scenes = train.n_train + train.n_holdout;
    std::vector<Scene> pool(static_cast<size_t>(total_scenes));
    std::vector<Mask> fg(static_cast<size_t>(total_scenes));
    parallel_for(static_cast<size_t>(total_scenes), [&](size_t i) {
        pool[i] = generate_scene(scenes, mix_seed(seed, 3, i));
        fg[i] = foreground_mask(pool[i]);
    });

    AdamState opt;
    for (int step = 0; step < train.steps; ++step) {
        std::vector<FrozenMaskDecoder> dslots(static_cast<size_t>(train.batch));
        std::vector<OracleProducer> pslots(static_cast<size_t>(train.batch));
        parallel_for(static_cast<size_t>(train.batch), [&](size_t i) {
            size_t idx = (static_cast<size_t>(step) * train.batch + i) % static_cast<size_t>(train.n_train);
            dslots[i] = decoder_zeros_like(res.decoder);
            pslots[i].d = res.producer.d;
            pslots[i].l = res.producer.l;
            pslots[i].grid = res.producer.grid;
            pslots[i].w = Mat::Zero(res.producer.w.rows(), res.producer.w.cols());
            pslots[i].b = Vec::Zero(res.producer.b.size());

            Mat z = oracle_latents(res.producer, pool[idx]);
            Vec logits = decode_mask(res.decoder, z, pool[idx]);
            CovtResult covt = covt_loss(logits, fg[idx]);
            Mat dz = decode_mask_backward(res.decoder, z, pool[idx], covt.dlogits, &dslots[i]);
            Vec dflat(res.producer.b.size());
            for (int c = 0; c < res.producer.l; ++c)
                dflat.segment(c * res.producer.d, res.producer.d) = dz.col(c);
            Vec splat = centroid_splat(pool[idx], res.producer.grid);
            pslots[i].w.noalias() += dflat * splat.transpose();
            pslots[i].b += dflat;
        });
        FrozenMaskDecoder dgrad = decoder_zeros_like(res.decoder);
        OracleProducer pgrad = pslots[0];
        for (size_t i = 1; i < pslots.size(); ++i) {
            pgrad.w += pslots[i].w;
            pgrad.b += pslots[i].b;
        }
        auto dg_refs = decoder_refs(dgrad);
        for (size_t i = 0; i < dslots.size(); ++i) {
            auto src = decoder_refs(dslots[i]);
            for (size_t r = 0; r < dg_refs.size(); ++r)
                for (size_t e = 0; e < dg_refs[r].size(); ++e) dg_refs[r].data[e] += src[r].data[e];
        }
        double inv_batch = 1.0 / train.batch;
        for (auto& r : dg_refs)
            for (size_t e = 0; e < r.size(); ++e) r.data[e] *= inv_batch;
        pgrad.w *= inv_batch;
        pgrad.b *= inv_batch;

        std::vector<TensorRef> weights = decoder_refs(res.decoder);
        std::vector<TensorRef> grads = dg_refs;
        for (auto& r : producer_refs(res.producer)) weights.push_back(r);
        for (auto& r : producer_refs(pgrad)) grads.push_back(r);
        adamw_step(weights, grads, opt, train.lr, 0.0);
    }

    if (train.n_holdout > 0) {
        std::vector<double> ious(static_cast<size_t>(train.n_holdout));
        std::vector<double> losses(static_cast<size_t>(train.n_holdout));
        parallel_for(static_cast<size_t>(train.n_holdout), [&](size_t i) {
            size_t idx = static_cast<size_t>(train.n_train) + i;
            Mat z = oracle_latents(res.producer, pool[idx]);
            Vec logits = decode_mask(res.decoder, z, pool[idx]);
            losses[i] = covt_loss(logits, fg[idx]).loss;
            Mask pred(pool[idx].w, pool[idx].h);
            for (int y = 0; y < pool[idx].h; ++y)
                for (int x = 0; x < pool[idx].w; ++x)
                    if (logits[y * pool[idx].w + x] > 0.0) pred.set(x, y, true);
            bool both_empty = !pred.any() && !fg[idx].any();
            ious[i] = both_empty ? 1.0 : mask_iou(pred, fg[idx]);
        });
        double siou = 0.0, sloss = 0.0;
        for (size_t i = 0; i < ious.size(); ++i) {
            siou += ious[i];
            sloss += losses[i];
        }
        res.holdout_iou = siou / train.n_holdout;
        res.holdout_loss = sloss / train.n_holdout;
    }
    return res;
}

// --------------------------------------------------------------- container

namespace {
constexpr char kDecMagic[8] = {'P', 'S', 'E', 'Q', 'D', 'E', 'C', '1'};
}

void save_decoder(const std::string& path, const FrozenMaskDecoder& dec) {
    nlohmann::json header;
    header["format"] = "pointseq-mask-decoder";
    header["version"] = 1;
    const DecoderConfig& c = dec.cfg;
    header["config"] = {{"d_latent", c.d_latent}, {"l", c.l},
                        {"d_inner", c.d_inner},   {"hid", c.hid},
                        {"block", c.block},       {"scene_w", c.scene_w},
                        {"scene_h", c.scene_h}};
    header["checksum"] = hex64(dec.checksum());
    std::string hj = header.dump();

    std::string buf;
    buf.append(kDecMagic, sizeof(kDecMagic));
    detail::append_u32(buf, static_cast<uint32_t>(hj.size()));
    buf += hj;
    for (const auto& r : decoder_refs(const_cast<FrozenMaskDecoder&>(dec))) {
        detail::append_u32(buf, static_cast<uint32_t>(r.name.size()));
        buf += r.name;
        detail::append_u32(buf, static_cast<uint32_t>(r.rows));
        detail::append_u32(buf, static_cast<uint32_t>(r.cols));
        std::vector<double> row_major(r.size());
        for (Eigen::Index i = 0; i < r.rows; ++i)
            for (Eigen::Index j = 0; j < r.cols; ++j)
                row_major[static_cast<size_t>(i) * static_cast<size_t>(r.cols) + static_cast<size_t>(j)] =
                    r.data[static_cast<size_t>(j) * static_cast<size_t>(r.rows) + static_cast<size_t>(i)];
        detail::append_doubles(buf, row_major.data(), row_major.size());
    }
    detail::append_u64(buf, fnv1a64(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to " + path);
}

FrozenMaskDecoder load_decoder(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kDecMagic)) throw FileTruncatedError(path + ": shorter than the magic header");
    if (std::memcmp(buf.data(), kDecMagic, sizeof(kDecMagic)) != 0) {
        if (std::memcmp(buf.data(), kDecMagic, sizeof(kDecMagic) - 1) == 0)
            throw FileVersionError(path + ": unsupported decoder container version");
        throw IoError(path + ": not a mask decoder file");
    }

    detail::Reader rd{buf, sizeof(kDecMagic)};
    uint32_t hlen = rd.u32();
    std::string hj = rd.bytes(hlen);
    DecoderConfig cfg;
    uint64_t stored_checksum = 0;
    try {
        nlohmann::json header = nlohmann::json::parse(hj);
        if (header.at("format").get<std::string>() != "pointseq-mask-decoder")
            throw IoError(path + ": not a mask decoder file");
        if (header.at("version").get<int>() != 1)
            throw FileVersionError(path + ": unsupported decoder version");
        const auto& m = header.at("config");
        cfg.d_latent = m.at("d_latent").get<int>();
        cfg.l = m.at("l").get<int>();
        cfg.d_inner = m.at("d_inner").get<int>();
        cfg.hid = m.at("hid").get<int>();
        cfg.block = m.at("block").get<int>();
        cfg.scene_w = m.at("scene_w").get<int>();
        cfg.scene_h = m.at("scene_h").get<int>();
        stored_checksum = parse_hex64(header.at("checksum").get<std::string>());
    } catch (const nlohmann::json::exception&) {
        throw IoError(path + ": malformed decoder header");
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw IoError(path + ": decoder header holds an invalid config: " + e.what());
    }

    FrozenMaskDecoder dec;
    shape_decoder(dec, cfg);
    for (auto& r : decoder_refs(dec)) {
        uint32_t nlen = rd.u32();
        std::string name = rd.bytes(nlen);
        uint32_t rows = rd.u32();
        uint32_t cols = rd.u32();
        if (name != r.name || rows != static_cast<uint32_t>(r.rows) || cols != static_cast<uint32_t>(r.cols))
            throw IoError(path + ": tensor layout mismatch at " + r.name);
        std::vector<double> row_major(r.size());
        rd.doubles(row_major.data(), row_major.size());
        for (Eigen::Index i = 0; i < r.rows; ++i)
            for (Eigen::Index j = 0; j < r.cols; ++j)
                r.data[static_cast<size_t>(j) * static_cast<size_t>(r.rows) + static_cast<size_t>(i)] =
                    row_major[static_cast<size_t>(i) * static_cast<size_t>(r.cols) + static_cast<size_t>(j)];
    }
    size_t body_end = rd.pos;
    uint64_t trailer = rd.u64();
    if (rd.pos != buf.size()) throw IoError(path + ": trailing bytes after the checksum");
    if (trailer != fnv1a64(buf.data(), body_end)) throw FileChecksumError(path + ": decoder checksum mismatch");
    if (dec.checksum() != stored_checksum) throw FileChecksumError(path + ": decoder weight checksum mismatch");
    return dec;
}

} // namespace pointseq
