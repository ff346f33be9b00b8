#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pointseq/model.hpp"
#include "pointseq/scene.hpp"

namespace pointseq {

// Cross-attention mask decoder. Pixel blocks issue queries built from their
// own intensities plus a learned block position; keys and values come from
// the latent vectors only, so mask content that the image cannot explain
// must flow through the latents. Trained once against oracle latents, then
// frozen for policy training.

struct DecoderConfig {
    int d_latent = 32; // must match the policy's model dimension
    int l = 4;
    int d_inner = 32;
    int hid = 64;
    int block = 4;
    int scene_w = 64;
    int scene_h = 64;

    int block_dim() const { return block * block; }
    int blocks_x() const { return scene_w / block; }
    int blocks_y() const { return scene_h / block; }
    int n_blocks() const { return blocks_x() * blocks_y(); }

    void validate() const;
    bool operator==(const DecoderConfig&) const = default;
};

struct FrozenMaskDecoder {
    DecoderConfig cfg;
    Mat wq;        // d_inner x block_dim
    Vec bq;        // d_inner
    Mat block_pos; // d_inner x n_blocks
    Mat wk;        // d_inner x d_latent
    Mat wv;        // d_inner x d_latent
    Mat head_w1;   // hid x 2*d_inner
    Vec head_b1;   // hid
    Mat head_w2;   // block_dim x hid
    Vec head_b2;   // block_dim

    uint64_t checksum() const;
};

std::vector<TensorRef> decoder_refs(FrozenMaskDecoder& dec);
FrozenMaskDecoder init_decoder(const DecoderConfig& cfg, uint64_t seed);
FrozenMaskDecoder decoder_zeros_like(const FrozenMaskDecoder& dec);

// Foreground logits over the whole scene, pixel (x, y) at index y*w + x.
Vec decode_mask(const FrozenMaskDecoder& dec, const Mat& latents, const Scene& scene);

// Pull the pixel-logit gradient back to the latents (recomputes the forward
// pass internally). wgrads, when given, also accumulates decoder-weight
// gradients for pretraining.
Mat decode_mask_backward(const FrozenMaskDecoder& dec, const Mat& latents, const Scene& scene,
                         const Vec& dlogits, FrozenMaskDecoder* wgrads = nullptr);

// ----------------------------------------------------------- oracle latents

// Linear probe from a Gaussian-splat rendering of the ground-truth centroids
// to a synthetic latent bundle; stands in for the policy while the decoder
// is pretrained.
struct OracleProducer {
    int d = 32;
    int l = 4;
    int grid = 16;
    Mat w; // (l*d) x grid*grid
    Vec b; // l*d
};

std::vector<TensorRef> producer_refs(OracleProducer& prod);
OracleProducer init_producer(int d, int l, int grid, uint64_t seed);

// Soft occupancy rendering of the instance centroids on a grid x grid raster.
Vec centroid_splat(const Scene& scene, int grid);
Mat oracle_latents(const OracleProducer& prod, const Scene& scene);

// ------------------------------------------------------------- pretraining

struct DecoderPretrainConfig {
    int steps = 600;
    int batch = 8;
    double lr = 1e-2;
    int n_train = 64;
    int n_holdout = 16;

    void validate() const;
};

struct PretrainResult {
    FrozenMaskDecoder decoder;
    OracleProducer producer;
    double holdout_iou = 0.0;  // mean over holdout scenes, logits thresholded at 0
    double holdout_loss = 0.0; // mean mask loss over holdout scenes
};

PretrainResult pretrain_mask_decoder(const SceneConfig& scenes, const DecoderConfig& cfg,
                                     const DecoderPretrainConfig& train, uint64_t seed);

// --------------------------------------------------------------- container

void save_decoder(const std::string& path, const FrozenMaskDecoder& dec);
FrozenMaskDecoder load_decoder(const std::string& path);

} // namespace pointseq
