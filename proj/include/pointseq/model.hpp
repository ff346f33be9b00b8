#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "pointseq/scene.hpp"
#include "pointseq/tokenizer.hpp"
#include "pointseq/vocab.hpp"

namespace pointseq {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct ModelConfig {
    int k = 64;
    int l = 4;
    int d = 32;
    int n_heads = 2;
    int n_blocks = 1;
    int patch = 8;
    int scene_w = 64;
    int scene_h = 64;
    int max_tokens = 64; // BOS + latent prefix + generated budget

    Vocabulary vocab() const { return {k, l}; }
    int patch_dim() const { return patch * patch; }
    int patches_x() const { return scene_w / patch; }
    int patches_y() const { return scene_h / patch; }
    int n_patches() const { return patches_x() * patches_y(); }
    int seq_len() const { return n_patches() + max_tokens; }
    int ffn_dim() const { return 4 * d; }
    int head_dim() const { return d / n_heads; }
    // longest content (post-prefix) sequence the model can consume
    int content_budget() const { return max_tokens - 1 - l; }

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct AttnBlock {
    Mat wq, wk, wv, wo; // d x d
    Vec bq, bk, bv, bo;
    Vec ln1_g, ln1_b, ln2_g, ln2_b;
    Mat w1; // ffn x d
    Vec b1;
    Mat w2; // d x ffn
    Vec b2;
};

struct PolicyParams {
    ModelConfig cfg;
    Mat tok_embed;  // d x V
    Mat tok_pos;    // d x max_tokens
    Mat patch_proj; // d x patch_dim
    Vec patch_bias; // d
    Mat patch_pos;  // d x n_patches
    std::vector<AttnBlock> blocks;
    Vec lnf_g, lnf_b;
    Mat head_w; // V x d
    Vec head_b; // V
    uint64_t version = 0;
};

// View into one parameter (or gradient) tensor; order and names are stable
// and define the checkpoint layout.
struct TensorRef {
    std::string name;
    double* data;
    Eigen::Index rows;
    Eigen::Index cols;
    size_t size() const { return static_cast<size_t>(rows) * static_cast<size_t>(cols); }
};

std::vector<TensorRef> tensor_refs(PolicyParams& p);

PolicyParams init_params(const ModelConfig& cfg, uint64_t seed);
PolicyParams zeros_like(const PolicyParams& p);
size_t param_count(const PolicyParams& p);

// ------------------------------------------------------------ scene encoder

struct SceneFeatures {
    Mat feats;   // d x n_patches
    Mat patches; // patch_dim x n_patches, raw intensities (kept for backward)
};
SceneFeatures encode_scene(const PolicyParams& p, const Scene& scene);

// --------------------------------------------------------- forward/backward

struct LnCache {
    Mat xhat;
    Vec inv_std;
    Mat out;
};

struct BlockTape {
    Mat x_in, q, k, v, ctx, x_mid, h1, g, x_out;
    LnCache ln1, ln2;
    std::vector<Mat> attn; // per head, row = query, col = key, lower-triangular
};

struct ForwardTape {
    int t = 0;       // positions filled
    int n_patches = 0;
    Mat x0;          // d x T embedding inputs
    std::vector<BlockTape> blocks;
    LnCache lnf;
    Mat y;           // d x T final-norm outputs
    std::vector<int> token_ids;  // ids at token positions (embedding backward)
    Mat patches;                 // raw patch pixels (projection backward)
    std::vector<int> sup_cols;   // tape columns whose logits are supervised
};

struct TfResult {
    Mat logits;  // V x |content|; column j predicts content[j]
    Mat latents; // d x L, outputs at the latent positions
    ForwardTape tape;
};

// The sole logits-to-logprob path. Every consumer (sampling, scoring,
// training) must call this so recomputed log-probabilities stay bitwise
// equal to the ones recorded at sampling time.
Vec log_softmax(const Vec& z);

// target must start with BOS; an optional latent-id prefix after BOS is
// stripped (the model always forces its own latent prefix).
TfResult forward_teacher_forced(const PolicyParams& p, const Scene& scene, const TokenSequence& target);

// dlogits: V x |content| (may have fewer cols than supervised positions only
// if zero); dlatents: d x L or empty. Accumulates into grads.
void backward(const PolicyParams& p, const ForwardTape& tape, const Mat& dlogits, const Mat& dlatents,
              PolicyParams& grads);

// ------------------------------------------------------------------ sampling

struct Rollout {
    TokenSequence tokens;                // BOS + latent ids + generated tokens
    std::vector<double> sample_logprobs; // under the tempered sampling distribution
    ParseResult parsed;
    Mat latents; // d x L
    bool format_ok() const { return std::holds_alternative<ParsedDetections>(parsed); }
};

// temperature == 0 is greedy (argmax, ties to the lower id). tokens.logprobs
// holds log-probabilities under the untempered policy; forced prefix
// positions carry 0.
Rollout sample_rollout(const PolicyParams& p, const Scene& scene, double temperature, uint64_t seed);

// Samples g rollouts sharing one prefix evaluation; rollout i uses seed
// mix_seed(seed, i). Bitwise identical to g separate sample_rollout calls.
std::vector<Rollout> sample_group(const PolicyParams& p, const Scene& scene, int g, double temperature,
                                  uint64_t seed);

// Per-token log-probabilities the policy assigns to a fixed token sequence
// (layout BOS + latents + content). Equals the logprobs sample_rollout
// records for its own output, bit for bit.
std::vector<double> logprob_of(const PolicyParams& p, const Scene& scene, const TokenSequence& tokens);

// ----------------------------------------------------------------- optimizer

struct AdamState {
    std::vector<double> m, v;
    int64_t t = 0;
};

// Decoupled-weight-decay Adam step; rejects non-finite gradients without
// touching params; bumps the version counter.
void update(PolicyParams& params, PolicyParams& grads, AdamState& opt, double lr, double weight_decay);

// Shared flat-tensor core so other trainable bundles reuse the same optimizer.
void adamw_step(std::vector<TensorRef> weights, std::vector<TensorRef> grads, AdamState& opt, double lr,
                double weight_decay);

// --------------------------------------------------------------- checkpoints

struct LoadedCheckpoint {
    PolicyParams params;
    AdamState opt;
    int64_t step = 0;
    uint64_t decoder_checksum = 0;
    uint64_t vocab_hash = 0;
};

void save_checkpoint(const std::string& path, const PolicyParams& params, const AdamState& opt,
                     int64_t step, uint64_t decoder_checksum);
LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace pointseq
