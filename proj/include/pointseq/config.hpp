#pragma once

#include <string>
#include <vector>

#include "pointseq/decoder.hpp"
#include "pointseq/grpo.hpp"
#include "pointseq/metrics.hpp"
#include "pointseq/model.hpp"
#include "pointseq/scene.hpp"

namespace pointseq {

struct SftSection {
    double sigma = 1.0;
    double alpha = 0.5;
    double lr = 1e-3;
    double weight_decay = 0.0;
    int steps = 2000;
    int batch = 8;
    int val_every = 200; // 0 disables validation passes
    int log_every = 1;

    void validate() const;
};

// One file drives every stage. Leaf values may be overridden per run;
// precedence is flag over file over built-in default. The resolved form is
// copied into each output directory so artifacts carry their own provenance.
struct ExperimentConfig {
    SceneConfig scene;
    int n_train = 500;
    int n_val = 64;
    int k = 64; // coordinate bins
    int l = 4;  // latent prefix length

    // policy network shape
    int d = 32;
    int n_heads = 2;
    int n_blocks = 1;
    int patch = 8;
    int max_tokens = 64;

    // frozen mask decoder shape and its pretraining budget
    int dec_inner = 32;
    int dec_hid = 64;
    int dec_block = 4;
    DecoderPretrainConfig pretrain;

    SftSection sft;
    RftConfig rft;
    int rft_batch_scenes = 4;

    double r_thresh = 6.0;
    SegmenterConfig seg;

    uint64_t seed = 1;
    int threads = 0; // 0 = all cores
    std::string out_root = "runs";

    ModelConfig model() const;
    DecoderConfig decoder() const;
    EvalConfig eval() const;

    // Rejects any value a stage would refuse, before side effects.
    void validate() const;
};

// Serialized form: sections scene/dataset/tokenizer/model/decoder/
// decoder_pretrain/sft/rft/eval plus top-level seed/threads/out_root.
std::string config_json(const ExperimentConfig& cfg);

// Built-in defaults, optionally updated from a JSON file, then from
// key=value overrides with dotted paths ("sft.lr=0.003"). Values parse as
// JSON scalars, falling back to strings.
ExperimentConfig resolve_config(const std::string& file_path,
                                const std::vector<std::string>& overrides);

} // namespace pointseq
