#include "pointseq/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "pointseq/errors.hpp"

namespace pointseq {

using nlohmann::json;

void SftSection::validate() const {
    if (!(sigma >= 0.0)) throw ConfigError("sft: sigma must be non-negative");
    if (!(alpha >= 0.0)) throw ConfigError("sft: alpha must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("sft: lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("sft: weight_decay must be non-negative");
    if (steps < 0) throw ConfigError("sft: steps must be non-negative");
    if (batch < 1) throw ConfigError("sft: batch must be at least 1");
    if (val_every < 0) throw ConfigError("sft: val_every must be non-negative");
    if (log_every < 1) throw ConfigError("sft: log_every must be at least 1");
}

ModelConfig ExperimentConfig::model() const {
    ModelConfig m;
    m.k = k;
    m.l = l;
    m.d = d;
    m.n_heads = n_heads;
    m.n_blocks = n_blocks;
    m.patch = patch;
    m.scene_w = scene.w;
    m.scene_h = scene.h;
    m.max_tokens = max_tokens;
    return m;
}

DecoderConfig ExperimentConfig::decoder() const {
    DecoderConfig c;
    c.d_latent = d;
    c.l = l;
    c.d_inner = dec_inner;
    c.hid = dec_hid;
    c.block = dec_block;
    c.scene_w = scene.w;
    c.scene_h = scene.h;
    return c;
}

EvalConfig ExperimentConfig::eval() const {
    EvalConfig c;
    c.r_thresh = r_thresh;
    c.seg = seg;
    return c;
}

void ExperimentConfig::validate() const {
    if (scene.w < 1 || scene.h < 1) throw ConfigError("scene: raster must be non-empty");
    if (scene.count_lo < 0 || scene.count_hi < scene.count_lo)
        throw ConfigError("scene: instance count range is inverted");
    if (!(scene.radius_lo > 0.0) || scene.radius_hi < scene.radius_lo)
        throw ConfigError("scene: radius range is invalid");
    if (!(scene.min_sep >= 0.0)) throw ConfigError("scene: min_sep must be non-negative");
    if (!(scene.noise >= 0.0)) throw ConfigError("scene: noise must be non-negative");
    if (n_train < 1) throw ConfigError("dataset: n_train must be at least 1");
    if (n_val < 1) throw ConfigError("dataset: n_val must be at least 1");

    if (k < 2) throw ConfigError("tokenizer: k must be at least 2");
    if (l < 0) throw ConfigError("tokenizer: l must be non-negative");

    if (d < 1) throw ConfigError("model: d must be positive");
    if (n_heads < 1 || d % n_heads != 0)
        throw ConfigError("model: n_heads must divide d");
    if (n_blocks < 1) throw ConfigError("model: n_blocks must be at least 1");
    if (patch < 1 || scene.w % patch != 0 || scene.h % patch != 0)
        throw ConfigError("model: patch must divide the scene raster");
    // Room for BOS, the latent prefix, one detection, and EOS.
    if (max_tokens < 1 + l + 6)
        throw ConfigError("model: max_tokens cannot fit a single detection");

    if (dec_inner < 1 || dec_hid < 1) throw ConfigError("decoder: widths must be positive");
    if (dec_block < 1 || scene.w % dec_block != 0 || scene.h % dec_block != 0)
        throw ConfigError("decoder: block must divide the scene raster");
    decoder().validate();
    pretrain.validate();

    sft.validate();
    rft.validate();
    if (rft_batch_scenes < 1) throw ConfigError("rft: batch_scenes must be at least 1");

    if (!(r_thresh > 0.0)) throw ConfigError("eval: r_thresh must be positive");
    if (!(seg.threshold > 0.0 && seg.threshold < 1.0))
        throw ConfigError("eval: seg_threshold must lie inside (0, 1)");
    if (!(seg.cap > 0.0)) throw ConfigError("eval: seg_cap must be positive");

    if (threads < 0) throw ConfigError("threads must be non-negative");
    if (out_root.empty()) throw ConfigError("out_root must not be empty");
}

namespace {

json to_json_tree(const ExperimentConfig& c) {
    json j;
    j["scene"] = {{"w", c.scene.w},
                  {"h", c.scene.h},
                  {"count_lo", c.scene.count_lo},
                  {"count_hi", c.scene.count_hi},
                  {"radius_lo", c.scene.radius_lo},
                  {"radius_hi", c.scene.radius_hi},
                  {"min_sep", c.scene.min_sep},
                  {"noise", c.scene.noise}};
    j["dataset"] = {{"n_train", c.n_train}, {"n_val", c.n_val}};
    j["tokenizer"] = {{"k", c.k}, {"l", c.l}};
    j["model"] = {{"d", c.d},
                  {"n_heads", c.n_heads},
                  {"n_blocks", c.n_blocks},
                  {"patch", c.patch},
                  {"max_tokens", c.max_tokens}};
    j["decoder"] = {{"d_inner", c.dec_inner}, {"hid", c.dec_hid}, {"block", c.dec_block}};
    j["decoder_pretrain"] = {{"steps", c.pretrain.steps},
                             {"batch", c.pretrain.batch},
                             {"lr", c.pretrain.lr},
                             {"n_train", c.pretrain.n_train},
                             {"n_holdout", c.pretrain.n_holdout}};
    j["sft"] = {{"sigma", c.sft.sigma},
                {"alpha", c.sft.alpha},
                {"lr", c.sft.lr},
                {"weight_decay", c.sft.weight_decay},
                {"steps", c.sft.steps},
                {"batch", c.sft.batch},
                {"val_every", c.sft.val_every},
                {"log_every", c.sft.log_every}};
    j["rft"] = {{"group_size", c.rft.group_size},
                {"epsilon", c.rft.epsilon},
                {"delta", c.rft.delta},
                {"use_fgas", c.rft.use_fgas},
                {"beta", c.rft.beta},
                {"fgas_span", c.rft.fgas_span == FgasSpan::coords ? "coords" : "coords_brackets"},
                {"gamma", c.rft.gamma},
                {"temperature", c.rft.temperature},
                {"lr", c.rft.lr},
                {"weight_decay", c.rft.weight_decay},
                {"steps", c.rft.steps},
                {"kl_coeff", c.rft.kl_coeff},
                {"r_thresh", c.rft.r_thresh},
                {"batch_scenes", c.rft_batch_scenes}};
    j["eval"] = {{"r_thresh", c.r_thresh},
                 {"seg_threshold", c.seg.threshold},
                 {"seg_cap", c.seg.cap}};
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["out_root"] = c.out_root;
    return j;
}

template <typename T>
void pick(const json& j, const char* section, const char* key, T& out) {
    if (!j.contains(section)) return;
    const json& s = j.at(section);
    if (!s.is_object()) throw ConfigError(std::string("config: section '") + section + "' must be an object");
    if (!s.contains(key)) return;
    try {
        out = s.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value for ") + section + "." + key);
    }
}

ExperimentConfig from_json_tree(const json& j) {
    ExperimentConfig c;
    pick(j, "scene", "w", c.scene.w);
    pick(j, "scene", "h", c.scene.h);
    pick(j, "scene", "count_lo", c.scene.count_lo);
    pick(j, "scene", "count_hi", c.scene.count_hi);
    pick(j, "scene", "radius_lo", c.scene.radius_lo);
    pick(j, "scene", "radius_hi", c.scene.radius_hi);
    pick(j, "scene", "min_sep", c.scene.min_sep);
    pick(j, "scene", "noise", c.scene.noise);
    pick(j, "dataset", "n_train", c.n_train);
    pick(j, "dataset", "n_val", c.n_val);
    pick(j, "tokenizer", "k", c.k);
    pick(j, "tokenizer", "l", c.l);
    pick(j, "model", "d", c.d);
    pick(j, "model", "n_heads", c.n_heads);
    pick(j, "model", "n_blocks", c.n_blocks);
    pick(j, "model", "patch", c.patch);
    pick(j, "model", "max_tokens", c.max_tokens);
    pick(j, "decoder", "d_inner", c.dec_inner);
    pick(j, "decoder", "hid", c.dec_hid);
    pick(j, "decoder", "block", c.dec_block);
    pick(j, "decoder_pretrain", "steps", c.pretrain.steps);
    pick(j, "decoder_pretrain", "batch", c.pretrain.batch);
    pick(j, "decoder_pretrain", "lr", c.pretrain.lr);
    pick(j, "decoder_pretrain", "n_train", c.pretrain.n_train);
    pick(j, "decoder_pretrain", "n_holdout", c.pretrain.n_holdout);
    pick(j, "sft", "sigma", c.sft.sigma);
    pick(j, "sft", "alpha", c.sft.alpha);
    pick(j, "sft", "lr", c.sft.lr);
    pick(j, "sft", "weight_decay", c.sft.weight_decay);
    pick(j, "sft", "steps", c.sft.steps);
    pick(j, "sft", "batch", c.sft.batch);
    pick(j, "sft", "val_every", c.sft.val_every);
    pick(j, "sft", "log_every", c.sft.log_every);
    pick(j, "rft", "group_size", c.rft.group_size);
    pick(j, "rft", "epsilon", c.rft.epsilon);
    pick(j, "rft", "delta", c.rft.delta);
    pick(j, "rft", "use_fgas", c.rft.use_fgas);
    pick(j, "rft", "beta", c.rft.beta);
    std::string span = c.rft.fgas_span == FgasSpan::coords ? "coords" : "coords_brackets";
    pick(j, "rft", "fgas_span", span);
    if (span == "coords")
        c.rft.fgas_span = FgasSpan::coords;
    else if (span == "coords_brackets")
        c.rft.fgas_span = FgasSpan::coords_brackets;
    else
        throw ConfigError("config: rft.fgas_span must be 'coords' or 'coords_brackets'");
    pick(j, "rft", "gamma", c.rft.gamma);
    pick(j, "rft", "temperature", c.rft.temperature);
    pick(j, "rft", "lr", c.rft.lr);
    pick(j, "rft", "weight_decay", c.rft.weight_decay);
    pick(j, "rft", "steps", c.rft.steps);
    pick(j, "rft", "kl_coeff", c.rft.kl_coeff);
    pick(j, "rft", "r_thresh", c.rft.r_thresh);
    pick(j, "rft", "batch_scenes", c.rft_batch_scenes);
    pick(j, "eval", "r_thresh", c.r_thresh);
    pick(j, "eval", "seg_threshold", c.seg.threshold);
    pick(j, "eval", "seg_cap", c.seg.cap);
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
    if (j.contains("out_root")) c.out_root = j.at("out_root").get<std::string>();
    return c;
}

} // namespace

std::string config_json(const ExperimentConfig& cfg) {
    return to_json_tree(cfg).dump(2) + "\n";
}

ExperimentConfig resolve_config(const std::string& file_path,
                                const std::vector<std::string>& overrides) {
    json j = to_json_tree(ExperimentConfig{});
    if (!file_path.empty()) {
        std::ifstream in(file_path, std::ios::binary);
        if (!in) throw IoError("cannot open config file: " + file_path);
        json file;
        try {
            in >> file;
        } catch (const json::exception& e) {
            throw IoError("malformed config " + file_path + ": " + e.what());
        }
        if (!file.is_object()) throw ConfigError("config: top level must be an object");
        for (auto it = file.begin(); it != file.end(); ++it) {
            if (!j.contains(it.key()))
                throw ConfigError("config: unknown section or key '" + it.key() + "'");
            if (it->is_object()) {
                for (auto f = it->begin(); f != it->end(); ++f) {
                    if (!j.at(it.key()).contains(f.key()))
                        throw ConfigError("config: unknown key '" + it.key() + "." + f.key() + "'");
                    j[it.key()][f.key()] = f.value();
                }
            } else {
                j[it.key()] = it.value();
            }
        }
    }
    for (const std::string& ov : overrides) {
        size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + ov + "' is not of the form key=value");
        std::string key = ov.substr(0, eq);
        std::string val = ov.substr(eq + 1);
        json parsed;
        try {
            parsed = json::parse(val);
        } catch (const json::exception&) {
            parsed = val; // bare strings stay strings
        }
        size_t dot = key.find('.');
        if (dot == std::string::npos) {
            if (!j.contains(key) || j.at(key).is_object())
                throw ConfigError("override targets unknown setting '" + key + "'");
            j[key] = parsed;
        } else {
            std::string section = key.substr(0, dot);
            std::string leaf = key.substr(dot + 1);
            if (!j.contains(section) || !j.at(section).is_object() ||
                !j.at(section).contains(leaf))
                throw ConfigError("override targets unknown setting '" + key + "'");
            j[section][leaf] = parsed;
        }
    }
    return from_json_tree(j);
}

} // namespace pointseq
