#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "pointseq/config.hpp"
#include "pointseq/errors.hpp"

using namespace pointseq;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("pointseq_config_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_file(const fs::path& dir, const char* name, const std::string& text) {
    fs::path p = dir / name;
    std::ofstream out(p, std::ios::binary);
    out << text;
    return p;
}

} // namespace

TEST_SUITE("config") {

TEST_CASE("defaults validate and serialize to a stable tree") {
    ExperimentConfig cfg = resolve_config("", {});
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.sft.steps == 2000);
    CHECK(cfg.rft.group_size == 8);
    CHECK(cfg.out_root == "runs");

    std::string a = config_json(cfg);
    std::string b = config_json(resolve_config("", {}));
    CHECK(a == b);
    CHECK(a.back() == '\n');

    json j = json::parse(a);
    for (const char* sec : {"scene", "dataset", "tokenizer", "model", "decoder",
                            "decoder_pretrain", "sft", "rft", "eval"})
        CHECK(j.contains(sec));
    CHECK(j.at("seed").get<uint64_t>() == 1);
    CHECK(j.at("rft").at("fgas_span").get<std::string>() == "coords");
}

TEST_CASE("derived module configs mirror the experiment settings") {
    ExperimentConfig cfg;
    cfg.scene.w = 32;
    cfg.scene.h = 32;
    cfg.k = 16;
    cfg.l = 2;
    cfg.d = 8;
    cfg.patch = 4;
    cfg.dec_block = 4;

    ModelConfig mc = cfg.model();
    CHECK(mc.k == 16);
    CHECK(mc.scene_w == 32);
    CHECK(mc.l == 2);

    DecoderConfig dc = cfg.decoder();
    CHECK(dc.d_latent == 8);
    CHECK(dc.l == 2);
    CHECK(dc.scene_w == 32);

    EvalConfig ec = cfg.eval();
    CHECK(ec.r_thresh == cfg.r_thresh);
    CHECK(ec.seg.threshold == cfg.seg.threshold);
}

TEST_CASE("file values override defaults and unknown keys are rejected") {
    fs::path dir = temp_dir("file");
    fs::path good = write_file(dir, "good.json", R"({
        "sft": {"lr": 0.003, "steps": 17},
        "scene": {"w": 32, "h": 32},
        "seed": 99
    })");
    ExperimentConfig cfg = resolve_config(good.string(), {});
    CHECK(cfg.sft.lr == 0.003);
    CHECK(cfg.sft.steps == 17);
    CHECK(cfg.scene.w == 32);
    CHECK(cfg.seed == 99);
    CHECK(cfg.sft.batch == 8); // untouched default

    fs::path bad_sec = write_file(dir, "bad_sec.json", R"({"training": {"lr": 1}})");
    CHECK_THROWS_AS(resolve_config(bad_sec.string(), {}), ConfigError);

    fs::path bad_key = write_file(dir, "bad_key.json", R"({"sft": {"learning_rate": 1}})");
    CHECK_THROWS_WITH_AS(resolve_config(bad_key.string(), {}),
                         "config: unknown key 'sft.learning_rate'", ConfigError);

    fs::path bad_type = write_file(dir, "bad_type.json", R"({"sft": {"lr": "fast"}})");
    CHECK_THROWS_AS(resolve_config(bad_type.string(), {}), ConfigError);

    fs::path not_json = write_file(dir, "broken.json", "{not json");
    CHECK_THROWS_AS(resolve_config(not_json.string(), {}), IoError);
    CHECK_THROWS_AS(resolve_config((dir / "absent.json").string(), {}), IoError);
}

TEST_CASE("overrides win over the file which wins over defaults") {
    fs::path dir = temp_dir("layers");
    fs::path file = write_file(dir, "c.json", R"({"rft": {"steps": 50, "lr": 0.01}})");
    ExperimentConfig cfg =
        resolve_config(file.string(), {"rft.steps=7", "out_root=elsewhere", "rft.use_fgas=false"});
    CHECK(cfg.rft.steps == 7);      // flag beats file
    CHECK(cfg.rft.lr == 0.01);      // file beats default
    CHECK(cfg.rft.use_fgas == false);
    CHECK(cfg.out_root == "elsewhere"); // bare string value

    CHECK_THROWS_AS(resolve_config("", {"rft.steps"}), ConfigError);
    CHECK_THROWS_AS(resolve_config("", {"rft.stepz=7"}), ConfigError);
    CHECK_THROWS_AS(resolve_config("", {"nosuch=1"}), ConfigError);
    CHECK_THROWS_AS(resolve_config("", {"sft=1"}), ConfigError); // sections are not leaves

    ExperimentConfig span = resolve_config("", {"rft.fgas_span=coords_brackets"});
    CHECK(span.rft.fgas_span == FgasSpan::coords_brackets);
    CHECK_THROWS_AS(resolve_config("", {"rft.fgas_span=everything"}), ConfigError);
}

TEST_CASE("validation walks every section") {
    auto broken = [](auto mutate) {
        ExperimentConfig cfg;
        mutate(cfg);
        return cfg;
    };
    CHECK_THROWS_AS(broken([](auto& c) { c.n_train = 0; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.k = 1; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.n_heads = 3; }).validate(), ConfigError); // 3 ∤ 32
    CHECK_THROWS_AS(broken([](auto& c) { c.patch = 7; }).validate(), ConfigError);   // 7 ∤ 64
    CHECK_THROWS_AS(broken([](auto& c) { c.max_tokens = c.l + 6; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.dec_block = 7; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.sft.batch = 0; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.rft.group_size = 1; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.rft_batch_scenes = 0; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.r_thresh = 0.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.seg.threshold = 1.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.threads = -1; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.out_root.clear(); }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](auto& c) { c.scene.radius_lo = 0.0; }).validate(), ConfigError);
    CHECK_NOTHROW(ExperimentConfig{}.validate());
}

TEST_CASE("serialized config resolves back to the same values") {
    ExperimentConfig cfg;
    cfg.sft.alpha = 0.25;
    cfg.rft.delta = 0.02;
    cfg.rft.fgas_span = FgasSpan::coords_brackets;
    cfg.seed = 42;
    cfg.scene.noise = 0.01;

    fs::path dir = temp_dir("roundtrip");
    fs::path p = write_file(dir, "resolved.json", config_json(cfg));
    ExperimentConfig back = resolve_config(p.string(), {});
    CHECK(config_json(back) == config_json(cfg));
    CHECK(back.rft.fgas_span == FgasSpan::coords_brackets);
    CHECK(back.seed == 42);
}

} // TEST_SUITE

