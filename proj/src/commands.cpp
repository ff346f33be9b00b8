#include "pointseq/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "pointseq/errors.hpp"
#include "pointseq/parallel.hpp"
#include "pointseq/rng.hpp"
#include "pointseq/supervision.hpp"
#include "pointseq/tokenizer.hpp"
#include "pointseq/util.hpp"

namespace pointseq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed-space salts. Frozen: changing any of them silently regenerates
// different datasets and runs from the same (config, seed).
constexpr uint64_t kTrainSceneSalt = 0x7363746e;
constexpr uint64_t kValSceneSalt = 0x7363766c;
constexpr uint64_t kDecoderSalt = 0x6465636f;
constexpr uint64_t kPolicyInitSalt = 0x696e6974;
constexpr uint64_t kSftBatchSalt = 0x73667462;
constexpr uint64_t kRftBatchSalt = 0x72667462;
constexpr uint64_t kRftStepSalt = 0x72667473;

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

void write_config_copy(const ExperimentConfig& cfg, const fs::path& out_dir) {
    write_text(out_dir / "config.json", config_json(cfg));
}

std::vector<Scene> load_split_scenes(const std::string& dataset_dir, const std::string& split) {
    Manifest m = load_manifest((fs::path(dataset_dir) / "manifest.json").string());
    std::vector<std::string> files = m.files_for(split);
    if (files.empty()) throw IoError("dataset has no '" + split + "' scenes: " + dataset_dir);
    std::vector<Scene> scenes(files.size());
    parallel_for(files.size(), [&](size_t i) {
        scenes[i] = load_scene((fs::path(dataset_dir) / files[i]).string());
    });
    return scenes;
}

std::string scene_name(const char* split, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%05d.psc", split, i);
    return buf;
}

void reduce_slots(std::vector<PolicyParams>& slots, PolicyParams& grads) {
    auto dst = tensor_refs(grads);
    for (auto& slot : slots) {
        auto src = tensor_refs(slot);
        for (size_t k = 0; k < dst.size(); ++k)
            for (size_t e = 0; e < dst[k].size(); ++e) dst[k].data[e] += src[k].data[e];
    }
}

void scale_params(PolicyParams& grads, double s) {
    for (auto& r : tensor_refs(grads))
        for (size_t e = 0; e < r.size(); ++e) r.data[e] *= s;
}

} // namespace

GenerateResult cmd_generate(const ExperimentConfig& cfg, const std::string& out_dir, bool force) {
    cfg.validate();
    set_default_threads(static_cast<size_t>(cfg.threads));
    fs::path dir(out_dir);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw IoError("output directory is not empty (use --force to overwrite): " + out_dir);
    ensure_dir(dir);

    Manifest m;
    m.seed = cfg.seed;
    for (int i = 0; i < cfg.n_train; ++i) {
        std::string name = scene_name("train", i);
        Scene s = generate_scene(cfg.scene, mix_seed(cfg.seed, kTrainSceneSalt, static_cast<uint64_t>(i)));
        save_scene(s, (dir / name).string());
        m.entries.push_back({name, "train"});
    }
    for (int i = 0; i < cfg.n_val; ++i) {
        std::string name = scene_name("val", i);
        Scene s = generate_scene(cfg.scene, mix_seed(cfg.seed, kValSceneSalt, static_cast<uint64_t>(i)));
        save_scene(s, (dir / name).string());
        m.entries.push_back({name, "val"});
    }
    fs::path manifest_path = dir / "manifest.json";
    save_manifest(m, manifest_path.string());
    write_config_copy(cfg, dir);
    return {manifest_path.string(), cfg.n_train, cfg.n_val};
}

SftResult cmd_sft(const ExperimentConfig& cfg, const std::string& dataset_dir,
                  const std::string& out_dir, bool resume) {
    cfg.validate();
    set_default_threads(static_cast<size_t>(cfg.threads));
    std::vector<Scene> train = load_split_scenes(dataset_dir, "train");
    std::vector<Scene> val = load_split_scenes(dataset_dir, "val");
    fs::path dir(out_dir);
    ensure_dir(dir);

    // The frozen mask decoder is a run artifact: pretrained on first use,
    // loaded thereafter so resumes see the identical weights.
    fs::path dec_path = dir / "decoder.bin";
    FrozenMaskDecoder dec;
    if (fs::exists(dec_path)) {
        dec = load_decoder(dec_path.string());
        if (!(dec.cfg == cfg.decoder()))
            throw ConfigError("sft: existing decoder artifact disagrees with the configuration");
    } else {
        PretrainResult pr = pretrain_mask_decoder(cfg.scene, cfg.decoder(), cfg.pretrain,
                                                  mix_seed(cfg.seed, kDecoderSalt));
        dec = std::move(pr.decoder);
        save_decoder(dec_path.string(), dec);
    }

    const ModelConfig mc = cfg.model();
    const Vocabulary vocab = mc.vocab();
    PolicyParams params;
    AdamState opt;
    int start_step = 0;
    fs::path ckpt_path = dir / "policy.ckpt";
    if (resume) {
        if (!fs::exists(ckpt_path))
            throw IoError("sft: nothing to resume, no checkpoint at " + ckpt_path.string());
        LoadedCheckpoint lc = load_checkpoint(ckpt_path.string());
        if (lc.vocab_hash != vocab.layout_hash())
            throw ConfigError("sft: checkpoint vocabulary hash does not match the configuration");
        if (!(lc.params.cfg == mc))
            throw ConfigError("sft: checkpoint model shape does not match the configuration");
        if (lc.decoder_checksum != dec.checksum())
            throw ConfigError("sft: checkpoint was trained against a different frozen decoder");
        if (lc.step > cfg.sft.steps)
            throw ConfigError("sft: checkpoint is already past the configured step count");
        params = std::move(lc.params);
        opt = std::move(lc.opt);
        start_step = static_cast<int>(lc.step);
    } else {
        params = init_params(mc, mix_seed(cfg.seed, kPolicyInitSalt));
    }

    std::vector<TokenSequence> targets(train.size());
    std::vector<Mask> fg(train.size());
    parallel_for(train.size(), [&](size_t i) {
        std::vector<Point> pts;
        for (const Instance& inst : train[i].instances) pts.push_back(inst.centroid);
        targets[i] = encode_points(pts, train[i].w, train[i].h, mc.k);
        fg[i] = foreground_mask(train[i]);
    });

    fs::path log_path = dir / "sft_log.jsonl";
    std::ofstream log(log_path, std::ios::binary | (resume ? std::ios::app : std::ios::trunc));
    if (!log) throw IoError("cannot open for writing: " + log_path.string());

    SftResult res;
    const size_t batch = static_cast<size_t>(cfg.sft.batch);
    for (int t = start_step + 1; t <= cfg.sft.steps; ++t) {
        Rng pick(mix_seed(cfg.seed, kSftBatchSalt, static_cast<uint64_t>(t)));
        std::vector<size_t> idx(batch);
        for (size_t& v : idx) v = pick.uniform_int(train.size());

        std::vector<PolicyParams> slots(batch);
        std::vector<double> loss_all(batch), ntp_all(batch), covt_all(batch);
        parallel_for(batch, [&](size_t b) {
            slots[b] = zeros_like(params);
            const Scene& s = train[idx[b]];
            const TokenSequence& target = targets[idx[b]];
            TfResult tf = forward_teacher_forced(params, s, target);
            std::vector<int> content(target.ids.begin() + 1, target.ids.end());
            NtpResult ntp = soft_ntp_loss(tf.logits, content, vocab, cfg.sft.sigma);
            Mat dlat;
            double covt = 0.0;
            if (cfg.sft.alpha != 0.0) {
                Vec mask_logits = decode_mask(dec, tf.latents, s);
                CovtResult cv = covt_loss(mask_logits, fg[idx[b]]);
                covt = cv.loss;
                Vec dpix = cv.dlogits * cfg.sft.alpha; // pullback is linear
                dlat = decode_mask_backward(dec, tf.latents, s, dpix);
            }
            ntp_all[b] = ntp.loss;
            covt_all[b] = covt;
            loss_all[b] = ntp.loss + cfg.sft.alpha * covt;
            backward(params, tf.tape, ntp.dlogits, dlat, slots[b]);
        });

        PolicyParams grads = zeros_like(params);
        reduce_slots(slots, grads);
        scale_params(grads, 1.0 / static_cast<double>(batch));
        double loss = 0.0, ntp_mean = 0.0, covt_mean = 0.0;
        for (size_t b = 0; b < batch; ++b) {
            loss += loss_all[b];
            ntp_mean += ntp_all[b];
            covt_mean += covt_all[b];
        }
        loss /= static_cast<double>(batch);
        ntp_mean /= static_cast<double>(batch);
        covt_mean /= static_cast<double>(batch);
        if (!std::isfinite(loss))
            throw NumericError("sft: non-finite loss at step " + std::to_string(t));
        update(params, grads, opt, cfg.sft.lr, cfg.sft.weight_decay);
        res.final_loss = loss;

        if (t % cfg.sft.log_every == 0) {
            json rec = {{"kind", "train"}, {"step", t},        {"loss", loss},
                        {"ntp", ntp_mean}, {"covt", covt_mean}};
            log << rec.dump() << "\n";
        }
        if (cfg.sft.val_every > 0 && t % cfg.sft.val_every == 0) {
            EvalReport er = evaluate_split(val, policy_provider(params, cfg.seg), cfg.eval());
            res.final_val_f1 = er.f1;
            json rec = {{"kind", "val"},
                        {"step", t},
                        {"f1", er.f1},
                        {"pq", er.pq},
                        {"format_failures", er.format_failures}};
            log << rec.dump() << "\n";
        }
    }
    log.flush();
    if (!log) throw IoError("write failed: " + log_path.string());

    save_checkpoint(ckpt_path.string(), params, opt, cfg.sft.steps, dec.checksum());
    write_config_copy(cfg, dir);
    res.checkpoint_path = ckpt_path.string();
    res.decoder_path = dec_path.string();
    res.steps_run = cfg.sft.steps - start_step;
    return res;
}

RftResult cmd_rft(const ExperimentConfig& cfg, const std::string& dataset_dir,
                  const std::string& ckpt_path, const std::string& out_dir) {
    cfg.validate();
    set_default_threads(static_cast<size_t>(cfg.threads));
    std::vector<Scene> train = load_split_scenes(dataset_dir, "train");

    const ModelConfig mc = cfg.model();
    LoadedCheckpoint lc = load_checkpoint(ckpt_path);
    if (lc.vocab_hash != mc.vocab().layout_hash())
        throw ConfigError("rft: checkpoint vocabulary hash does not match the configuration");
    if (!(lc.params.cfg == mc))
        throw ConfigError("rft: checkpoint model shape does not match the configuration");
    PolicyParams params = std::move(lc.params);
    AdamState opt; // reinforcement starts with fresh optimizer moments

    fs::path dir(out_dir);
    ensure_dir(dir);
    fs::path log_path = dir / "rft_log.jsonl";
    std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw IoError("cannot open for writing: " + log_path.string());

    RftResult res;
    const int window = std::max(1, cfg.rft.steps / 10);
    for (int t = 1; t <= cfg.rft.steps; ++t) {
        Rng pick(mix_seed(cfg.seed, kRftBatchSalt, static_cast<uint64_t>(t)));
        std::vector<Scene> batch;
        batch.reserve(static_cast<size_t>(cfg.rft_batch_scenes));
        for (int b = 0; b < cfg.rft_batch_scenes; ++b)
            batch.push_back(train[pick.uniform_int(train.size())]);

        GrpoReport rep =
            grpo_step(params, opt, batch, cfg.rft, mix_seed(cfg.seed, kRftStepSalt, static_cast<uint64_t>(t)));
        json rec = {{"step", t},
                    {"objective", rep.objective},
                    {"reward", rep.mean_reward},
                    {"filtered_fraction", rep.filtered_fraction},
                    {"format_failure_rate", rep.format_failure_rate},
                    {"mean_abs_advantage", rep.mean_abs_advantage},
                    {"seg_calls", rep.seg_calls},
                    {"groups", rep.groups},
                    {"retained", rep.retained_rollouts}};
        log << rec.dump() << "\n";
        if (t <= window) res.first_window_reward += rep.mean_reward / window;
        if (t > cfg.rft.steps - window) res.last_window_reward += rep.mean_reward / window;
    }
    log.flush();
    if (!log) throw IoError("write failed: " + log_path.string());

    fs::path out_ckpt = dir / "policy.ckpt";
    save_checkpoint(out_ckpt.string(), params, opt, cfg.rft.steps, lc.decoder_checksum);
    write_config_copy(cfg, dir);
    res.checkpoint_path = out_ckpt.string();
    res.steps_run = cfg.rft.steps;
    return res;
}

EvalResult cmd_eval(const ExperimentConfig& cfg, const std::string& dataset_dir,
                    const std::string& ckpt_path, const std::string& out_dir,
                    const std::string& split) {
    cfg.validate();
    set_default_threads(static_cast<size_t>(cfg.threads));
    std::vector<Scene> scenes = load_split_scenes(dataset_dir, split);

    const ModelConfig mc = cfg.model();
    LoadedCheckpoint lc = load_checkpoint(ckpt_path);
    if (lc.vocab_hash != mc.vocab().layout_hash())
        throw ConfigError("eval: checkpoint vocabulary hash does not match the configuration");
    if (!(lc.params.cfg == mc))
        throw ConfigError("eval: checkpoint model shape does not match the configuration");

    EvalResult res;
    res.report = evaluate_split(scenes, policy_provider(lc.params, cfg.seg), cfg.eval());

    fs::path dir(out_dir);
    ensure_dir(dir);
    fs::path jp = dir / "eval.json";
    fs::path tp = dir / "eval.tsv";
    write_text(jp, res.report.to_json());
    write_text(tp, res.report.to_tsv());
    write_config_copy(cfg, dir);
    res.json_path = jp.string();
    res.tsv_path = tp.string();
    return res;
}

// ------------------------------------------------------------------ report

namespace {

struct Series {
    std::string name;
    std::vector<double> xs, ys;
};

// Minimal standalone SVG line chart. Coordinates go through format_double
// so the file is reproducible byte for byte.
std::string line_plot_svg(const std::string& title, const std::string& y_label,
                          const std::vector<Series>& series) {
    const double W = 640, H = 400;
    const double x0 = 60, x1 = 620, y0 = 360, y1 = 40; // plot box, y grows up
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const Series& s : series)
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (!any) {
                xmin = xmax = s.xs[i];
                ymin = ymax = s.ys[i];
                any = true;
            } else {
                xmin = std::min(xmin, s.xs[i]);
                xmax = std::max(xmax, s.xs[i]);
                ymin = std::min(ymin, s.ys[i]);
                ymax = std::max(ymax, s.ys[i]);
            }
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double x) { return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0); };
    auto py = [&](double y) { return y0 + (y - ymin) / (ymax - ymin) * (y1 - y0); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_double(W) +
           "\" height=\"" + format_double(H) + "\" viewBox=\"0 0 " + format_double(W) + " " +
           format_double(H) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"16\">" +
           title + "</text>\n";
    svg += "<line x1=\"60\" y1=\"360\" x2=\"620\" y2=\"360\" stroke=\"black\"/>\n";
    svg += "<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"360\" stroke=\"black\"/>\n";
    svg += "<text x=\"60\" y=\"378\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"12\">" +
           format_double(xmin) + "</text>\n";
    svg += "<text x=\"620\" y=\"378\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"12\">" +
           format_double(xmax) + "</text>\n";
    svg += "<text x=\"320\" y=\"394\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"12\">step</text>\n";
    svg += "<text x=\"54\" y=\"364\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"12\">" +
           format_double(ymin) + "</text>\n";
    svg += "<text x=\"54\" y=\"44\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"12\">" +
           format_double(ymax) + "</text>\n";
    svg += "<text x=\"16\" y=\"200\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"12\" transform=\"rotate(-90 16 200)\">" +
           y_label + "</text>\n";
    for (size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* color = palette[si % 4];
        svg += "<text x=\"" + format_double(500) + "\" y=\"" + format_double(56.0 + 16.0 * si) +
               "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" + color + "\">" + s.name +
               "</text>\n";
        if (s.xs.empty()) continue;
        svg += "<polyline fill=\"none\" stroke=\"";
        svg += color;
        svg += "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (i) svg += ' ';
            svg += format_double(px(s.xs[i])) + "," + format_double(py(s.ys[i]));
        }
        svg += "\"/>\n";
    }
    svg += "</svg>\n";
    return svg;
}

// One log line -> json record, or nullopt counted as a warning.
bool parse_record(const std::string& line, json& out) {
    try {
        out = json::parse(line);
    } catch (const json::exception&) {
        return false;
    }
    return out.is_object();
}

} // namespace

ReportResult cmd_report(const std::vector<std::string>& sft_logs,
                        const std::vector<std::string>& rft_logs,
                        const std::vector<std::string>& eval_reports,
                        const std::string& out_dir) {
    ReportResult res;

    Series val_f1{"val f1", {}, {}};
    for (const std::string& path : sft_logs) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open log: " + path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j;
            if (!parse_record(line, j)) {
                ++res.warnings;
                continue;
            }
            try {
                if (j.value("kind", "") != "val") continue;
                double step = j.at("step").get<double>();
                double f1 = j.at("f1").get<double>();
                val_f1.xs.push_back(step);
                val_f1.ys.push_back(f1);
            } catch (const json::exception&) {
                ++res.warnings;
            }
        }
    }

    Series reward{"mean reward", {}, {}};
    Series filtered{"filtered fraction", {}, {}};
    Series format_fail{"format failure rate", {}, {}};
    for (const std::string& path : rft_logs) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open log: " + path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j;
            if (!parse_record(line, j)) {
                ++res.warnings;
                continue;
            }
            try {
                double step = j.at("step").get<double>();
                double r = j.at("reward").get<double>();
                double ff = j.at("filtered_fraction").get<double>();
                double fr = j.at("format_failure_rate").get<double>();
                reward.xs.push_back(step);
                reward.ys.push_back(r);
                filtered.xs.push_back(step);
                filtered.ys.push_back(ff);
                format_fail.xs.push_back(step);
                format_fail.ys.push_back(fr);
            } catch (const json::exception&) {
                ++res.warnings;
            }
        }
    }

    json eval_summary = {{"f1", 0.0}, {"precision", 0.0}, {"recall", 0.0}, {"pq", 0.0},
                         {"dq", 0.0}, {"sq", 0.0},        {"aji", 0.0},    {"format_failures", 0},
                         {"n_scenes", 0}};
    for (const std::string& path : eval_reports) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open eval report: " + path);
        json j;
        try {
            in >> j;
            const json& agg = j.at("aggregates");
            for (const char* k : {"f1", "precision", "recall", "pq", "dq", "sq", "aji"})
                eval_summary[k] = agg.at(k).get<double>();
            eval_summary["format_failures"] = j.at("format_failures").get<int>();
            eval_summary["n_scenes"] = j.at("n_scenes").get<int>();
        } catch (const json::exception&) {
            ++res.warnings;
        }
    }

    fs::path dir(out_dir);
    ensure_dir(dir);
    struct PlotSpec {
        const char* file;
        const char* title;
        const char* y_label;
        std::vector<Series> series;
    };
    std::vector<PlotSpec> plots;
    plots.push_back({"f1_vs_step.svg", "Validation F1", "f1", {val_f1}});
    plots.push_back({"reward_vs_step.svg", "Mean group reward", "reward", {reward}});
    plots.push_back({"rates_vs_step.svg", "Filter and format rates", "rate", {filtered, format_fail}});
    for (const PlotSpec& p : plots) {
        fs::path path = dir / p.file;
        write_text(path, line_plot_svg(p.title, p.y_label, p.series));
        res.plot_paths.push_back(path.string());
    }

    json summary;
    summary["eval"] = eval_summary;
    summary["sft"] = {{"val_points", val_f1.xs.size()},
                      {"final_val_f1", val_f1.ys.empty() ? 0.0 : val_f1.ys.back()},
                      {"last_step", val_f1.xs.empty() ? 0.0 : val_f1.xs.back()}};
    summary["rft"] = {{"steps", reward.xs.size()},
                      {"final_reward", reward.ys.empty() ? 0.0 : reward.ys.back()},
                      {"final_filtered_fraction", filtered.ys.empty() ? 0.0 : filtered.ys.back()},
                      {"final_format_failure_rate",
                       format_fail.ys.empty() ? 0.0 : format_fail.ys.back()}};
    summary["warnings"] = res.warnings;
    fs::path sp = dir / "summary.json";
    write_text(sp, summary.dump(2) + "\n");
    res.summary_path = sp.string();
    return res;
}

} // namespace pointseq
