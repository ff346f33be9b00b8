#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pointseq/commands.hpp"
#include "pointseq/errors.hpp"
#include "pointseq/util.hpp"

namespace fs = std::filesystem;
using namespace pointseq;

namespace {

std::string resolve_under(const std::string& root, const std::string& p) {
    fs::path path(p);
    if (path.is_absolute()) return p;
    return (fs::path(root) / path).string();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Point-sequence detection: dataset, training, and evaluation stages"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_root_flag;
    int threads = -1;
    app.add_option("--config", config_path, "JSON config file; built-in defaults apply when omitted");
    app.add_option("--set", overrides, "Override one leaf setting, e.g. --set rft.steps=50");
    app.add_option("--out-root", out_root_flag, "Root for relative data and output paths");
    app.add_option("--threads", threads, "Worker thread cap, 0 = all cores");

    auto* g = app.add_subcommand("generate", "Write a scene dataset and manifest");
    std::string g_out = "data";
    bool g_force = false;
    g->add_option("--out", g_out, "Dataset directory (relative to the output root)");
    g->add_flag("--force", g_force, "Overwrite a non-empty dataset directory");

    auto* s = app.add_subcommand("sft", "Supervised training from a dataset");
    std::string s_data = "data", s_out = "sft";
    bool s_resume = false;
    s->add_option("--data", s_data, "Dataset directory");
    s->add_option("--out", s_out, "Run directory for checkpoint, decoder, and log");
    s->add_flag("--resume", s_resume, "Continue from the run directory's checkpoint");

    auto* r = app.add_subcommand("rft", "Reinforcement fine-tuning from a checkpoint");
    std::string r_data = "data", r_ckpt = "sft/policy.ckpt", r_out = "rft";
    r->add_option("--data", r_data, "Dataset directory");
    r->add_option("--ckpt", r_ckpt, "Input checkpoint");
    r->add_option("--out", r_out, "Run directory for checkpoint and log");

    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    std::string e_data = "data", e_ckpt = "sft/policy.ckpt", e_out = "eval", e_split = "val";
    e->add_option("--data", e_data, "Dataset directory");
    e->add_option("--ckpt", e_ckpt, "Checkpoint to evaluate");
    e->add_option("--out", e_out, "Report directory");
    e->add_option("--split", e_split, "Manifest split to score");

    auto* p = app.add_subcommand("report", "Render plots and a summary from logs");
    std::vector<std::string> p_sft, p_rft, p_eval;
    std::string p_out = "report";
    p->add_option("--sft-log", p_sft, "SFT training log (repeatable)");
    p->add_option("--rft-log", p_rft, "RFT training log (repeatable)");
    p->add_option("--eval-report", p_eval, "Eval report JSON (repeatable)");
    p->add_option("--out", p_out, "Plot and summary directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg = resolve_config(config_path, overrides);
        if (!out_root_flag.empty())
            cfg.out_root = out_root_flag;
        else if (const char* env = std::getenv("POINTSEQ_OUTPUT_ROOT"); env && *env)
            cfg.out_root = env;
        if (threads >= 0) cfg.threads = threads;

        auto at_root = [&](const std::string& path) { return resolve_under(cfg.out_root, path); };

        if (g->parsed()) {
            GenerateResult gr = cmd_generate(cfg, at_root(g_out), g_force);
            std::cout << "generate: " << gr.n_train << " train + " << gr.n_val
                      << " val scenes, manifest " << gr.manifest_path << "\n";
        } else if (s->parsed()) {
            SftResult sr = cmd_sft(cfg, at_root(s_data), at_root(s_out), s_resume);
            std::cout << "sft: " << sr.steps_run << " steps, final loss "
                      << format_double(sr.final_loss);
            if (sr.final_val_f1 >= 0.0) std::cout << ", val f1 " << format_double(sr.final_val_f1);
            std::cout << ", checkpoint " << sr.checkpoint_path << "\n";
        } else if (r->parsed()) {
            RftResult rr = cmd_rft(cfg, at_root(r_data), at_root(r_ckpt), at_root(r_out));
            std::cout << "rft: " << rr.steps_run << " steps, reward "
                      << format_double(rr.first_window_reward) << " -> "
                      << format_double(rr.last_window_reward) << ", checkpoint "
                      << rr.checkpoint_path << "\n";
        } else if (e->parsed()) {
            EvalResult er = cmd_eval(cfg, at_root(e_data), at_root(e_ckpt), at_root(e_out), e_split);
            std::cout << "eval: f1 " << format_double(er.report.f1) << ", pq "
                      << format_double(er.report.pq) << ", aji " << format_double(er.report.aji)
                      << " over " << er.report.scenes.size() << " scenes, report " << er.json_path
                      << "\n";
        } else if (p->parsed()) {
            auto fix = [&](std::vector<std::string> v) {
                for (std::string& x : v) x = at_root(x);
                return v;
            };
            ReportResult pr = cmd_report(fix(p_sft), fix(p_rft), fix(p_eval), at_root(p_out));
            std::cout << "report: " << pr.plot_paths.size() << " plots, summary "
                      << pr.summary_path;
            if (pr.warnings) std::cout << " (" << pr.warnings << " malformed records skipped)";
            std::cout << "\n";
        }
        return 0;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const IoError& err) {
        std::cerr << "io error: " << err.what() << "\n";
        return 3;
    } catch (const NumericError& err) {
        std::cerr << "numeric error: " << err.what() << "\n";
        return 4;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
}
