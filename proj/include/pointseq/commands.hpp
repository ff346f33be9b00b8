#pragma once

#include <string>
#include <vector>

#include "pointseq/config.hpp"
#include "pointseq/metrics.hpp"

namespace pointseq {

// Experiment stages behind the CLI subcommands. Every stage validates its
// config before touching the filesystem, writes the resolved config next to
// its outputs, and is deterministic: rerunning with the same config, seed,
// and inputs reproduces each artifact byte for byte.

struct GenerateResult {
    std::string manifest_path;
    int n_train = 0;
    int n_val = 0;
};

// Writes n_train + n_val scene files and a manifest into out_dir. Refuses a
// non-empty out_dir unless force is set.
GenerateResult cmd_generate(const ExperimentConfig& cfg, const std::string& out_dir,
                            bool force = false);

struct SftResult {
    std::string checkpoint_path;
    std::string decoder_path;
    int steps_run = 0;
    double final_loss = 0.0;
    double final_val_f1 = -1.0; // -1 when no validation pass ran
};

// Teacher-forced training: token loss plus the mask-reconstruction loss
// through a frozen decoder, which is pretrained into out_dir on first use.
// With resume set, continues from out_dir/policy.ckpt to the configured
// total step count and appends to the existing log.
SftResult cmd_sft(const ExperimentConfig& cfg, const std::string& dataset_dir,
                  const std::string& out_dir, bool resume = false);

struct RftResult {
    std::string checkpoint_path;
    int steps_run = 0;
    double first_window_reward = 0.0;
    double last_window_reward = 0.0;
};

// Group-relative reinforcement from an SFT checkpoint with a fresh
// optimizer. Logs reward, filter rate, and format-failure rate per step.
RftResult cmd_rft(const ExperimentConfig& cfg, const std::string& dataset_dir,
                  const std::string& ckpt_path, const std::string& out_dir);

struct EvalResult {
    std::string json_path;
    std::string tsv_path;
    EvalReport report;
};

// Greedy decoding over one manifest split, full metric suite, JSON + TSV.
EvalResult cmd_eval(const ExperimentConfig& cfg, const std::string& dataset_dir,
                    const std::string& ckpt_path, const std::string& out_dir,
                    const std::string& split = "val");

struct ReportResult {
    std::vector<std::string> plot_paths;
    std::string summary_path;
    int warnings = 0; // malformed records skipped
};

// Renders SVG line plots (validation F1, step reward, filter and format
// rates) and a summary table from training logs and eval reports. Tolerates
// malformed log lines by skipping them.
ReportResult cmd_report(const std::vector<std::string>& sft_logs,
                        const std::vector<std::string>& rft_logs,
                        const std::vector<std::string>& eval_reports,
                        const std::string& out_dir);

} // namespace pointseq
