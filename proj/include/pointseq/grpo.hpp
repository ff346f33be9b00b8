#pragma once

#include <cstdint>
#include <vector>

#include "pointseq/model.hpp"
#include "pointseq/reward.hpp"
#include "pointseq/scene.hpp"

namespace pointseq {

// Which tokens of a predicted point the advantage decay touches. The inner
// separator and all structural/latent tokens always keep the group value.
enum class FgasSpan { coords, coords_brackets };

struct RftConfig {
    int group_size = 8;
    double epsilon = 0.2;     // surrogate clip half-width
    double delta = 0.01;      // minimum reward spread a group must show
    bool use_fgas = true;     // off = plain group-advantage training
    double beta = 0.5;        // advantage decay on mismatched point tokens
    FgasSpan fgas_span = FgasSpan::coords;
    double gamma = 0.0;       // weight of the segmentation reward term
    double temperature = 1.2;
    double lr = 1e-4;
    double weight_decay = 0.0;
    int steps = 200;
    double kl_coeff = 0.0;    // penalty toward the sampling-time policy
    double r_thresh = 6.0;
    SegmenterConfig seg;
    void validate() const; // group_size >= 2, epsilon > 0, 0 < beta < 1, delta >= 0
};

double population_std(const Vec& values);

// (r - mean) / population std. Errors on zero spread; callers filter such
// groups first.
Vec compute_advantages(const Vec& rewards);

// A group enters the update iff its reward spread reaches delta. Zero
// spread is always skipped: constant rewards carry no training signal and
// standardization is undefined there.
bool lvgf_retains(const Vec& rewards, double delta);

// Per-token advantages, one vector per rollout, aligned with tokens.ids.
// Coordinate tokens (and brackets, for the wider span) of a predicted point
// flip to beta * A when a positive advantage covers a false positive or a
// negative advantage covers a true positive; everything else keeps A.
// Format-failed rollouts are unshaped. Advantage exactly zero is left
// alone. Requires one MatchResult per rollout covering every parsed point.
std::vector<std::vector<double>> fgas_shape(const std::vector<Rollout>& rollouts,
                                            const std::vector<MatchResult>& matches,
                                            const Vec& advantages, double beta,
                                            FgasSpan span);

// Seed of scene s's rollout group within one step; exposed so tests and
// diagnostics can re-derive exactly the groups a step sampled.
uint64_t group_seed(uint64_t step_seed, int scene_index);

struct SurrogateTerm {
    double value = 0.0;
    double dvalue_dlogprob = 0.0; // derivative in the new logprob
};

// min(r * a, clamp(r, 1 - eps, 1 + eps) * a) with r = exp(lp_new - lp_old).
SurrogateTerm clipped_surrogate(double lp_new, double lp_old, double advantage,
                                double epsilon);

struct GrpoReport {
    double objective = 0.0;          // mean clipped surrogate over retained rollouts
    double mean_reward = 0.0;        // over every sampled rollout
    double filtered_fraction = 0.0;  // groups dropped / groups sampled
    double format_failure_rate = 0.0;
    double mean_abs_advantage = 0.0; // over retained rollouts, pre-shaping
    uint64_t seg_calls = 0;          // segmenter invocations during scoring
    int groups = 0;
    int retained_rollouts = 0;
};

// One on-policy update: per scene, sample a group from the current params
// (the pre-step snapshot), score, filter, standardize, shape, then take one
// ascent step on the clipped surrogate with per-token advantages and
// 1/length normalization. Fresh-policy ratios are exactly 1 because scoring
// recomputes the sampled logprobs bitwise. When every group is filtered
// only the version counter moves. A non-finite objective aborts with params
// untouched. grad_out, when given, receives the descent gradient handed to
// the optimizer.
GrpoReport grpo_step(PolicyParams& params, AdamState& opt,
                     const std::vector<Scene>& scenes, const RftConfig& cfg,
                     uint64_t seed, PolicyParams* grad_out = nullptr);

} // namespace pointseq
