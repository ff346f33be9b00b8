#include "pointseq/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "pointseq/errors.hpp"
#include "pointseq/parallel.hpp"
#include "pointseq/rng.hpp"
#include "pointseq/tokenizer.hpp"
#include "pointseq/util.hpp"

namespace pointseq {

void RftConfig::validate() const {
    if (group_size < 2) throw ConfigError("rft: group_size must be at least 2");
    if (!(epsilon > 0.0)) throw ConfigError("rft: epsilon must be positive");
    if (!(delta >= 0.0)) throw ConfigError("rft: delta must be non-negative");
    if (!(beta > 0.0 && beta < 1.0))
        throw ConfigError("rft: beta must lie strictly between 0 and 1");
    if (!(gamma >= 0.0)) throw ConfigError("rft: gamma must be non-negative");
    if (!(temperature > 0.0)) throw ConfigError("rft: temperature must be positive");
    if (!(lr > 0.0)) throw ConfigError("rft: lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("rft: weight_decay must be non-negative");
    if (steps < 0) throw ConfigError("rft: steps must be non-negative");
    if (!(kl_coeff >= 0.0)) throw ConfigError("rft: kl_coeff must be non-negative");
    if (!(r_thresh > 0.0)) throw ConfigError("rft: r_thresh must be positive");
}

uint64_t group_seed(uint64_t step_seed, int scene_index) {
    return mix_seed(step_seed, 0x5ce7e5, static_cast<uint64_t>(scene_index));
}

double population_std(const Vec& values) {
    if (values.size() == 0) throw ConfigError("population_std: empty vector");
    const double mean = values.mean();
    return std::sqrt((values.array() - mean).square().mean());
}

Vec compute_advantages(const Vec& rewards) {
    if (rewards.size() < 2)
        throw ConfigError("compute_advantages: need at least two rewards");
    const double mean = rewards.mean();
    const double stddev = population_std(rewards);
    // max == min detects constant groups exactly; rounding in the mean can
    // leave the computed spread a few ulps above zero for them.
    if (rewards.maxCoeff() == rewards.minCoeff() || !(stddev > 0.0))
        throw NumericError("compute_advantages: zero reward spread");
    return ((rewards.array() - mean) / stddev).matrix();
}

bool lvgf_retains(const Vec& rewards, double delta) {
    if (!(delta >= 0.0)) throw ConfigError("lvgf: delta must be non-negative");
    if (rewards.maxCoeff() == rewards.minCoeff()) return false;
    const double stddev = population_std(rewards);
    return stddev > 0.0 && stddev >= delta;
}

std::vector<std::vector<double>> fgas_shape(const std::vector<Rollout>& rollouts,
                                            const std::vector<MatchResult>& matches,
                                            const Vec& advantages, double beta,
                                            FgasSpan span) {
    if (matches.size() != rollouts.size() ||
        static_cast<size_t>(advantages.size()) != rollouts.size())
        throw ConfigError("fgas_shape: one match result and advantage per rollout");

    std::vector<std::vector<double>> shaped(rollouts.size());
    for (size_t i = 0; i < rollouts.size(); ++i) {
        const Rollout& ro = rollouts[i];
        const double a = advantages(static_cast<Eigen::Index>(i));
        shaped[i].assign(ro.tokens.ids.size(), a);
        if (!ro.format_ok() || a == 0.0) continue;

        const auto& parsed = std::get<ParsedDetections>(ro.parsed);
        const MatchResult& m = matches[i];
        if (m.tp_pred.size() + m.fp_pred.size() != parsed.points.size())
            throw ConfigError("fgas_shape: match does not classify every point");
        std::vector<char> is_tp(parsed.points.size(), 0);
        for (int idx : m.tp_pred) {
            if (idx < 0 || static_cast<size_t>(idx) >= parsed.points.size())
                throw ConfigError("fgas_shape: match index out of range");
            is_tp[idx] = 1;
        }

        for (size_t k = 0; k < parsed.points.size(); ++k) {
            const bool decay = (a > 0.0 && !is_tp[k]) || (a < 0.0 && is_tp[k]);
            if (!decay) continue;
            const TokenSpan& sp = parsed.token_spans[k];
            // span layout: LBRACK x SEP y RBRACK
            shaped[i][sp.begin + 1] = beta * a;
            shaped[i][sp.begin + 3] = beta * a;
            if (span == FgasSpan::coords_brackets) {
                shaped[i][sp.begin] = beta * a;
                shaped[i][sp.end - 1] = beta * a;
            }
        }
    }
    return shaped;
}

SurrogateTerm clipped_surrogate(double lp_new, double lp_old, double advantage,
                                double epsilon) {
    const double ratio = std::exp(lp_new - lp_old);
    const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
    const double s1 = ratio * advantage;
    const double s2 = clipped * advantage;
    SurrogateTerm t;
    if (s1 <= s2) {
        t.value = s1;
        t.dvalue_dlogprob = s1; // d(ratio * a)/dlp = ratio * a
    } else {
        // The clamp is necessarily active here, so the derivative dies.
        t.value = s2;
        t.dvalue_dlogprob = 0.0;
    }
    return t;
}

GrpoReport grpo_step(PolicyParams& params, AdamState& opt,
                     const std::vector<Scene>& scenes, const RftConfig& cfg,
                     uint64_t seed, PolicyParams* grad_out) {
    cfg.validate();
    if (scenes.empty()) throw ConfigError("grpo_step: empty scene batch");

    const int g = cfg.group_size;
    const int n_groups = static_cast<int>(scenes.size());
    const uint64_t seg_before = toy_segment_call_count();

    // Rollouts come from the pre-step snapshot: params is not touched until
    // the final update, so scoring below recomputes these exact logprobs.
    std::vector<std::vector<Rollout>> rollouts(n_groups);
    for (int s = 0; s < n_groups; ++s)
        rollouts[s] = sample_group(params, scenes[s], g, cfg.temperature,
                                   group_seed(seed, s));

    RewardConfig rc;
    rc.r_thresh = cfg.r_thresh;
    rc.gamma = cfg.gamma;
    rc.use_pq = cfg.gamma != 0.0;
    rc.seg = cfg.seg;
    std::vector<std::vector<RewardBreakdown>> rewards(n_groups);
    std::vector<std::vector<MatchResult>> matches(n_groups);
    for (int s = 0; s < n_groups; ++s) {
        rewards[s].resize(g);
        matches[s].resize(g);
    }
    parallel_for(static_cast<size_t>(n_groups) * g, [&](size_t idx) {
        const int s = static_cast<int>(idx / g);
        const int i = static_cast<int>(idx % g);
        rewards[s][i] =
            rollout_reward(rollouts[s][i], scenes[s], rc, &matches[s][i]);
    });

    GrpoReport rep;
    rep.groups = n_groups;
    double reward_sum = 0.0;
    int format_failures = 0;
    int filtered = 0;
    std::vector<Vec> advantages(n_groups);
    std::vector<char> retained(n_groups, 0);
    for (int s = 0; s < n_groups; ++s) {
        Vec totals(g);
        for (int i = 0; i < g; ++i) {
            totals(i) = rewards[s][i].r_total;
            reward_sum += rewards[s][i].r_total;
            if (!rewards[s][i].format_ok) ++format_failures;
        }
        if (lvgf_retains(totals, cfg.delta)) {
            retained[s] = 1;
            advantages[s] = compute_advantages(totals);
        } else {
            ++filtered;
        }
    }
    rep.mean_reward = reward_sum / (static_cast<double>(n_groups) * g);
    rep.filtered_fraction = static_cast<double>(filtered) / n_groups;
    rep.format_failure_rate =
        static_cast<double>(format_failures) / (static_cast<double>(n_groups) * g);
    rep.seg_calls = toy_segment_call_count() - seg_before;

    std::vector<std::vector<std::vector<double>>> shaped(n_groups);
    for (int s = 0; s < n_groups; ++s) {
        if (!retained[s]) continue;
        if (cfg.use_fgas) {
            shaped[s] = fgas_shape(rollouts[s], matches[s], advantages[s], cfg.beta,
                                   cfg.fgas_span);
        } else {
            shaped[s].resize(g);
            for (int i = 0; i < g; ++i)
                shaped[s][i].assign(rollouts[s][i].tokens.ids.size(), advantages[s](i));
        }
    }

    struct Item {
        int s, i;
    };
    std::vector<Item> items;
    for (int s = 0; s < n_groups; ++s)
        if (retained[s])
            for (int i = 0; i < g; ++i) items.push_back({s, i});
    const int n_ret = static_cast<int>(items.size());
    rep.retained_rollouts = n_ret;

    PolicyParams grads = zeros_like(params);
    if (n_ret == 0) {
        // Nothing to learn from; the version still moves so logs show the
        // step happened.
        params.version += 1;
        if (grad_out) *grad_out = std::move(grads);
        return rep;
    }

    double abs_adv = 0.0;
    for (const Item& it : items) abs_adv += std::abs(advantages[it.s](it.i));
    rep.mean_abs_advantage = abs_adv / n_ret;

    const int prefix = 1 + params.cfg.l;
    std::vector<PolicyParams> slots(items.size());
    std::vector<double> objectives(items.size(), 0.0);
    parallel_for(items.size(), [&](size_t t) {
        slots[t] = zeros_like(params);
        const Item it = items[t];
        const Rollout& ro = rollouts[it.s][it.i];
        TfResult tf = forward_teacher_forced(params, scenes[it.s], ro.tokens);
        const int cols = static_cast<int>(tf.logits.cols());
        const double denom = static_cast<double>(cols) * static_cast<double>(n_ret);
        Mat dlogits = Mat::Zero(tf.logits.rows(), cols);
        double obj = 0.0;
        for (int j = 0; j < cols; ++j) {
            const int tok = ro.tokens.ids[prefix + j];
            Vec lsm = log_softmax(tf.logits.col(j));
            const double lp_new = lsm(tok);
            const double lp_old = ro.tokens.logprobs[prefix + j];
            const double at = shaped[it.s][it.i][prefix + j];
            SurrogateTerm sur = clipped_surrogate(lp_new, lp_old, at, cfg.epsilon);
            obj += sur.value;
            double scale = sur.dvalue_dlogprob / denom;
            if (cfg.kl_coeff > 0.0) {
                // k3 penalty toward the sampling policy. Both its value and
                // gradient vanish at ratio 1, so in the fresh-policy regime
                // this changes nothing; it matters only if steps ever reuse
                // stale rollouts.
                const double diff = lp_old - lp_new;
                scale -= cfg.kl_coeff * (1.0 - std::exp(diff)) / denom;
            }
            Vec dcol = lsm.array().exp().matrix() * scale;
            dcol(tok) -= scale;
            dlogits.col(j) = dcol;
        }
        objectives[t] = obj / cols;
        backward(params, tf.tape, dlogits, Mat(), slots[t]);
    });

    double objective = 0.0;
    for (double o : objectives) objective += o;
    objective /= n_ret;
    if (!std::isfinite(objective))
        throw NumericError("grpo_step: non-finite objective, step aborted");
    rep.objective = objective;

    auto dst = tensor_refs(grads);
    for (size_t t = 0; t < slots.size(); ++t) {
        auto src = tensor_refs(slots[t]);
        for (size_t k = 0; k < dst.size(); ++k)
            for (size_t e = 0; e < dst[k].size(); ++e) dst[k].data[e] += src[k].data[e];
    }
    if (grad_out) *grad_out = grads;

    update(params, grads, opt, cfg.lr, cfg.weight_decay);
    return rep;
}

} // namespace pointseq
