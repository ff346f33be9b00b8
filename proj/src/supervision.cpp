#include "pointseq/supervision.hpp"

#include <cmath>

#include "pointseq/errors.hpp"

namespace pointseq {

SoftLabel soft_label(int t_n, int k, double sigma) {
    if (t_n < 0 || t_n >= k) throw ConfigError("soft_label target bin out of range");
    if (sigma < 0.0) throw ConfigError("soft_label sigma must be non-negative");
    SoftLabel out;
    out.target = t_n;
    out.probs = Vec::Zero(k);
    if (sigma == 0.0) {
        out.probs[t_n] = 1.0;
        return out;
    }
    double denom = 2.0 * sigma * sigma;
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
        double d = j - t_n;
        out.probs[j] = std::exp(-d * d / denom);
        sum += out.probs[j];
    }
    out.probs /= sum;
    return out;
}

CeResult softmax_ce(const Vec& logits, const Vec& target) {
    if (logits.size() != target.size()) throw ConfigError("softmax_ce size mismatch");
    double mx = logits.maxCoeff();
    Vec p = (logits.array() - mx).exp();
    double z = p.sum();
    p /= z;
    // loss = -sum target_i * log p_i, written against log-softmax for stability
    double logz = std::log(z) + mx;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i)
        if (target[i] != 0.0) loss += target[i] * (logz - logits[i]);
    return {loss, p - target};
}

NtpResult soft_ntp_loss(const Mat& logits, const std::vector<int>& targets, const Vocabulary& vocab,
                        double sigma) {
    if (static_cast<size_t>(logits.cols()) != targets.size())
        throw ConfigError("soft_ntp_loss: one logit column required per target");
    if (logits.rows() != vocab.size()) throw ConfigError("soft_ntp_loss: logit rows != vocabulary size");
    NtpResult out;
    out.dlogits = Mat::Zero(logits.rows(), logits.cols());
    size_t n = targets.size();
    if (n == 0) return out;
    for (size_t i = 0; i < n; ++i) {
        int t = targets[i];
        Vec target = Vec::Zero(vocab.size());
        if (vocab.is_coord(t)) {
            target.head(vocab.k) = soft_label(t, vocab.k, sigma).probs;
        } else if (vocab.is_structural(t)) {
            target[t] = 1.0;
        } else {
            throw ConfigError("soft_ntp_loss: target id " + std::to_string(t) +
                              " is neither coordinate nor structural");
        }
        CeResult ce = softmax_ce(logits.col(i), target);
        out.loss += ce.loss;
        out.dlogits.col(i) = ce.grad;
    }
    out.loss /= static_cast<double>(n);
    out.dlogits /= static_cast<double>(n);
    return out;
}

CovtResult covt_loss(const Vec& pred_mask_logits, const Mask& gt_mask) {
    if (static_cast<size_t>(pred_mask_logits.size()) != gt_mask.bits.size())
        throw ConfigError("covt_loss raster shape mismatch");
    auto n = pred_mask_logits.size();
    if (n == 0) throw ConfigError("covt_loss on empty raster");

    CovtResult out;
    Vec p(n);
    double sum_p = 0.0, sum_m = 0.0, sum_pm = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double z = pred_mask_logits[i];
        double m = gt_mask.bits[static_cast<size_t>(i)] ? 1.0 : 0.0;
        p[i] = 1.0 / (1.0 + std::exp(-z));
        // stable BCE with logits: max(z,0) - z*m + log(1 + exp(-|z|))
        out.bce += std::max(z, 0.0) - z * m + std::log1p(std::exp(-std::abs(z)));
        sum_p += p[i];
        sum_m += m;
        sum_pm += p[i] * m;
    }
    out.bce /= static_cast<double>(n);

    const double eps = 1.0;
    double num = 2.0 * sum_pm + eps;
    double den = sum_p + sum_m + eps;
    out.dice = 1.0 - num / den;
    out.loss = out.bce + out.dice;

    out.dlogits = Vec(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double m = gt_mask.bits[static_cast<size_t>(i)] ? 1.0 : 0.0;
        double dbce = (p[i] - m) / static_cast<double>(n);
        double ddice_dp = -(2.0 * m * den - num) / (den * den);
        out.dlogits[i] = dbce + ddice_dp * p[i] * (1.0 - p[i]);
    }
    return out;
}

LossReport sft_loss(double ntp, double covt, double alpha) {
    if (alpha < 0.0) throw ConfigError("sft_loss alpha must be non-negative");
    LossReport r;
    r.ntp = ntp;
    r.covt = covt;
    r.alpha = alpha;
    r.total = alpha == 0.0 ? ntp : ntp + alpha * covt;
    return r;
}

} // namespace pointseq
