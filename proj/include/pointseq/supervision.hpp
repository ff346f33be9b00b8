#pragma once

#include <Eigen/Core>
#include <vector>

#include "pointseq/geometry.hpp"
#include "pointseq/vocab.hpp"

namespace pointseq {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Normalized distribution over the k coordinate bins.
struct SoftLabel {
    Vec probs;
    int target = 0;
};

// probs[j] proportional to exp(-(j - t_n)^2 / (2 sigma^2)); sigma = 0 is the
// exact one-hot limit.
SoftLabel soft_label(int t_n, int k, double sigma);

// Cross-entropy of softmax(logits) against a target distribution; grad is
// softmax(logits) - target.
struct CeResult {
    double loss = 0.0;
    Vec grad;
};
CeResult softmax_ce(const Vec& logits, const Vec& target);

// Mean cross-entropy over supervised positions. logits holds one column per
// position; targets[i] is the token id predicted at that position. Coordinate
// targets get Gaussian-smoothed soft mass over the k bins (zero elsewhere);
// structural targets stay one-hot. Latent ids are not legal targets.
struct NtpResult {
    double loss = 0.0;
    Mat dlogits; // same shape as logits
};
NtpResult soft_ntp_loss(const Mat& logits, const std::vector<int>& targets, const Vocabulary& vocab,
                        double sigma);

// BCE(sigmoid(z), m) + Dice loss on p = sigmoid(z) with smoothing constant 1;
// BCE is averaged over pixels.
struct CovtResult {
    double loss = 0.0;
    double bce = 0.0;
    double dice = 0.0;
    Vec dlogits;
};
CovtResult covt_loss(const Vec& pred_mask_logits, const Mask& gt_mask);

struct LossReport {
    double ntp = 0.0;
    double covt = 0.0;
    double alpha = 0.0;
    double total = 0.0;
};
LossReport sft_loss(double ntp, double covt, double alpha);

} // namespace pointseq
