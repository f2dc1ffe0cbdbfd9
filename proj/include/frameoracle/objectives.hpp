#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "frameoracle/backends.hpp"
#include "frameoracle/core_types.hpp"

namespace frameoracle::objectives {

// Antisymmetric sign matrix over frame pairs; t(i,j) = sign(s_i - s_j) of the
// generating teacher scores, zero on ties and on the diagonal.
struct PairwiseLabels {
    Eigen::MatrixXi t;

    int size() const { return static_cast<int>(t.rows()); }
};

struct KTargetConfig {
    double lambda_k = 0.0105;   // linear frame-cost penalty
    std::vector<int> k_grid;    // candidate k values; empty means {1..k_max} at use site
    double alpha = 0.5;         // mix between expectation and soft-target terms
    double sigma = 1.0;         // soft-target width

    void check(int k_max) const;
};

struct LossValueGrad {
    double value = 0.0;
    Vector grad;
};

PairwiseLabels pairwise_labels(const ScoreVector& teacher_scores);

// Pairwise logistic ranking loss: sum over i<j with t_ij != 0 of
// softplus(-t_ij (y_i - y_j)). Tied pairs contribute neither value nor
// gradient.
double ranknet_loss(const ScoreVector& predicted, const PairwiseLabels& labels);
LossValueGrad ranknet_loss_grad(const ScoreVector& predicted, const PairwiseLabels& labels);

// Leave-one-out importance targets: score_i = L(V \ {f_i}) - L(V). Calls the
// oracle exactly N+1 times; results are reduced in frame order regardless of
// worker count.
ScoreVector loo_targets(const CandidateSet& frames, const backends::TaskRecord& task,
                        backends::TaskLossOracle& oracle, int n_workers = 1);

// Target frame count: arg-min over the grid of zscore(loss(top-k)) +
// lambda_k * k. Ties resolve to the smaller k; a flat loss profile z-scores
// to all-zeros so the penalty alone decides.
int kstar_target(const CandidateSet& frames, const ScoreVector& rank_scores,
                 const backends::TaskRecord& task, backends::TaskLossOracle& oracle,
                 const KTargetConfig& cfg);

// Shared helper: the same objective evaluated on a precomputed loss-per-grid
// vector. kstar_target delegates here after querying the oracle.
int kstar_from_losses(const std::vector<int>& k_grid, const std::vector<double>& losses,
                      double lambda_k);

// Positions of the top-k frames by rank score (ties -> earlier frame),
// returned in ascending temporal order.
std::vector<int> top_k_by_score(const ScoreVector& scores, int k);

// SmoothL1 between the distribution's expectation and k*; quadratic within
// |delta| < 1, linear outside.
double evo_loss(const KDistribution& dist, int k_star);
LossValueGrad evo_loss_grad_probs(const KDistribution& dist, int k_star);

// Truncated, renormalized Gaussian over {1..k_max} centered at k*.
KDistribution class_target(int k_star, int k_max, double sigma);

// (1-alpha) * evo + alpha * KL(class_target || dist). Predicted probabilities
// are clamped at 1e-9 before the log when the target is positive there.
double k_head_loss(const KDistribution& dist, int k_star, const KTargetConfig& cfg);
LossValueGrad k_head_loss_grad_logits(const Vector& k_logits, int k_star, const KTargetConfig& cfg);

// Number of probability clamps applied by k_head_loss since process start.
std::uint64_t k_head_loss_clamp_count();

struct SftConfig {
    KTargetConfig k_target;
    double w_rank = 1.0;
};

struct SftLoss {
    double value = 0.0;
    double rank_term = 0.0;
    double k_term = 0.0;
    Vector d_scores;
    Vector d_k_logits;
};

// Stage-4 loss: RankNet against binary keyframe labels plus the K-head loss
// with k* = num_selected_frames (clamped to the head's support). Requires
// keyframe_indices on the annotation.
SftLoss sft_loss(const ScoreVector& scores, const Vector& k_logits,
                 const AnnotatedExample& annotation, const SftConfig& cfg);

}  // namespace frameoracle::objectives
