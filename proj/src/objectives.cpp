#include "frameoracle/objectives.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace frameoracle::objectives {

namespace {

std::atomic<std::uint64_t> g_clamp_count{0};

// log(1 + exp(x)) without overflow.
double softplus(double x) {
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

void KTargetConfig::check(int k_max) const {
    if (!(sigma > 0.0)) throw ValidationError("k target config: sigma must be > 0");
    if (alpha < 0.0 || alpha > 1.0) throw ValidationError("k target config: alpha must lie in [0,1]");
    if (k_grid.empty()) throw ValidationError("k target config: k_grid must be non-empty");
    int prev = 0;
    for (int k : k_grid) {
        if (k <= prev) throw ValidationError("k target config: k_grid must be strictly increasing");
        if (k < 1 || k > k_max) throw ValidationError("k target config: k_grid value outside [1, k_max]");
        prev = k;
    }
}

PairwiseLabels pairwise_labels(const ScoreVector& teacher_scores) {
    const int n = teacher_scores.size();
    for (double s : teacher_scores.scores)
        if (!std::isfinite(s)) throw ValidationError("pairwise_labels: non-finite teacher score");
    PairwiseLabels labels;
    labels.t = Eigen::MatrixXi::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double d = teacher_scores[i] - teacher_scores[j];
            const int sign = (d > 0) - (d < 0);
            labels.t(i, j) = sign;
            labels.t(j, i) = -sign;
        }
    }
    return labels;
}

double ranknet_loss(const ScoreVector& predicted, const PairwiseLabels& labels) {
    const int n = predicted.size();
    if (labels.size() != n) throw ValidationError("ranknet_loss: label/score length mismatch");
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const int t = labels.t(i, j);
            if (t == 0) continue;
            loss += softplus(-static_cast<double>(t) * (predicted[i] - predicted[j]));
        }
    }
    return loss;
}

LossValueGrad ranknet_loss_grad(const ScoreVector& predicted, const PairwiseLabels& labels) {
    const int n = predicted.size();
    if (labels.size() != n) throw ValidationError("ranknet_loss: label/score length mismatch");
    LossValueGrad out;
    out.grad = Vector::Zero(n);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const int ti = labels.t(i, j);
            if (ti == 0) continue;
            const double t = static_cast<double>(ti);
            const double m = t * (predicted[i] - predicted[j]);
            out.value += softplus(-m);
            const double d = -t * sigmoid(-m);  // d/dy_i of softplus(-t (y_i - y_j))
            out.grad[i] += d;
            out.grad[j] -= d;
        }
    }
    return out;
}

ScoreVector loo_targets(const CandidateSet& frames, const backends::TaskRecord& task,
                        backends::TaskLossOracle& oracle, int n_workers) {
    const int n = frames.size();
    if (n < 1) throw ValidationError("loo_targets: empty candidate set");

    std::vector<int> full(static_cast<std::size_t>(n));
    std::iota(full.begin(), full.end(), 0);

    // Query index n is the full set; i < n leaves frame i out.
    std::vector<int> queries(static_cast<std::size_t>(n) + 1);
    std::iota(queries.begin(), queries.end(), 0);
    std::vector<double> losses = parallel_map(
        queries,
        [&](int q) {
            std::vector<int> subset;
            subset.reserve(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i)
                if (i != q) subset.push_back(i);
            try {
                return oracle.task_loss(task, subset);
            } catch (const std::exception& e) {
                std::string desc = "loo_targets: oracle failed on subset {";
                for (std::size_t s = 0; s < subset.size(); ++s)
                    desc += (s ? "," : "") + std::to_string(subset[s]);
                desc += "}: ";
                desc += e.what();
                throw BackendError(BackendError::Kind::transport, desc);
            }
        },
        n_workers);

    const double base = losses.back();
    ScoreVector targets;
    targets.scores.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) targets.scores[static_cast<std::size_t>(i)] = losses[static_cast<std::size_t>(i)] - base;
    return targets;
}

std::vector<int> top_k_by_score(const ScoreVector& scores, int k) {
    const int n = scores.size();
    if (k < 0 || k > n) throw ValidationError("top_k_by_score: k outside [0, N]");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    std::vector<int> top(order.begin(), order.begin() + k);
    std::sort(top.begin(), top.end());
    return top;
}

int kstar_from_losses(const std::vector<int>& k_grid, const std::vector<double>& losses,
                      double lambda_k) {
    if (k_grid.empty() || k_grid.size() != losses.size())
        throw ValidationError("kstar_from_losses: grid/loss size mismatch");
    const auto n = static_cast<double>(losses.size());
    const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / n;
    double var = 0.0;
    for (double l : losses) var += (l - mean) * (l - mean);
    var /= n;
    const double sd = std::sqrt(var);
    // A flat loss profile z-scores to all-zeros; the relative threshold keeps
    // the rule invariant under positive affine rescaling of the losses.
    const bool flat = sd <= std::abs(mean) * 1e-12 + 1e-300;

    int best_k = k_grid.front();
    double best_obj = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k_grid.size(); ++i) {
        const double z = flat ? 0.0 : (losses[i] - mean) / sd;
        const double obj = z + lambda_k * static_cast<double>(k_grid[i]);
        if (obj < best_obj) {  // strict: ties keep the smaller (earlier) k
            best_obj = obj;
            best_k = k_grid[i];
        }
    }
    return best_k;
}

int kstar_target(const CandidateSet& frames, const ScoreVector& rank_scores,
                 const backends::TaskRecord& task, backends::TaskLossOracle& oracle,
                 const KTargetConfig& cfg) {
    const int n = frames.size();
    if (rank_scores.size() != n) throw ValidationError("kstar_target: score length mismatch");
    if (cfg.k_grid.empty()) throw ValidationError("kstar_target: empty k grid");
    for (int k : cfg.k_grid)
        if (k < 1 || k > n) throw ValidationError("kstar_target: grid value outside [1, N]");

    std::vector<double> losses(cfg.k_grid.size());
    for (std::size_t i = 0; i < cfg.k_grid.size(); ++i) {
        const std::vector<int> subset = top_k_by_score(rank_scores, cfg.k_grid[i]);
        losses[i] = oracle.task_loss(task, subset);
    }
    return kstar_from_losses(cfg.k_grid, losses, cfg.lambda_k);
}

double evo_loss(const KDistribution& dist, int k_star) {
    if (k_star < 1 || k_star > dist.k_max) throw ValidationError("evo_loss: k_star outside [1, k_max]");
    const double delta = dist.expectation() - static_cast<double>(k_star);
    const double a = std::abs(delta);
    return a < 1.0 ? 0.5 * delta * delta : a - 0.5;
}

LossValueGrad evo_loss_grad_probs(const KDistribution& dist, int k_star) {
    if (k_star < 1 || k_star > dist.k_max) throw ValidationError("evo_loss: k_star outside [1, k_max]");
    const double delta = dist.expectation() - static_cast<double>(k_star);
    const double a = std::abs(delta);
    LossValueGrad out;
    out.value = a < 1.0 ? 0.5 * delta * delta : a - 0.5;
    const double dE = a < 1.0 ? delta : (delta > 0 ? 1.0 : -1.0);
    out.grad = Vector::Zero(dist.k_max);
    for (int k = 1; k <= dist.k_max; ++k) out.grad[k - 1] = dE * static_cast<double>(k);
    return out;
}

KDistribution class_target(int k_star, int k_max, double sigma) {
    if (!(sigma > 0.0)) throw ValidationError("class_target: sigma must be > 0");
    if (k_star < 1 || k_star > k_max) throw ValidationError("class_target: k_star outside [1, k_max]");
    KDistribution d;
    d.k_max = k_max;
    d.probs.resize(static_cast<std::size_t>(k_max));
    double sum = 0.0;
    for (int k = 1; k <= k_max; ++k) {
        const double diff = static_cast<double>(k - k_star);
        const double w = std::exp(-diff * diff / (2.0 * sigma * sigma));
        d.probs[static_cast<std::size_t>(k - 1)] = w;
        sum += w;
    }
    for (double& p : d.probs) p /= sum;
    return d;
}

namespace {

// KL(target || p) with p clamped at 1e-9 wherever the target is positive.
double kl_to_target(const KDistribution& target, const KDistribution& dist) {
    double kl = 0.0;
    for (int i = 0; i < target.k_max; ++i) {
        const double tk = target.probs[static_cast<std::size_t>(i)];
        if (tk <= 0.0) continue;
        double pk = dist.probs[static_cast<std::size_t>(i)];
        if (pk < 1e-9) {
            pk = 1e-9;
            g_clamp_count.fetch_add(1, std::memory_order_relaxed);
        }
        kl += tk * (std::log(tk) - std::log(pk));
    }
    return kl;
}

}  // namespace

std::uint64_t k_head_loss_clamp_count() { return g_clamp_count.load(std::memory_order_relaxed); }

double k_head_loss(const KDistribution& dist, int k_star, const KTargetConfig& cfg) {
    if (k_star < 1 || k_star > dist.k_max)
        throw ValidationError("k_head_loss: k_star outside [1, k_max]");
    const KDistribution target = class_target(k_star, dist.k_max, cfg.sigma);
    const double evo = evo_loss(dist, k_star);
    const double cls = kl_to_target(target, dist);
    return (1.0 - cfg.alpha) * evo + cfg.alpha * cls;
}

LossValueGrad k_head_loss_grad_logits(const Vector& k_logits, int k_star, const KTargetConfig& cfg) {
    const int k_max = static_cast<int>(k_logits.size());
    if (k_star < 1 || k_star > k_max)
        throw ValidationError("k_head_loss: k_star outside [1, k_max]");

    // softmax
    KDistribution dist;
    dist.k_max = k_max;
    const double m = k_logits.maxCoeff();
    Vector p = (k_logits.array() - m).exp();
    p /= p.sum();
    dist.probs.assign(p.data(), p.data() + p.size());

    const KDistribution target = class_target(k_star, k_max, cfg.sigma);
    LossValueGrad evo = evo_loss_grad_probs(dist, k_star);
    const double cls = kl_to_target(target, dist);

    LossValueGrad out;
    out.value = (1.0 - cfg.alpha) * evo.value + cfg.alpha * cls;

    // dL/dp, then pull back through the softmax Jacobian.
    Vector dp = (1.0 - cfg.alpha) * evo.grad;
    for (int i = 0; i < k_max; ++i) {
        const double tk = target.probs[static_cast<std::size_t>(i)];
        if (tk > 0.0) {
            const double pk = std::max(p[i], 1e-9);
            dp[i] += cfg.alpha * (-tk / pk);
        }
    }
    const double dot = dp.dot(p);
    out.grad = p.cwiseProduct(dp.array().matrix() - Vector::Constant(k_max, dot));
    return out;
}

SftLoss sft_loss(const ScoreVector& scores, const Vector& k_logits,
                 const AnnotatedExample& annotation, const SftConfig& cfg) {
    if (!annotation.keyframe_indices)
        throw ValidationError("sft_loss: annotation lacks keyframe_indices");
    const int n = scores.size();
    ScoreVector teacher;
    teacher.scores.assign(static_cast<std::size_t>(n), 0.0);
    for (int idx : *annotation.keyframe_indices) {
        if (idx < 0 || idx >= n)
            throw ValidationError("sft_loss: keyframe index outside the candidate grid");
        teacher.scores[static_cast<std::size_t>(idx)] = 1.0;
    }
    const PairwiseLabels labels = pairwise_labels(teacher);
    LossValueGrad rank = ranknet_loss_grad(scores, labels);

    // Annotations on the 64-frame grid can exceed the head's support; the
    // predicted K is capped there, so the target saturates at k_max.
    const int k_max = static_cast<int>(k_logits.size());
    const int k_true = std::min(annotation.num_selected_frames, k_max);
    LossValueGrad k_part = k_head_loss_grad_logits(k_logits, k_true, cfg.k_target);

    SftLoss out;
    out.rank_term = rank.value;
    out.k_term = k_part.value;
    out.value = cfg.w_rank * rank.value + k_part.value;
    out.d_scores = cfg.w_rank * rank.grad;
    out.d_k_logits = k_part.grad;
    return out;
}

}  // namespace frameoracle::objectives
