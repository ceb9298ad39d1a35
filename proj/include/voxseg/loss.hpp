#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "voxseg/ops.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/volume.hpp"

// Training loss: per supervision head, exponential-logarithmic soft Dice over
// kidney and tumor plus class-weighted cross entropy, combined across heads by
// fixed layer weights. Soft Dice pools batch and spatial voxels into one sum;
// cross entropy is a per-voxel mean so heads of different resolution are
// comparable before layer weighting. All reductions run in double in a fixed
// serial order, so loss values are bit-stable.

namespace voxseg {

struct LossConfig {
    double gamma = 0.3;                                  // exp-log exponent
    double dice_weight_kidney = 0.4;
    double dice_weight_tumor = 0.6;
    std::array<double, 3> ce_weights{0.28, 0.28, 0.44};  // background, kidney, tumor
    std::vector<double> layer_weights{0.4, 0.2, 0.2, 0.1, 0.1}; // finest head first
    double smooth_eps = 1e-5;   // soft-dice smoothing, numerator and denominator
    double clamp_floor = 1e-6;  // floor for SD before log and probs before log
    bool plain_dice = false;    // ablation: 1 - SD instead of (-log SD)^gamma

    void validate() const {
        if (!(gamma > 0.0)) throw std::runtime_error("loss config: gamma must be > 0");
        if (!(clamp_floor > 0.0 && clamp_floor < 1.0))
            throw std::runtime_error("loss config: clamp_floor must be in (0,1)");
        for (double w : layer_weights)
            if (w < 0.0) throw std::runtime_error("loss config: negative layer weight");
        if (layer_weights.empty()) throw std::runtime_error("loss config: no layer weights");
    }
};

/// Soft Dice of one class channel against a binary truth channel:
/// (2*sum(p*t) + eps) / (sum(p^2) + sum(t^2) + eps), pooled over the batch.
template <typename T>
double soft_dice(const Tensor5<T>& probs, const LabelBatch& truth, int class_id,
                 double smooth_eps) {
    if (probs.n != truth.n || probs.d != truth.d || probs.h != truth.h || probs.w != truth.w)
        throw std::runtime_error("soft_dice: shape mismatch");
    const std::int64_t sp = probs.spatial();
    double inter = 0.0, sum_p2 = 0.0, sum_t2 = 0.0;
    for (int in = 0; in < probs.n; ++in) {
        const T* p = probs.row(in, class_id, 0, 0);
        const std::uint8_t* t = truth.v.data() + std::int64_t(in) * sp;
        for (std::int64_t j = 0; j < sp; ++j) {
            const double pv = double(p[j]);
            sum_p2 += pv * pv;
            if (t[j] == class_id) {
                inter += pv;
                sum_t2 += 1.0;
            }
        }
    }
    return (2.0 * inter + smooth_eps) / (sum_p2 + sum_t2 + smooth_eps);
}

namespace detail {

/// Transform applied to each class's soft dice, and its derivative.
/// exp-log: (-log sd)^gamma; plain ablation: 1 - sd. Outside (floor, 1) the
/// clamp makes the derivative zero.
inline double dice_transform(double sd, const LossConfig& cfg, double* deriv) {
    const double lo = cfg.clamp_floor;
    const double sd_cl = sd < lo ? lo : (sd > 1.0 ? 1.0 : sd);
    if (cfg.plain_dice) {
        if (deriv) *deriv = (sd <= lo || sd >= 1.0) ? 0.0 : -1.0;
        return 1.0 - sd_cl;
    }
    const double u = -std::log(sd_cl);
    if (deriv) {
        *deriv = (sd <= lo || u <= 0.0)
                     ? 0.0
                     : cfg.gamma * std::pow(u, cfg.gamma - 1.0) * (-1.0 / sd_cl);
    }
    return std::pow(u, cfg.gamma);
}

} // namespace detail

/// Combination of the two per-class soft Dice values:
/// (-log SD_kidney)^gamma * w_kidney + (-log SD_tumor)^gamma * w_tumor.
/// The plain_dice ablation replaces the whole expression with the unweighted
/// classic cost mean((1 - SD_kidney), (1 - SD_tumor)).
inline double exp_log_dice(double sd_kidney, double sd_tumor, const LossConfig& cfg) {
    const double wk = cfg.plain_dice ? 0.5 : cfg.dice_weight_kidney;
    const double wt = cfg.plain_dice ? 0.5 : cfg.dice_weight_tumor;
    return wk * detail::dice_transform(sd_kidney, cfg, nullptr) +
           wt * detail::dice_transform(sd_tumor, cfg, nullptr);
}

/// Class-weighted cross entropy, mean over voxels:
/// mean_v of -w[label(v)] * log(max(p_label(v), clamp_floor)).
template <typename T>
double weighted_ce(const Tensor5<T>& probs, const LabelBatch& truth, const LossConfig& cfg) {
    if (probs.n != truth.n || probs.d != truth.d || probs.h != truth.h || probs.w != truth.w ||
        probs.c != kNumClasses)
        throw std::runtime_error("weighted_ce: shape mismatch");
    const std::int64_t sp = probs.spatial();
    double acc = 0.0;
    for (int in = 0; in < probs.n; ++in) {
        const std::uint8_t* t = truth.v.data() + std::int64_t(in) * sp;
        for (std::int64_t j = 0; j < sp; ++j) {
            const int c = t[j];
            const double p = std::max(double(probs.row(in, c, 0, 0)[j]), cfg.clamp_floor);
            acc -= cfg.ce_weights[static_cast<std::size_t>(c)] * std::log(p);
        }
    }
    return acc / double(std::int64_t(probs.n) * sp);
}

/// Per-head loss (Eq. 6): exp-log soft Dice + weighted cross entropy.
template <typename T>
double layer_loss(const Tensor5<T>& probs, const LabelBatch& truth, const LossConfig& cfg) {
    const double sd_k = soft_dice(probs, truth, 1, cfg.smooth_eps);
    const double sd_t = soft_dice(probs, truth, 2, cfg.smooth_eps);
    return exp_log_dice(sd_k, sd_t, cfg) + weighted_ce(probs, truth, cfg);
}

/// Gradient of scale * layer_loss with respect to the head's logits
/// (the softmax producing `probs` is differentiated here).
template <typename T>
Tensor5<T> layer_loss_backward(const Tensor5<T>& probs, const LabelBatch& truth,
                               const LossConfig& cfg, double scale) {
    const std::int64_t sp = probs.spatial();
    const double vox = double(std::int64_t(probs.n) * sp);

    // dice terms: need N, D per foreground class for the quotient derivative
    double inter[3] = {0, 0, 0}, sum_p2[3] = {0, 0, 0}, sum_t2[3] = {0, 0, 0};
    for (int cls = 1; cls < kNumClasses; ++cls) {
        for (int in = 0; in < probs.n; ++in) {
            const T* p = probs.row(in, cls, 0, 0);
            const std::uint8_t* t = truth.v.data() + std::int64_t(in) * sp;
            for (std::int64_t j = 0; j < sp; ++j) {
                const double pv = double(p[j]);
                sum_p2[cls] += pv * pv;
                if (t[j] == cls) {
                    inter[cls] += pv;
                    sum_t2[cls] += 1.0;
                }
            }
        }
    }
    double dE_dsd[3] = {0, 0, 0}, num[3] = {0, 0, 0}, den[3] = {0, 0, 0};
    for (int cls = 1; cls < kNumClasses; ++cls) {
        num[cls] = 2.0 * inter[cls] + cfg.smooth_eps;
        den[cls] = sum_p2[cls] + sum_t2[cls] + cfg.smooth_eps;
        const double sd = num[cls] / den[cls];
        double deriv = 0.0;
        detail::dice_transform(sd, cfg, &deriv);
        const double w = cfg.plain_dice ? 0.5
                                        : (cls == 1 ? cfg.dice_weight_kidney
                                                    : cfg.dice_weight_tumor);
        dE_dsd[cls] = w * deriv;
    }

    // dL/dprobs, then softmax backward to logits
    Tensor5<T> dprobs(probs.n, probs.c, probs.d, probs.h, probs.w);
    for (int in = 0; in < probs.n; ++in) {
        const std::uint8_t* t = truth.v.data() + std::int64_t(in) * sp;
        for (int cls = 0; cls < kNumClasses; ++cls) {
            const T* p = probs.row(in, cls, 0, 0);
            T* g = dprobs.row(in, cls, 0, 0);
            const double ce_w = cfg.ce_weights[static_cast<std::size_t>(cls)];
            for (std::int64_t j = 0; j < sp; ++j) {
                const double pv = double(p[j]);
                double grad = 0.0;
                if (cls >= 1 && dE_dsd[cls] != 0.0) {
                    const double tv = t[j] == cls ? 1.0 : 0.0;
                    const double dsd_dp =
                        (2.0 * tv * den[cls] - num[cls] * 2.0 * pv) / (den[cls] * den[cls]);
                    grad += dE_dsd[cls] * dsd_dp;
                }
                if (t[j] == cls && pv > cfg.clamp_floor) grad += -ce_w / (vox * pv);
                g[j] = T(grad * scale);
            }
        }
    }
    return softmax_backward(probs, dprobs);
}

/// Nearest-neighbor label downsampling by an integer factor. Source index is
/// the input voxel whose center is nearest to the output voxel's center,
/// ties resolved toward the lower index: src = f*j + (f-1)/2.
LabelMask downsample_labels(const LabelMask& m, int factor);
LabelBatch downsample_labels(const LabelBatch& b, int factor);

template <typename T>
struct MultiscaleLoss {
    double total = 0.0;
    std::vector<double> per_layer;       // unweighted layer losses, finest first
    std::vector<Tensor5<T>> logit_grads; // d total / d head logits, finest first
};

/// Eq. 1: weighted sum of per-head losses against matched-resolution labels.
/// heads[0] is the full-resolution head; head l is at scale 2^l.
template <typename T>
MultiscaleLoss<T> multiscale_loss(const std::vector<Tensor5<T>>& heads, const LabelBatch& truth,
                                  const LossConfig& cfg, bool with_grads = true) {
    cfg.validate();
    if (heads.size() != cfg.layer_weights.size())
        throw std::runtime_error("multiscale_loss: " + std::to_string(heads.size()) +
                                 " heads but " + std::to_string(cfg.layer_weights.size()) +
                                 " layer weights");
    MultiscaleLoss<T> out;
    int factor = 1;
    for (std::size_t l = 0; l < heads.size(); ++l, factor *= 2) {
        const LabelBatch labels = downsample_labels(truth, factor);
        if (heads[l].d != labels.d || heads[l].h != labels.h || heads[l].w != labels.w ||
            heads[l].n != labels.n)
            throw std::runtime_error("multiscale_loss: head " + std::to_string(l) +
                                     " dims " + heads[l].dims_str() +
                                     " do not match labels at factor " + std::to_string(factor));
        const double ll = layer_loss(heads[l], labels, cfg);
        out.per_layer.push_back(ll);
        out.total += cfg.layer_weights[l] * ll;
        if (with_grads)
            out.logit_grads.push_back(
                layer_loss_backward(heads[l], labels, cfg, cfg.layer_weights[l]));
    }
    return out;
}

} // namespace voxseg
