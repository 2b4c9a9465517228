#pragma once

#include <string>
#include <vector>

#include "pcseg/tensor.hpp"

namespace pcseg {

struct ClassWeights {
    std::vector<double> w;  // positive, normalized to mean 1
};

// w_k = total / (C * (count_k + smoothing)), normalized to mean 1. Classes
// absent from the histogram take the largest observed weight before
// normalization, which caps the boost a never-sampled class can get.
ClassWeights compute_class_weights(const std::vector<std::size_t>& histogram,
                                   std::size_t class_count, double smoothing);

// Which reading of the presence labels the auxiliary loss uses: a one-hot
// row per point, or the scene's class-presence indicator broadcast to every
// point. The broadcast variant matches the presence head predicting scene
// content and is the default.
enum class PresenceLabelMode { per_point, scene_broadcast };

const char* presence_mode_name(PresenceLabelMode mode);

struct LossReport {
    double total = 0.0;
    double wce = 0.0;
    double cr = 0.0;
    double lambda = 0.5;
    PresenceLabelMode presence_mode = PresenceLabelMode::scene_broadcast;
};

// Weighted cross-entropy over per-point class probabilities:
//   -(1/N) sum_i sum_k w_k l_ik log(p_ik)
// with p from a stabilized softmax, clamped to [1e-12, 1].
// logits: [N x C]; labels: N valid class ids.
Tensor wce_loss(const Tensor& logits, const std::vector<int>& labels, const ClassWeights& weights);

// Category-response loss: binary cross-entropy of presence predictions,
//   -(1/N) sum_k sum_i (s^l log s^p + (1-s^l) log(1-s^p)),
// normalized by the point count only, so every class contributes a full
// term regardless of its size. probs and labels: [N x C]; probs are clamped
// to [1e-12, 1-1e-12] internally.
Tensor cr_loss(const Tensor& presence_probs, const Tensor& presence_labels);

// lambda * wce + (1 - lambda) * cr; lambda outside [0,1] is a config error.
Tensor total_loss(const Tensor& wce, const Tensor& cr, double lambda);

LossReport make_loss_report(const Tensor& total, const Tensor& wce, const Tensor& cr,
                            double lambda, PresenceLabelMode mode);

// [N x C] constant tensor of presence labels per the selected mode.
Tensor build_presence_labels(const std::vector<int>& labels, std::size_t class_count,
                             PresenceLabelMode mode);

}  // namespace pcseg
