#include "pcseg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace pcseg {

namespace {
constexpr double kProbEps = 1e-12;
}

ClassWeights compute_class_weights(const std::vector<std::size_t>& histogram,
                                   std::size_t class_count, double smoothing) {
    if (histogram.size() != class_count) {
        throw DataError("class weight histogram has " + std::to_string(histogram.size()) +
                        " bins, expected " + std::to_string(class_count));
    }
    std::size_t total = 0;
    for (std::size_t c : histogram) total += c;
    if (total == 0) throw DataError("class weight histogram is empty");

    ClassWeights weights;
    weights.w.assign(class_count, 0.0);
    double max_observed = 0.0;
    for (std::size_t k = 0; k < class_count; ++k) {
        if (histogram[k] == 0) continue;
        weights.w[k] = static_cast<double>(total) /
                       (static_cast<double>(class_count) * (static_cast<double>(histogram[k]) + smoothing));
        max_observed = std::max(max_observed, weights.w[k]);
    }
    for (std::size_t k = 0; k < class_count; ++k) {
        if (histogram[k] == 0) weights.w[k] = max_observed;
    }
    double mean = 0.0;
    for (double v : weights.w) mean += v;
    mean /= static_cast<double>(class_count);
    for (double& v : weights.w) v /= mean;
    return weights;
}

const char* presence_mode_name(PresenceLabelMode mode) {
    return mode == PresenceLabelMode::per_point ? "per_point" : "scene_broadcast";
}

Tensor wce_loss(const Tensor& logits, const std::vector<int>& labels, const ClassWeights& weights) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (labels.size() != n) throw DataError("wce_loss: label count != logit rows");
    if (weights.w.size() != c) throw DataError("wce_loss: weight count != class count");
    std::vector<double> mask(n * c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int l = labels[i];
        if (l < 0 || static_cast<std::size_t>(l) >= c) {
            throw DataError("wce_loss: label " + std::to_string(l) + " outside [0, " +
                            std::to_string(c) + ")");
        }
        mask[i * c + static_cast<std::size_t>(l)] = weights.w[static_cast<std::size_t>(l)];
    }
    Tensor log_probs = clamp(log_softmax(logits, 1), std::log(kProbEps), 0.0);
    Tensor weighted = mul(Tensor::from({n, c}, std::move(mask)), log_probs);
    return scale(sum(weighted), -1.0 / static_cast<double>(n));
}

Tensor cr_loss(const Tensor& presence_probs, const Tensor& presence_labels) {
    if (presence_probs.shape() != presence_labels.shape()) {
        throw ShapeError("cr_loss: probs " + shape_str(presence_probs.shape()) + " vs labels " +
                         shape_str(presence_labels.shape()));
    }
    const std::size_t n = presence_probs.rows();
    Tensor p = clamp(presence_probs, kProbEps, 1.0 - kProbEps);
    Tensor ones = Tensor::full(p.shape(), 1.0);
    Tensor positive = mul(presence_labels, log(p));
    Tensor negative = mul(sub(ones, presence_labels), log(sub(ones, p)));
    return scale(sum(add(positive, negative)), -1.0 / static_cast<double>(n));
}

Tensor total_loss(const Tensor& wce, const Tensor& cr, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw ConfigError("lambda " + std::to_string(lambda) + " outside [0, 1]");
    }
    return add(scale(wce, lambda), scale(cr, 1.0 - lambda));
}

LossReport make_loss_report(const Tensor& total, const Tensor& wce, const Tensor& cr,
                            double lambda, PresenceLabelMode mode) {
    LossReport report;
    report.total = total.value();
    report.wce = wce.value();
    report.cr = cr.value();
    report.lambda = lambda;
    report.presence_mode = mode;
    return report;
}

Tensor build_presence_labels(const std::vector<int>& labels, std::size_t class_count,
                             PresenceLabelMode mode) {
    const std::size_t n = labels.size();
    std::vector<double> out(n * class_count, 0.0);
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
            throw DataError("presence label " + std::to_string(l) + " outside [0, " +
                            std::to_string(class_count) + ")");
        }
    }
    if (mode == PresenceLabelMode::per_point) {
        for (std::size_t i = 0; i < n; ++i) {
            out[i * class_count + static_cast<std::size_t>(labels[i])] = 1.0;
        }
    } else {
        std::vector<double> present(class_count, 0.0);
        for (int l : labels) present[static_cast<std::size_t>(l)] = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < class_count; ++k) out[i * class_count + k] = present[k];
        }
    }
    return Tensor::from({n, class_count}, std::move(out));
}

}  // namespace pcseg
