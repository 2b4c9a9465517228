#pragma once

#include <string>
#include <vector>

#include "pcseg/errors.hpp"

namespace pcseg {

// Row = ground truth, column = prediction. Batch matrices merge by addition.
struct ConfusionMatrix {
    std::size_t class_count = 0;
    std::vector<std::size_t> counts;  // class_count x class_count, row-major

    explicit ConfusionMatrix(std::size_t classes = 0)
        : class_count(classes), counts(classes * classes, 0) {}

    std::size_t& at(std::size_t truth, std::size_t predicted) {
        return counts[truth * class_count + predicted];
    }
    std::size_t at(std::size_t truth, std::size_t predicted) const {
        return counts[truth * class_count + predicted];
    }
    std::size_t total() const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

void accumulate(ConfusionMatrix& cm, const std::vector<int>& predictions,
                const std::vector<int>& labels);

struct ClassMetrics {
    std::size_t id = 0;
    std::string name;
    double iou = 0.0;
    double acc = 0.0;
    std::size_t support = 0;  // ground-truth count
    bool iou_valid = false;   // false when the class is absent from gt and pred
    bool acc_valid = false;   // false when the class has no ground truth
};

struct MetricSummary {
    double oa = 0.0;
    double macc = 0.0;   // mean accuracy over classes with ground truth
    double miou = 0.0;   // mean IoU over classes present in gt or predictions
    std::vector<ClassMetrics> per_class;

    std::string to_json(int indent = 2) const;
};

MetricSummary summarize(const ConfusionMatrix& cm,
                        const std::vector<std::string>& class_names = {});

}  // namespace pcseg
