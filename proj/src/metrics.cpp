#include "pcseg/metrics.hpp"

#include <json.hpp>

namespace pcseg {

std::size_t ConfusionMatrix::total() const {
    std::size_t n = 0;
    for (std::size_t c : counts) n += c;
    return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.class_count != class_count) {
        throw DataError("confusion matrix merge with mismatched class counts");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    return *this;
}

void accumulate(ConfusionMatrix& cm, const std::vector<int>& predictions,
                const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) {
        throw DataError("accumulate: prediction and label counts differ");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int t = labels[i], p = predictions[i];
        if (t < 0 || static_cast<std::size_t>(t) >= cm.class_count || p < 0 ||
            static_cast<std::size_t>(p) >= cm.class_count) {
            throw DataError("accumulate: class id outside [0, " + std::to_string(cm.class_count) +
                            ") at point " + std::to_string(i));
        }
        cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p))++;
    }
}

MetricSummary summarize(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
    const std::size_t c = cm.class_count;
    const std::size_t total = cm.total();
    if (total == 0) throw DataError("summarize: empty confusion matrix");

    MetricSummary summary;
    std::size_t trace = 0;
    double acc_sum = 0.0, iou_sum = 0.0;
    std::size_t acc_n = 0, iou_n = 0;
    for (std::size_t k = 0; k < c; ++k) {
        ClassMetrics m;
        m.id = k;
        if (k < class_names.size()) m.name = class_names[k];
        std::size_t row = 0, col = 0;
        for (std::size_t j = 0; j < c; ++j) {
            row += cm.at(k, j);
            col += cm.at(j, k);
        }
        const std::size_t diag = cm.at(k, k);
        trace += diag;
        m.support = row;
        if (row > 0) {
            m.acc = static_cast<double>(diag) / static_cast<double>(row);
            m.acc_valid = true;
            acc_sum += m.acc;
            ++acc_n;
        }
        const std::size_t denom = row + col - diag;
        if (denom > 0) {
            m.iou = static_cast<double>(diag) / static_cast<double>(denom);
            m.iou_valid = true;
            iou_sum += m.iou;
            ++iou_n;
        }
        summary.per_class.push_back(std::move(m));
    }
    summary.oa = static_cast<double>(trace) / static_cast<double>(total);
    summary.macc = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
    summary.miou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
    return summary;
}

std::string MetricSummary::to_json(int indent) const {
    nlohmann::json j;
    j["oa"] = oa;
    j["macc"] = macc;
    j["miou"] = miou;
    j["per_class"] = nlohmann::json::array();
    for (const ClassMetrics& m : per_class) {
        nlohmann::json cj;
        cj["id"] = m.id;
        cj["name"] = m.name;
        cj["iou"] = m.iou_valid ? nlohmann::json(m.iou) : nlohmann::json();
        cj["acc"] = m.acc_valid ? nlohmann::json(m.acc) : nlohmann::json();
        cj["support"] = m.support;
        cj["excluded"] = !m.iou_valid;
        j["per_class"].push_back(cj);
    }
    return j.dump(indent);
}

}  // namespace pcseg
