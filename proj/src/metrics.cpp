#include "insarforge/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "insarforge/error.hpp"

namespace insarforge::metrics {

ConfusionCounts confusion(std::span<const Scored> results, double threshold) {
    ConfusionCounts c;
    for (const auto& r : results) {
        if (!(r.score >= 0.0 && r.score <= 1.0)) throw DataError("score outside [0, 1]");
        const bool positive = r.score > threshold;
        if (positive && r.truth) ++c.tp;
        else if (positive) ++c.fp;
        else if (r.truth) ++c.fn;
        else ++c.tn;
    }
    return c;
}

std::optional<double> ppv(const ConfusionCounts& c) {
    if (c.tp + c.fp == 0) return std::nullopt;
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

std::optional<double> recall(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0) return std::nullopt;
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

std::optional<double> accuracy(const ConfusionCounts& c) {
    if (c.total() == 0) return std::nullopt;
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

RocCurve roc_curve(std::span<const Scored> results) {
    long pos = 0, neg = 0;
    for (const auto& r : results) {
        if (!std::isfinite(r.score)) throw DataError("non-finite score");
        (r.truth ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) throw DataError("ROC needs both positive and negative truth items");
    std::vector<Scored> sorted(results.begin(), results.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

    RocCurve roc;
    roc.points.push_back({0.0, 0.0, INFINITY});
    long tp = 0, fp = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        const double s = sorted[i].score;
        // all items tied at s switch together
        for (; i < sorted.size() && sorted[i].score == s; ++i) (sorted[i].truth ? tp : fp) += 1;
        roc.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, s});
    }
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
        const auto& a = roc.points[i - 1];
        const auto& b = roc.points[i];
        roc.auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2;
    }
    return roc;
}

} // namespace insarforge::metrics
