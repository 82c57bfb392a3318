#pragma once

#include <optional>
#include <span>
#include <vector>

namespace insarforge::metrics {

struct ConfusionCounts {
    long tp = 0, fp = 0, fn = 0, tn = 0;

    long predicted_positive() const { return tp + fp; }
    long total() const { return tp + fp + fn + tn; }
};

/// A scored item: p_max of an interferogram and whether it truly deforms.
struct Scored {
    double score = 0;
    bool truth = false;
};

/// Positive iff score > threshold. Throws DataError for scores outside [0, 1].
ConfusionCounts confusion(std::span<const Scored> results, double threshold);

/// tp / (tp + fp); empty when nothing was predicted positive.
std::optional<double> ppv(const ConfusionCounts& c);
std::optional<double> recall(const ConfusionCounts& c);
std::optional<double> accuracy(const ConfusionCounts& c);

struct RocPoint {
    double fpr = 0, tpr = 0, threshold = 0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // threshold descending, (0,0) first and (1,1) last
    double auc = 0;
};

/// Sweeps the threshold over the distinct scores (a point counts items with
/// score >= threshold as positive); trapezoidal AUC.
/// Throws DataError unless both truth classes are present.
RocCurve roc_curve(std::span<const Scored> results);

} // namespace insarforge::metrics
