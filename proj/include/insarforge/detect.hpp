#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "insarforge/cnn.hpp"
#include "insarforge/dataset.hpp"
#include "insarforge/raster.hpp"

namespace insarforge::detect {

struct CannyConfig {
    double sigma = 1.4;
    double low = 0.1;   // fraction of the maximum gradient magnitude
    double high = 0.25;
    double min_edge_fraction = 0.01;
};

struct EdgeResult {
    bool accepted = false;
    double edge_fraction = 0;
    Raster mask;  // 1 on edge pixels, 0 elsewhere
};

/// Gaussian smoothing, Sobel gradients, non-maximum suppression and
/// hysteresis; accepts the patch when enough pixels are edges.
EdgeResult canny_prefilter(const Raster& gray, const CannyConfig& cfg = {});

struct MergeConfig {
    int kernel_size = 20;
    double sigma = 5.0;
};

/// Probability of deformation for one patch position; untested patches carry 0.
struct PatchProbability {
    dataset::PatchPosition position;
    double p = 0;
};

/// A contour polyline in pixel coordinates (x = column, y = row).
struct Contour {
    double level = 0;
    std::vector<std::array<double, 2>> points;
    bool closed = false;
};

struct ProbabilityMap {
    Raster map;  // Unit::probability, full image resolution
    double p_max = 0;
    int p_max_row = 0, p_max_col = 0;
    std::vector<Contour> contours;  // levels 0.5 and 0.8
};

/// Each patch deposits its probability at its center on the lattice of patch
/// centers (the maximum wins where two patches share a lattice node). The
/// lattice is bilinearly interpolated to full resolution, held constant
/// beyond the outermost centers, and smoothed by a unit-sum Gaussian with
/// symmetric boundary reflection.
ProbabilityMap merge_probabilities(std::span<const PatchProbability> patches, int width, int height, int patch,
                                   const MergeConfig& cfg = {});

/// Marching-squares level set joined into polylines.
std::vector<Contour> contours(const Raster& field, double level);

struct DetectConfig {
    int patch = 64;
    int stride = 8;
    double threshold = 0.5;
    CannyConfig canny{};
    MergeConfig merge{};
    int jobs = 1;
};

struct PatchRecord {
    dataset::PatchPosition position;
    bool tested = false;
    double edge_fraction = 0;
    std::vector<double> probs;  // empty when untested
    double p_deformation = 0;
};

struct DetectionResult {
    ProbabilityMap probability_map;
    bool is_positive = false;
    std::vector<PatchRecord> patches;
    std::optional<dataset::WeightTriple> weights;  // 91-class scheme only
};

/// Runs the patch pipeline on an unwrapped or wrapped phase image or a gray
/// interferogram. Positive iff p_max > threshold.
DetectionResult detect(const Raster& img, const cnn::CnnModel& model, const dataset::ClassScheme& scheme,
                       const DetectConfig& cfg = {});

/// Probability-weighted mean of the sum-normalized 91 class representatives.
/// Throws DataError unless probs has 91 entries summing to 1 within 1e-6.
dataset::WeightTriple estimate_weights(std::span<const double> probs);

/// Turbulence weight of a false-positive patch: clamp((sigma2_max - m) / r, 0, 1).
double turbulence_weight(double sigma2_max, double m = 5.0, double r = 4.0);

/// The alpha = 0 class nearest to (0, 1 - gamma, gamma); ties go to the lower index.
int class_for_turbulence_weight(double gamma);

/// One detected interferogram together with its ground truth.
struct RetrainItem {
    Raster image;  // the phase or gray image passed to detect
    DetectionResult result;
    bool deforming = false;
    std::optional<std::array<int, 2>> source_pixel;  // (row, col) of the true epicenter
};

struct RetrainOptions {
    int patch = 64;
    int stride = 8;
    bool zero_centered = true;
    double wavelength_m = 0.05546;
    std::uint64_t seed = 1;
};

/// Patches for fine-tuning from expert-checked (here: ground-truth) detections.
/// Every emitted patch is shifted diagonally from the tested patch it replaces
/// (half a stride first, then other offsets below one stride) so that no
/// retraining patch shares a position with a test patch.
/// Three-class retraining supports the D+S+T vs S+T vs T variant only.
dataset::LabeledDataset select_retrain_patches(std::span<const RetrainItem> items, const dataset::ClassScheme& scheme,
                                               const RetrainOptions& opts = {});

} // namespace insarforge::detect
