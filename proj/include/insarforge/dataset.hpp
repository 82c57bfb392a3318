#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "insarforge/atmos.hpp"
#include "insarforge/deform.hpp"
#include "insarforge/raster.hpp"

namespace insarforge::dataset {

/// Component weights (alpha, beta, gamma) applied to D, S and T.
struct WeightTriple {
    double alpha = 0, beta = 0, gamma = 0;

    double sum() const { return alpha + beta + gamma; }
    /// Scaled to unit sum; throws UsageError for all-zero weights.
    WeightTriple normalized() const;
    bool operator==(const WeightTriple&) const = default;
};

/// I = (alpha D + beta S + gamma T) / (alpha + beta + gamma).
Raster compose_interferogram(const Raster& d, const Raster& s, const Raster& t, const WeightTriple& w);

/// a D + b S + c T without normalization.
Raster combine_components(const Raster& d, const Raster& s, const Raster& t, const WeightTriple& w);

/// The 91 scale-equivalence classes of nonzero triples on {0, .25, .5, .75, 1}^3.
/// Representatives are the sum-normalized triple when that lies on the grid,
/// otherwise the largest grid multiple of the primitive triple. The 15
/// on-grid classes come first, each group in lexicographic order, so the list
/// starts (0,0,1), (0,.25,.75), (0,.5,.5) and ends (1,1,1).
const std::vector<WeightTriple>& enumerate_weight_classes();

/// Index of the class containing `w` (any positive multiple of a representative).
int weight_class_of(const WeightTriple& w);

enum class SchemeKind { two_class, three_class, ninetyone_class };
enum class ThreeClassVariant { D_S_T, DS_S_T, DT_S_T, DST_S_T, DST_ST_T };

/// Components present in a class, and the fixed weights of 91-class classes.
struct ClassRecipe {
    std::string name;
    bool has_d = false, has_s = false, has_t = false;
    std::optional<WeightTriple> weights;
};

struct ClassScheme {
    SchemeKind kind = SchemeKind::two_class;
    ThreeClassVariant variant = ThreeClassVariant::DST_ST_T;
    std::vector<ClassRecipe> classes;

    int size() const { return static_cast<int>(classes.size()); }
    /// Stable textual name, e.g. "two_class", "three_class:DST_ST_T", "ninetyone_class".
    std::string name() const;
    /// Whether class `c` contributes to the deformation probability.
    bool is_deformation_class(int c) const;
};

ClassScheme make_scheme(SchemeKind kind, ThreeClassVariant variant = ThreeClassVariant::DST_ST_T);
ClassScheme scheme_from_name(std::string_view name);

/// Probability that a patch contains deformation: the summed probability of
/// classes containing D (2/3-class) or of classes whose alpha exceeds both
/// beta and gamma (91-class).
double deformation_probability(const ClassScheme& scheme, std::span<const double> probs);

/// Knobs for the component generators.
struct SynthOptions {
    deform::ElasticMedium medium{};
    double wavelength_m = kSentinel1Wavelength;
    /// Deformation draws are repeated until weight * peak-to-peak phase of D
    /// within the crop reaches this many fringes.
    double min_fringes = 1.0;
    std::vector<deform::SourceKind> source_kinds{deform::SourceKind::mogi, deform::SourceKind::penny,
                                                 deform::SourceKind::earthquake, deform::SourceKind::dyke,
                                                 deform::SourceKind::sill};
    /// Sources are centred inside this central fraction of the grid.
    double source_region_fraction = 0.5;
    double dem_peak_min = 500.0, dem_peak_max = 3000.0;
};

/// Unwrapped components of one synthetic interferogram and how they were drawn.
struct Scene {
    Raster d, s, t;      // phase_rad
    Raster composed;     // phase_rad
    WeightTriple weights;
    bool normalized = false;  // composed by compose_interferogram rather than combine_components
    std::optional<deform::SampledSource> source;
    double incidence_deg = 0.0, heading_deg = 0.0;
    int row0 = 0, col0 = 0;  // window of the full grid the rasters cover
    atmos::CovarianceParams cov;
    double slope_rad_per_km = 0.0;
    atmos::DemKind dem_kind = atmos::DemKind::cone;
    double dem_peak = 0.0;
    std::uint64_t seed = 0;

    /// One-line JSON provenance record.
    std::string record() const;
    bool deforming() const { return source.has_value(); }
};

/// Full-grid scene following `recipe`. Without fixed weights (2-/3-class
/// recipes) a, b, c are drawn on [0, 1] and combined without normalization.
Scene synth_scene(const ClassRecipe& recipe, const GridShape& grid, std::uint64_t seed,
                  const SynthOptions& options = {});

/// Patch-sized scene cut from a `grid`-sized simulation. Deformation windows
/// are centred on the source with up to `stride` pixels of jitter per axis;
/// other windows are placed uniformly.
Scene synth_patch_scene(const ClassRecipe& recipe, const GridShape& grid, int patch, int stride, std::uint64_t seed,
                        const SynthOptions& options = {});

/// Wrapped, quantized copy of a phase raster.
Raster to_gray(const Raster& phase);

/// Top-left corner of a patch.
struct PatchPosition {
    int row = 0, col = 0;
    bool snapped = false;  // added by the edge-snap rule rather than the regular grid
    bool operator==(const PatchPosition& o) const { return row == o.row && col == o.col; }
};

/// Regular grid of top-left positions at multiples of `stride`, plus a final
/// row and column snapped to the far edges when the grid misses them.
std::vector<PatchPosition> patch_positions(int width, int height, int patch, int stride);

struct Patch {
    Raster raster;
    PatchPosition position;
};

std::vector<Patch> extract_patches(const Raster& img, int patch, int stride);

enum class AugmentKind { flip_h, flip_v, rot90, rot180, rot270, shift };

struct Augment {
    AugmentKind kind = AugmentKind::flip_h;
    int dx = 0, dy = 0;  // shift only; |dx|, |dy| < side / 4
};

/// Label-preserving transform of a square patch; shifts fill the exposed margin by reflection.
Raster augment_patch(const Raster& patch, const Augment& op);

/// Patches with labels, stored as contiguous gray levels.
struct LabeledDataset {
    ClassScheme scheme;
    int side = 0;
    bool zero_centered = true;
    std::vector<std::uint8_t> pixels;  // count * side * side
    std::vector<int> labels;
    std::vector<std::string> records;  // one provenance line per patch

    std::size_t count() const { return labels.size(); }
    std::span<const std::uint8_t> patch(std::size_t i) const;
    void add(const Raster& gray, int label, std::string record);
    void append(const LabeledDataset& other);
    std::vector<std::size_t> class_counts() const;
};

struct BuildOptions {
    GridShape grid{100, 100, 555.0};
    int patch = 64;
    int stride = 8;
    bool zero_centered = true;
    SynthOptions synth{};
    int jobs = 1;
};

/// n_per_class wrapped, quantized patches per class. Deformation patches are
/// cropped around the source with up to one stride of jitter; other patches at
/// a random position. Deterministic in `seed` and independent of `jobs`.
LabeledDataset build_dataset(const ClassScheme& scheme, int n_per_class, std::uint64_t seed,
                             const BuildOptions& options = {});

/// Packed tensor: header, contiguous u8 patches, u32 labels.
void write_packed(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset read_packed(const std::filesystem::path& path);

/// JSON-lines manifest: one header line, then one record per patch.
std::string manifest_text(const LabeledDataset& data, std::uint64_t seed);

} // namespace insarforge::dataset
