#include "insarforge/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "insarforge/error.hpp"
#include "insarforge/io.hpp"

namespace insarforge::dataset {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr char kPackedMagic[4] = {'I', 'P', 'A', 'T'};
constexpr std::uint16_t kPackedVersion = 1;
constexpr std::size_t kSchemeNameBytes = 32;
constexpr std::size_t kPackedHeader = 4 + 2 + 2 + 4 + 4 + 4 + kSchemeNameBytes;
constexpr int kMaxDeformationDraws = 500;

struct Window {
    int row0, col0, height, width;
};

Raster zeros_like(const GridShape& g) { return Raster(g, Unit::phase_rad); }

GridShape window_grid(const GridShape& g, const Window& w) { return {w.width, w.height, g.spacing}; }

/// Renders a full-grid source on a sub-window by moving the source into window coordinates.
Raster render_window(const deform::SampledSource& src, const deform::ElasticMedium& medium, const GridShape& grid,
                     const Window& w) {
    const double de = -w.col0 * grid.spacing;
    const double dn = -(grid.height - w.height - w.row0) * grid.spacing;
    return deform::render_deformation(deform::translate(src.source, de, dn), medium, src.geometry,
                                      window_grid(grid, w));
}

double peak_to_peak(const Raster& r) { return r.max() - r.min(); }

std::string weight_label(const WeightTriple& w) {
    auto f = [](double v) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };
    return "(" + f(w.alpha) + "," + f(w.beta) + "," + f(w.gamma) + ")";
}

std::string_view variant_name(ThreeClassVariant v) {
    switch (v) {
    case ThreeClassVariant::D_S_T: return "D_S_T";
    case ThreeClassVariant::DS_S_T: return "DS_S_T";
    case ThreeClassVariant::DT_S_T: return "DT_S_T";
    case ThreeClassVariant::DST_S_T: return "DST_S_T";
    case ThreeClassVariant::DST_ST_T: return "DST_ST_T";
    }
    return "DST_ST_T";
}

ClassRecipe recipe(bool d, bool s, bool t) {
    ClassRecipe r;
    r.has_d = d;
    r.has_s = s;
    r.has_t = t;
    for (auto [on, tag] : {std::pair{d, "D"}, std::pair{s, "S"}, std::pair{t, "T"}}) {
        if (!on) continue;
        if (!r.name.empty()) r.name += "+";
        r.name += tag;
    }
    return r;
}

Scene draw_scene(const ClassRecipe& recipe, const GridShape& grid, int patch, int stride, std::uint64_t seed,
                 const SynthOptions& opt) {
    grid.validate();
    const bool full = patch <= 0;
    if (!full && (patch > grid.width || patch > grid.height))
        throw DataError("patch size " + std::to_string(patch) + " exceeds the grid");
    if (opt.source_kinds.empty()) throw UsageError("no deformation source kinds enabled");
    Rng rng(seed);
    Scene scene;
    scene.seed = seed;
    scene.normalized = recipe.weights.has_value();

    auto draw_weights = [&] {
        if (recipe.weights) return *recipe.weights;
        WeightTriple w;
        w.alpha = recipe.has_d ? 1.0 - rng.uniform() : 0.0;
        w.beta = recipe.has_s ? 1.0 - rng.uniform() : 0.0;
        w.gamma = recipe.has_t ? 1.0 - rng.uniform() : 0.0;
        return w;
    };

    Window win{0, 0, grid.height, grid.width};
    if (recipe.has_d && (!recipe.weights || recipe.weights->alpha > 0.0)) {
        bool found = false;
        for (int attempt = 0; attempt < kMaxDeformationDraws && !found; ++attempt) {
            const WeightTriple w = draw_weights();
            Rng sub(derive_seed(seed, 1000 + attempt));
            const auto kind = opt.source_kinds[sub.below(opt.source_kinds.size())];
            const auto region = deform::SourceRegion::central(grid, opt.source_region_fraction);
            auto src = deform::sample_source(sub.next_u64(), kind, grid, region);
            if (!full) {
                const auto [x, y] = deform::epicenter(src.source);
                const int col = static_cast<int>(std::lround(x / grid.spacing));
                const int row = grid.height - 1 - static_cast<int>(std::lround(y / grid.spacing));
                const int dr = static_cast<int>(sub.below(2 * stride + 1)) - stride;
                const int dc = static_cast<int>(sub.below(2 * stride + 1)) - stride;
                win = {std::clamp(row - patch / 2 + dr, 0, grid.height - patch),
                       std::clamp(col - patch / 2 + dc, 0, grid.width - patch), patch, patch};
            }
            Raster d = render_window(src, opt.medium, grid, win);
            const double weight = scene.normalized ? w.alpha / w.sum() : w.alpha;
            if (weight * peak_to_peak(d) < kTwoPi * opt.min_fringes) continue;
            scene.d = std::move(d);
            scene.weights = w;
            scene.incidence_deg = src.geometry.incidence_deg();
            scene.heading_deg = src.geometry.heading_deg();
            scene.source = std::move(src);
            found = true;
        }
        if (!found)
            throw DataError("no deformation source reached " + std::to_string(opt.min_fringes) + " fringe(s) after " +
                            std::to_string(kMaxDeformationDraws) + " draws");
    } else {
        scene.weights = draw_weights();
        scene.incidence_deg = rng.uniform(0.0, 45.0);
        scene.heading_deg = rng.uniform(0.0, 360.0);
        if (!full) {
            win = {static_cast<int>(rng.below(grid.height - patch + 1)),
                   static_cast<int>(rng.below(grid.width - patch + 1)), patch, patch};
        }
    }
    scene.row0 = win.row0;
    scene.col0 = win.col0;
    const GridShape wg = window_grid(grid, win);
    if (!scene.source) scene.d = zeros_like(wg);

    const LosGeometry geom(scene.incidence_deg, scene.heading_deg, opt.wavelength_m);
    if (recipe.has_s && scene.weights.beta > 0.0) {
        Rng srng(derive_seed(seed, 1));
        scene.dem_kind = srng.coin() ? atmos::DemKind::cone : atmos::DemKind::shield;
        scene.dem_peak = srng.uniform(opt.dem_peak_min, opt.dem_peak_max);
        scene.slope_rad_per_km = atmos::sample_slope(srng);
        atmos::StratifiedModel model;
        model.slope_rad_per_km = scene.slope_rad_per_km;
        model.dem = atmos::synth_dem(scene.dem_kind, scene.dem_peak, grid, srng.next_u64());
        scene.s = atmos::synth_stratified(model, geom).crop(win.row0, win.col0, win.height, win.width);
    } else {
        scene.s = zeros_like(wg);
    }
    if (recipe.has_t && scene.weights.gamma > 0.0) {
        Rng trng(derive_seed(seed, 2));
        scene.cov = atmos::sample_cov_params(trng);
        scene.t = atmos::synth_turbulent(scene.cov, grid, trng.next_u64(), opt.wavelength_m)
                      .crop(win.row0, win.col0, win.height, win.width);
    } else {
        scene.t = zeros_like(wg);
    }
    scene.composed = scene.normalized ? compose_interferogram(scene.d, scene.s, scene.t, scene.weights)
                                      : combine_components(scene.d, scene.s, scene.t, scene.weights);
    return scene;
}

} // namespace

WeightTriple WeightTriple::normalized() const {
    const double s = sum();
    if (!(s > 0.0)) throw UsageError("weight triple must not be all zero");
    return {alpha / s, beta / s, gamma / s};
}

Raster compose_interferogram(const Raster& d, const Raster& s, const Raster& t, const WeightTriple& w) {
    return combine_components(d, s, t, w.normalized());
}

Raster combine_components(const Raster& d, const Raster& s, const Raster& t, const WeightTriple& w) {
    for (const Raster* r : {&d, &s, &t}) require_unit(*r, Unit::phase_rad, "compose_interferogram");
    require_same_grid(d, s, "compose_interferogram");
    require_same_grid(d, t, "compose_interferogram");
    if (!(w.alpha >= 0 && w.beta >= 0 && w.gamma >= 0)) throw UsageError("weights must be non-negative");
    if (!(w.sum() > 0.0)) throw UsageError("weight triple must not be all zero");
    Raster out(d.shape(), Unit::phase_rad);
    auto dv = d.values(), sv = s.values(), tv = t.values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = w.alpha * dv[i] + w.beta * sv[i] + w.gamma * tv[i];
    return out;
}

const std::vector<WeightTriple>& enumerate_weight_classes() {
    static const std::vector<WeightTriple> classes = [] {
        std::vector<std::array<int, 3>> on_grid, off_grid;
        for (int a = 0; a <= 4; ++a)
            for (int b = 0; b <= 4; ++b)
                for (int c = 0; c <= 4; ++c) {
                    if (a + b + c == 0 || std::gcd(std::gcd(a, b), c) != 1) continue;
                    const int s = a + b + c;
                    if (4 % s == 0) {
                        const int k = 4 / s;
                        on_grid.push_back({a * k, b * k, c * k});
                    } else {
                        const int k = 4 / std::max({a, b, c});
                        off_grid.push_back({a * k, b * k, c * k});
                    }
                }
        std::sort(on_grid.begin(), on_grid.end());
        std::sort(off_grid.begin(), off_grid.end());
        std::vector<WeightTriple> out;
        for (const auto* group : {&on_grid, &off_grid})
            for (const auto& q : *group) out.push_back({q[0] / 4.0, q[1] / 4.0, q[2] / 4.0});
        return out;
    }();
    return classes;
}

int weight_class_of(const WeightTriple& w) {
    const WeightTriple n = w.normalized();
    const auto& classes = enumerate_weight_classes();
    for (int i = 0; i < static_cast<int>(classes.size()); ++i) {
        const WeightTriple c = classes[i].normalized();
        if (std::abs(c.alpha - n.alpha) < 1e-9 && std::abs(c.beta - n.beta) < 1e-9 && std::abs(c.gamma - n.gamma) < 1e-9)
            return i;
    }
    throw DataError("weights " + weight_label(w) + " are not on the class grid");
}

std::string ClassScheme::name() const {
    switch (kind) {
    case SchemeKind::two_class: return "two_class";
    case SchemeKind::three_class: return "three_class:" + std::string(variant_name(variant));
    case SchemeKind::ninetyone_class: return "ninetyone_class";
    }
    return "two_class";
}

bool ClassScheme::is_deformation_class(int c) const {
    const auto& r = classes.at(c);
    if (kind != SchemeKind::ninetyone_class) return r.has_d;
    const auto& w = *r.weights;
    return w.alpha > w.beta && w.alpha > w.gamma;
}

ClassScheme make_scheme(SchemeKind kind, ThreeClassVariant variant) {
    ClassScheme s;
    s.kind = kind;
    s.variant = variant;
    switch (kind) {
    case SchemeKind::two_class:
        s.classes = {recipe(true, true, true), recipe(false, true, true)};
        break;
    case SchemeKind::three_class:
        switch (variant) {
        case ThreeClassVariant::D_S_T: s.classes = {recipe(true, false, false), recipe(false, true, false), recipe(false, false, true)}; break;
        case ThreeClassVariant::DS_S_T: s.classes = {recipe(true, true, false), recipe(false, true, false), recipe(false, false, true)}; break;
        case ThreeClassVariant::DT_S_T: s.classes = {recipe(true, false, true), recipe(false, true, false), recipe(false, false, true)}; break;
        case ThreeClassVariant::DST_S_T: s.classes = {recipe(true, true, true), recipe(false, true, false), recipe(false, false, true)}; break;
        case ThreeClassVariant::DST_ST_T: s.classes = {recipe(true, true, true), recipe(false, true, true), recipe(false, false, true)}; break;
        }
        break;
    case SchemeKind::ninetyone_class:
        for (const auto& w : enumerate_weight_classes()) {
            ClassRecipe r = recipe(w.alpha > 0, w.beta > 0, w.gamma > 0);
            r.name = weight_label(w);
            r.weights = w;
            s.classes.push_back(r);
        }
        break;
    }
    return s;
}

ClassScheme scheme_from_name(std::string_view name) {
    if (name == "two_class") return make_scheme(SchemeKind::two_class);
    if (name == "ninetyone_class") return make_scheme(SchemeKind::ninetyone_class);
    if (name == "three_class") return make_scheme(SchemeKind::three_class);
    if (name.starts_with("three_class:")) {
        const auto v = name.substr(12);
        for (auto variant : {ThreeClassVariant::D_S_T, ThreeClassVariant::DS_S_T, ThreeClassVariant::DT_S_T,
                             ThreeClassVariant::DST_S_T, ThreeClassVariant::DST_ST_T})
            if (variant_name(variant) == v) return make_scheme(SchemeKind::three_class, variant);
    }
    throw UsageError("unknown class scheme '" + std::string(name) + "'");
}

double deformation_probability(const ClassScheme& scheme, std::span<const double> probs) {
    if (static_cast<int>(probs.size()) != scheme.size())
        throw DataError("probability vector has " + std::to_string(probs.size()) + " entries, scheme has " +
                        std::to_string(scheme.size()));
    double p = 0.0;
    for (int c = 0; c < scheme.size(); ++c)
        if (scheme.is_deformation_class(c)) p += probs[c];
    return std::clamp(p, 0.0, 1.0);
}

std::string Scene::record() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["weights"] = {weights.alpha, weights.beta, weights.gamma};
    j["normalized"] = normalized;
    j["incidence_deg"] = incidence_deg;
    j["heading_deg"] = heading_deg;
    j["window"] = {row0, col0, d.height(), d.width()};
    if (source) j["source"] = nlohmann::ordered_json::parse(deform::to_record(source->source));
    if (weights.beta > 0.0)
        j["stratified"] = {{"dem", dem_kind == atmos::DemKind::cone ? "cone" : "shield"},
                           {"peak_m", dem_peak},
                           {"slope_rad_per_km", slope_rad_per_km}};
    if (weights.gamma > 0.0) j["turbulence"] = {{"sigma2_max", cov.sigma2_max}, {"efold_km", cov.efold_km}};
    return j.dump();
}

Scene synth_scene(const ClassRecipe& recipe, const GridShape& grid, std::uint64_t seed, const SynthOptions& options) {
    return draw_scene(recipe, grid, 0, 0, seed, options);
}

Scene synth_patch_scene(const ClassRecipe& recipe, const GridShape& grid, int patch, int stride, std::uint64_t seed,
                        const SynthOptions& options) {
    if (patch < 1 || stride < 0) throw UsageError("patch must be positive and stride non-negative");
    return draw_scene(recipe, grid, patch, stride, seed, options);
}

Raster to_gray(const Raster& phase) { return quantize_grayscale(wrap_phase(phase)); }

std::vector<PatchPosition> patch_positions(int width, int height, int patch, int stride) {
    if (patch < 1 || patch > std::min(width, height))
        throw UsageError("patch size " + std::to_string(patch) + " does not fit a " + std::to_string(width) + "x" +
                         std::to_string(height) + " image");
    if (stride < 1) throw UsageError("stride must be at least 1");
    auto axis = [&](int extent) {
        std::vector<std::pair<int, bool>> out;
        for (int p = 0; p + patch <= extent; p += stride) out.push_back({p, false});
        if (out.back().first != extent - patch) out.push_back({extent - patch, true});
        return out;
    };
    std::vector<PatchPosition> out;
    for (const auto& [r, rs] : axis(height))
        for (const auto& [c, cs] : axis(width)) out.push_back({r, c, rs || cs});
    return out;
}

std::vector<Patch> extract_patches(const Raster& img, int patch, int stride) {
    std::vector<Patch> out;
    for (const auto& p : patch_positions(img.width(), img.height(), patch, stride))
        out.push_back({img.crop(p.row, p.col, patch, patch), p});
    return out;
}

Raster augment_patch(const Raster& patch, const Augment& op) {
    const int n = patch.width();
    if (patch.height() != n) throw DataError("augment_patch expects a square patch");
    Raster out(patch.shape(), patch.unit());
    auto reflect = [n](int i) {
        if (i < 0) return -i - 1;
        if (i >= n) return 2 * n - i - 1;
        return i;
    };
    if (op.kind == AugmentKind::shift && (4 * std::abs(op.dx) >= n || 4 * std::abs(op.dy) >= n))
        throw UsageError("shift must be smaller than a quarter of the patch");
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            switch (op.kind) {
            case AugmentKind::flip_h: out(r, c) = patch(r, n - 1 - c); break;
            case AugmentKind::flip_v: out(r, c) = patch(n - 1 - r, c); break;
            case AugmentKind::rot90: out(r, c) = patch(c, n - 1 - r); break;
            case AugmentKind::rot180: out(r, c) = patch(n - 1 - r, n - 1 - c); break;
            case AugmentKind::rot270: out(r, c) = patch(n - 1 - c, r); break;
            case AugmentKind::shift: out(r, c) = patch(reflect(r - op.dy), reflect(c - op.dx)); break;
            }
        }
    return out;
}

std::span<const std::uint8_t> LabeledDataset::patch(std::size_t i) const {
    const std::size_t n = static_cast<std::size_t>(side) * side;
    return std::span<const std::uint8_t>(pixels).subspan(i * n, n);
}

void LabeledDataset::add(const Raster& gray, int label, std::string record) {
    require_unit(gray, Unit::gray_u8, "dataset patch");
    if (gray.width() != side || gray.height() != side)
        throw DataError("dataset patch must be " + std::to_string(side) + "x" + std::to_string(side));
    if (label < 0 || label >= scheme.size()) throw DataError("label " + std::to_string(label) + " out of range");
    for (double v : gray.values()) pixels.push_back(static_cast<std::uint8_t>(v));
    labels.push_back(label);
    records.push_back(std::move(record));
}

void LabeledDataset::append(const LabeledDataset& other) {
    if (other.side != side || other.scheme.name() != scheme.name())
        throw DataError("cannot merge datasets with different patch sizes or schemes");
    pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    records.insert(records.end(), other.records.begin(), other.records.end());
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
    std::vector<std::size_t> counts(scheme.size(), 0);
    for (int l : labels) ++counts[l];
    return counts;
}

LabeledDataset build_dataset(const ClassScheme& scheme, int n_per_class, std::uint64_t seed, const BuildOptions& opt) {
    if (n_per_class < 2) throw UsageError("n_per_class must be at least 2");
    if (opt.patch > opt.grid.width || opt.patch > opt.grid.height)
        throw DataError("patch size " + std::to_string(opt.patch) + " exceeds the " + std::to_string(opt.grid.width) +
                        "x" + std::to_string(opt.grid.height) + " grid");
    const std::size_t total = static_cast<std::size_t>(scheme.size()) * n_per_class;
    std::vector<Raster> grays(total);
    std::vector<std::string> records(total);
    std::vector<std::exception_ptr> errors(std::max(1, opt.jobs));

    auto work = [&](int worker, int jobs) {
        try {
            for (std::size_t i = worker; i < total; i += jobs) {
                const int label = static_cast<int>(i / n_per_class);
                const Scene s = synth_patch_scene(scheme.classes[label], opt.grid, opt.patch, opt.stride,
                                                  derive_seed(seed, i), opt.synth);
                grays[i] = to_gray(s.composed);
                records[i] = s.record();
            }
        } catch (...) {
            errors[worker] = std::current_exception();
        }
    };
    const int jobs = std::max(1, opt.jobs);
    if (jobs == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < jobs; ++w) threads.emplace_back(work, w, jobs);
        for (auto& t : threads) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    LabeledDataset data;
    data.scheme = scheme;
    data.side = opt.patch;
    data.zero_centered = opt.zero_centered;
    data.pixels.reserve(total * opt.patch * opt.patch);
    for (std::size_t i = 0; i < total; ++i) data.add(grays[i], static_cast<int>(i / n_per_class), std::move(records[i]));
    return data;
}

void write_packed(const std::filesystem::path& path, const LabeledDataset& data) {
    const std::string name = data.scheme.name();
    if (name.size() > kSchemeNameBytes) throw DataError("scheme name too long for the packed header");
    std::vector<std::uint8_t> out(kPackedMagic, kPackedMagic + 4);
    put_u16(out, kPackedVersion);
    put_u16(out, data.zero_centered ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(data.count()));
    put_u32(out, static_cast<std::uint32_t>(data.side));
    put_u32(out, static_cast<std::uint32_t>(data.scheme.size()));
    for (std::size_t i = 0; i < kSchemeNameBytes; ++i) out.push_back(i < name.size() ? name[i] : 0);
    out.insert(out.end(), data.pixels.begin(), data.pixels.end());
    for (int l : data.labels) put_u32(out, static_cast<std::uint32_t>(l));
    write_bytes(path, out);
}

LabeledDataset read_packed(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    const std::span<const std::uint8_t> in(bytes);
    if (in.size() < kPackedHeader || !std::equal(kPackedMagic, kPackedMagic + 4, in.begin()))
        throw DataError(path.string() + ": not a packed patch file");
    if (get_u16(in, 4) != kPackedVersion) throw DataError(path.string() + ": unsupported packed format version");
    LabeledDataset data;
    data.zero_centered = (get_u16(in, 6) & 1) != 0;
    const std::size_t count = get_u32(in, 8);
    data.side = static_cast<int>(get_u32(in, 12));
    const std::uint32_t n_classes = get_u32(in, 16);
    std::string name(reinterpret_cast<const char*>(in.data() + 20), kSchemeNameBytes);
    name = name.substr(0, name.find('\0'));
    data.scheme = scheme_from_name(name);
    if (static_cast<std::uint32_t>(data.scheme.size()) != n_classes)
        throw DataError(path.string() + ": class count does not match the scheme");
    const std::size_t npix = count * data.side * data.side;
    if (in.size() != kPackedHeader + npix + 4 * count) throw DataError(path.string() + ": truncated packed file");
    data.pixels.assign(in.begin() + kPackedHeader, in.begin() + kPackedHeader + npix);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t l = get_u32(in, kPackedHeader + npix + 4 * i);
        if (l >= n_classes) throw DataError(path.string() + ": label out of range");
        data.labels.push_back(static_cast<int>(l));
    }
    data.records.assign(count, "{}");
    return data;
}

std::string manifest_text(const LabeledDataset& data, std::uint64_t seed) {
    nlohmann::ordered_json head;
    head["scheme"] = data.scheme.name();
    head["classes"] = data.scheme.size();
    head["side"] = data.side;
    head["zero_centered"] = data.zero_centered;
    head["count"] = data.count();
    head["seed"] = seed;
    std::string out = head.dump() + "\n";
    for (std::size_t i = 0; i < data.count(); ++i) {
        nlohmann::ordered_json j;
        j["index"] = i;
        j["label"] = data.labels[i];
        j["class"] = data.scheme.classes[data.labels[i]].name;
        j["checksum"] = hex64(fnv1a64(data.patch(i)));
        j["recipe"] = nlohmann::ordered_json::parse(data.records[i]);
        out += j.dump() + "\n";
    }
    return out;
}

} // namespace insarforge::dataset
