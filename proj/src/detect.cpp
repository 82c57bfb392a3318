#include "insarforge/detect.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numbers>
#include <thread>

#include <nlohmann/json.hpp>

#include "insarforge/atmos.hpp"
#include "insarforge/error.hpp"
#include "insarforge/geometry.hpp"
#include "insarforge/rng.hpp"

namespace insarforge::detect {

namespace {

/// Symmetric reflection (edge sample repeated) of an index into [0, n).
int reflect(int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
}

/// Separable convolution; kernel[k] applies to offset k - anchor.
std::vector<double> convolve(const std::vector<double>& in, int w, int h, const std::vector<double>& kernel, int anchor) {
    std::vector<double> tmp(in.size()), out(in.size());
    const int n = static_cast<int>(kernel.size());
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double s = 0;
            for (int k = 0; k < n; ++k) s += kernel[k] * in[static_cast<std::size_t>(r) * w + reflect(c + k - anchor, w)];
            tmp[static_cast<std::size_t>(r) * w + c] = s;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double s = 0;
            for (int k = 0; k < n; ++k) s += kernel[k] * tmp[static_cast<std::size_t>(reflect(r + k - anchor, h)) * w + c];
            out[static_cast<std::size_t>(r) * w + c] = s;
        }
    return out;
}

/// Samples at k - (size - 1) / 2, normalized to unit sum.
std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(size);
    double sum = 0;
    for (int i = 0; i < size; ++i) {
        const double x = i - (size - 1) / 2.0;
        sum += k[i] = std::exp(-x * x / (2 * sigma * sigma));
    }
    for (double& v : k) v /= sum;
    return k;
}

/// Piecewise-linear weights of `x` against sorted node coordinates, constant outside.
void interp_weights(const std::vector<double>& nodes, double x, int& i0, int& i1, double& t) {
    if (x <= nodes.front()) {
        i0 = i1 = 0;
        t = 0;
        return;
    }
    if (x >= nodes.back()) {
        i0 = i1 = static_cast<int>(nodes.size()) - 1;
        t = 0;
        return;
    }
    i1 = static_cast<int>(std::upper_bound(nodes.begin(), nodes.end(), x) - nodes.begin());
    i0 = i1 - 1;
    t = (x - nodes[i0]) / (nodes[i1] - nodes[i0]);
}

Raster gray_of(const Raster& img) {
    if (img.unit() == Unit::gray_u8) return img;
    if (img.unit() == Unit::phase_rad) return dataset::to_gray(img);
    throw DataError("detection needs a phase or gray image, got " + std::string(unit_name(img.unit())));
}

Raster phase_of(const Raster& img) {
    if (img.unit() == Unit::phase_rad) return img;
    Raster out(img.shape(), Unit::phase_rad);
    auto src = img.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] / 255.0 * 2 * std::numbers::pi - std::numbers::pi;
    return out;
}

} // namespace

EdgeResult canny_prefilter(const Raster& gray, const CannyConfig& cfg) {
    const int w = gray.width(), h = gray.height();
    std::vector<double> img(gray.values().begin(), gray.values().end());
    const int radius = static_cast<int>(std::ceil(3 * cfg.sigma));
    const auto smooth = convolve(img, w, h, gaussian_kernel(2 * radius + 1, cfg.sigma), radius);
    auto at = [&](int r, int c) {
        return smooth[static_cast<std::size_t>(std::clamp(r, 0, h - 1)) * w + std::clamp(c, 0, w - 1)];
    };
    std::vector<double> mag(img.size(), 0.0), dir(img.size(), 0.0);
    double max_mag = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double gx = (at(r - 1, c + 1) + 2 * at(r, c + 1) + at(r + 1, c + 1)) -
                              (at(r - 1, c - 1) + 2 * at(r, c - 1) + at(r + 1, c - 1));
            const double gy = (at(r + 1, c - 1) + 2 * at(r + 1, c) + at(r + 1, c + 1)) -
                              (at(r - 1, c - 1) + 2 * at(r - 1, c) + at(r - 1, c + 1));
            const std::size_t i = static_cast<std::size_t>(r) * w + c;
            mag[i] = std::hypot(gx, gy);
            dir[i] = std::atan2(gy, gx);
            max_mag = std::max(max_mag, mag[i]);
        }

    EdgeResult out;
    out.mask = Raster(gray.shape(), Unit::gray_u8);
    if (max_mag <= 1e-9) return out;

    std::vector<double> nms(img.size(), 0.0);
    auto mag_at = [&](int r, int c) {
        return r < 0 || c < 0 || r >= h || c >= w ? 0.0 : mag[static_cast<std::size_t>(r) * w + c];
    };
    for (int r = 1; r < h - 1; ++r)
        for (int c = 1; c < w - 1; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * w + c;
            double a = dir[i] * 180.0 / std::numbers::pi;
            if (a < 0) a += 180.0;
            int dr = 0, dc = 1;
            if (a >= 22.5 && a < 67.5) dr = 1, dc = 1;
            else if (a >= 67.5 && a < 112.5) dr = 1, dc = 0;
            else if (a >= 112.5 && a < 157.5) dr = 1, dc = -1;
            if (mag[i] >= mag_at(r + dr, c + dc) && mag[i] >= mag_at(r - dr, c - dc)) nms[i] = mag[i];
        }

    const double hi = cfg.high * max_mag, lo = cfg.low * max_mag;
    std::vector<std::uint8_t> edge(img.size(), 0);
    std::deque<int> queue;
    for (std::size_t i = 0; i < nms.size(); ++i)
        if (nms[i] >= hi && nms[i] > 0) {
            edge[i] = 1;
            queue.push_back(static_cast<int>(i));
        }
    while (!queue.empty()) {
        const int i = queue.front();
        queue.pop_front();
        const int r = i / w, c = i % w;
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                const int rr = r + dr, cc = c + dc;
                if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
                const std::size_t j = static_cast<std::size_t>(rr) * w + cc;
                if (!edge[j] && nms[j] >= lo && nms[j] > 0) {
                    edge[j] = 1;
                    queue.push_back(static_cast<int>(j));
                }
            }
    }
    std::size_t count = 0;
    auto mask = out.mask.values();
    for (std::size_t i = 0; i < edge.size(); ++i) {
        mask[i] = edge[i];
        count += edge[i];
    }
    out.edge_fraction = static_cast<double>(count) / static_cast<double>(edge.size());
    out.accepted = out.edge_fraction >= cfg.min_edge_fraction;
    return out;
}

ProbabilityMap merge_probabilities(std::span<const PatchProbability> patches, int width, int height, int patch,
                                   const MergeConfig& cfg) {
    if (width < 1 || height < 1) throw UsageError("probability map needs a non-empty image");
    if (cfg.kernel_size < 1 || !(cfg.sigma > 0)) throw UsageError("merge kernel needs positive size and sigma");
    ProbabilityMap out;
    out.map = Raster({width, height, 1.0}, Unit::probability);
    if (patches.empty()) return out;

    std::vector<int> rows, cols;
    for (const auto& p : patches) {
        if (!(p.p >= 0.0 && p.p <= 1.0)) throw DataError("patch probability outside [0, 1]");
        rows.push_back(p.position.row);
        cols.push_back(p.position.col);
    }
    for (auto* v : {&rows, &cols}) {
        std::sort(v->begin(), v->end());
        v->erase(std::unique(v->begin(), v->end()), v->end());
    }
    const double half = (patch - 1) / 2.0;
    std::vector<double> ry, cx;
    for (int r : rows) ry.push_back(r + half);
    for (int c : cols) cx.push_back(c + half);
    std::vector<double> lattice(rows.size() * cols.size(), 0.0);
    for (const auto& p : patches) {
        const std::size_t i = std::lower_bound(rows.begin(), rows.end(), p.position.row) - rows.begin();
        const std::size_t j = std::lower_bound(cols.begin(), cols.end(), p.position.col) - cols.begin();
        double& cell = lattice[i * cols.size() + j];
        cell = std::max(cell, p.p);
    }

    std::vector<double> field(static_cast<std::size_t>(width) * height);
    for (int r = 0; r < height; ++r) {
        int i0, i1;
        double ty;
        interp_weights(ry, r, i0, i1, ty);
        for (int c = 0; c < width; ++c) {
            int j0, j1;
            double tx;
            interp_weights(cx, c, j0, j1, tx);
            auto v = [&](int i, int j) { return lattice[static_cast<std::size_t>(i) * cols.size() + j]; };
            field[static_cast<std::size_t>(r) * width + c] = (1 - ty) * ((1 - tx) * v(i0, j0) + tx * v(i0, j1)) +
                                                             ty * ((1 - tx) * v(i1, j0) + tx * v(i1, j1));
        }
    }
    const auto kernel = gaussian_kernel(cfg.kernel_size, cfg.sigma);
    const auto smooth = convolve(field, width, height, kernel, (cfg.kernel_size - 1) / 2);

    // every output is a convex combination of lattice values
    const auto [lo, hi] = std::minmax_element(lattice.begin(), lattice.end());
    auto dst = out.map.values();
    for (std::size_t i = 0; i < smooth.size(); ++i) dst[i] = std::clamp(smooth[i], *lo, *hi);
    out.p_max = out.map.max();
    // locate within the box of patch centres; outside it the map only repeats the outermost centres
    const int r0 = static_cast<int>(std::floor(ry.front())), r1 = static_cast<int>(std::ceil(ry.back()));
    const int c0 = static_cast<int>(std::floor(cx.front())), c1 = static_cast<int>(std::ceil(cx.back()));
    double best = -1;
    for (int r = std::max(0, r0); r <= std::min(height - 1, r1); ++r)
        for (int c = std::max(0, c0); c <= std::min(width - 1, c1); ++c)
            if (out.map(r, c) > best) {
                best = out.map(r, c);
                out.p_max_row = r;
                out.p_max_col = c;
            }
    for (double level : {0.5, 0.8}) {
        auto c = contours(out.map, level);
        out.contours.insert(out.contours.end(), c.begin(), c.end());
    }
    return out;
}

std::vector<Contour> contours(const Raster& field, double level) {
    const int w = field.width(), h = field.height();
    std::vector<Contour> out;
    if (w < 2 || h < 2) return out;
    // edge ids: horizontal edge right of (r, c) -> 2 * idx, vertical edge below (r, c) -> 2 * idx + 1
    auto idx = [&](int r, int c) { return static_cast<long>(r) * w + c; };
    std::map<long, std::array<double, 2>> points;
    std::vector<std::array<long, 2>> segments;
    auto cut = [&](int r0, int c0, int r1, int c1) {
        const double a = field(r0, c0), b = field(r1, c1);
        const double t = (level - a) / (b - a);
        const long id = r0 == r1 ? 2 * idx(r0, c0) : 2 * idx(r0, c0) + 1;
        points.try_emplace(id, std::array<double, 2>{c0 + t * (c1 - c0), r0 + t * (r1 - r0)});
        return id;
    };
    for (int r = 0; r + 1 < h; ++r)
        for (int c = 0; c + 1 < w; ++c) {
            const bool tl = field(r, c) > level, tr = field(r, c + 1) > level;
            const bool br = field(r + 1, c + 1) > level, bl = field(r + 1, c) > level;
            std::vector<long> cuts;  // order: top, right, bottom, left
            std::array<long, 4> id{-1, -1, -1, -1};
            if (tl != tr) id[0] = cut(r, c, r, c + 1);
            if (tr != br) id[1] = cut(r, c + 1, r + 1, c + 1);
            if (bl != br) id[2] = cut(r + 1, c, r + 1, c + 1);
            if (tl != bl) id[3] = cut(r, c, r + 1, c);
            for (long e : id)
                if (e >= 0) cuts.push_back(e);
            if (cuts.size() == 2) {
                segments.push_back({cuts[0], cuts[1]});
            } else if (cuts.size() == 4) {
                const bool center = (field(r, c) + field(r, c + 1) + field(r + 1, c) + field(r + 1, c + 1)) / 4 > level;
                // isolate the corners that disagree with the center
                if (center == tl) {
                    segments.push_back({id[0], id[1]});
                    segments.push_back({id[2], id[3]});
                } else {
                    segments.push_back({id[3], id[0]});
                    segments.push_back({id[1], id[2]});
                }
            }
        }

    std::map<long, std::vector<std::size_t>> at;
    for (std::size_t s = 0; s < segments.size(); ++s)
        for (long e : segments[s]) at[e].push_back(s);
    std::vector<bool> used(segments.size(), false);
    auto trace = [&](std::size_t s0, long start) {
        Contour ct;
        ct.level = level;
        ct.points.push_back(points[start]);
        long cur = start;
        std::size_t s = s0;
        while (true) {
            used[s] = true;
            const long next = segments[s][0] == cur ? segments[s][1] : segments[s][0];
            ct.points.push_back(points[next]);
            cur = next;
            std::size_t following = segments.size();
            for (std::size_t t : at[cur])
                if (!used[t]) following = t;
            if (following == segments.size()) break;
            s = following;
        }
        ct.closed = cur == start && ct.points.size() > 2;
        out.push_back(std::move(ct));
    };
    for (const auto& [e, segs] : at)
        if (segs.size() == 1 && !used[segs[0]]) trace(segs[0], e);
    for (std::size_t s = 0; s < segments.size(); ++s)
        if (!used[s]) trace(s, segments[s][0]);
    return out;
}

DetectionResult detect(const Raster& img, const cnn::CnnModel& model, const dataset::ClassScheme& scheme,
                       const DetectConfig& cfg) {
    if (model.input_side != cfg.patch)
        throw DataError("model input side " + std::to_string(model.input_side) + " differs from patch size " +
                        std::to_string(cfg.patch));
    if (model.n_classes != scheme.size())
        throw DataError("model has " + std::to_string(model.n_classes) + " classes, scheme '" + scheme.name() +
                        "' has " + std::to_string(scheme.size()));
    const Raster gray = gray_of(img);
    const auto patches = dataset::extract_patches(gray, cfg.patch, cfg.stride);

    DetectionResult res;
    res.patches.resize(patches.size());
    auto work = [&](std::size_t first, std::size_t step) {
        cnn::Predictor predict(model);
        for (std::size_t i = first; i < patches.size(); i += step) {
            PatchRecord& rec = res.patches[i];
            rec.position = patches[i].position;
            const auto edges = canny_prefilter(patches[i].raster, cfg.canny);
            rec.edge_fraction = edges.edge_fraction;
            if (!edges.accepted) continue;
            rec.tested = true;
            rec.probs = predict(patches[i].raster);
            rec.p_deformation = dataset::deformation_probability(scheme, rec.probs);
        }
    };
    const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(patches.size())));
    if (jobs == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < jobs; ++t) threads.emplace_back(work, t, jobs);
        for (auto& t : threads) t.join();
    }

    std::vector<PatchProbability> probs;
    for (const auto& rec : res.patches) probs.push_back({rec.position, rec.p_deformation});
    res.probability_map = merge_probabilities(probs, gray.width(), gray.height(), cfg.patch, cfg.merge);
    res.is_positive = res.probability_map.p_max > cfg.threshold;

    if (scheme.kind == dataset::SchemeKind::ninetyone_class) {
        const PatchRecord* best = nullptr;
        for (const auto& rec : res.patches)
            if (rec.tested && (!best || rec.p_deformation > best->p_deformation)) best = &rec;
        if (best) res.weights = estimate_weights(best->probs);
    }
    return res;
}

dataset::WeightTriple estimate_weights(std::span<const double> probs) {
    const auto& classes = dataset::enumerate_weight_classes();
    if (probs.size() != classes.size())
        throw DataError("weight estimation needs " + std::to_string(classes.size()) + " probabilities, got " +
                        std::to_string(probs.size()));
    double sum = 0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw DataError("negative or non-finite class probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw DataError("class probabilities sum to " + std::to_string(sum) + ", not 1");
    dataset::WeightTriple w{0, 0, 0};
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const auto n = classes[c].normalized();
        w.alpha += probs[c] * n.alpha;
        w.beta += probs[c] * n.beta;
        w.gamma += probs[c] * n.gamma;
    }
    return w;
}

double turbulence_weight(double sigma2_max, double m, double r) {
    if (!(r > 0)) throw UsageError("turbulence range must be positive");
    return std::clamp((sigma2_max - m) / r, 0.0, 1.0);
}

int class_for_turbulence_weight(double gamma) {
    const auto& classes = dataset::enumerate_weight_classes();
    int best = -1;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        if (classes[c].alpha != 0.0) continue;
        const auto n = classes[c].normalized();
        const double d = (1 - gamma - n.beta) * (1 - gamma - n.beta) + (gamma - n.gamma) * (gamma - n.gamma);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

dataset::LabeledDataset select_retrain_patches(std::span<const RetrainItem> items, const dataset::ClassScheme& scheme,
                                               const RetrainOptions& opts) {
    using dataset::SchemeKind;
    if (scheme.kind == SchemeKind::three_class && scheme.variant != dataset::ThreeClassVariant::DST_ST_T)
        throw UsageError("three-class retraining supports the DST_ST_T variant only");
    dataset::LabeledDataset out;
    out.scheme = scheme;
    out.side = opts.patch;
    out.zero_centered = opts.zero_centered;

    const double threshold = scheme.kind == SchemeKind::three_class ? 1.0 / 3.0 : 0.5;
    const int deformation_label =
        scheme.kind == SchemeKind::ninetyone_class ? dataset::weight_class_of({1, 0, 0}) : 0;
    std::uint64_t synthetic = 0;

    for (std::size_t item_index = 0; item_index < items.size(); ++item_index) {
        const RetrainItem& item = items[item_index];
        const bool positive = item.result.is_positive;
        if (!(item.deforming || positive)) continue;  // true negatives are not retrained on
        const Raster gray = gray_of(item.image);
        const Raster phase = phase_of(item.image);
        const int w = gray.width(), h = gray.height();
        std::vector<dataset::PatchPosition> tested_positions;
        for (const auto& rec : item.result.patches) tested_positions.push_back(rec.position);

        auto shifted = [&](const dataset::PatchPosition& p) -> std::optional<dataset::PatchPosition> {
            std::vector<int> steps{std::max(1, opts.stride / 2)};
            for (int d = 1; d < std::max(2, opts.stride); ++d)
                if (d != steps.front()) steps.push_back(d);
            for (int d : steps)
                for (auto [dr, dc] : {std::pair{d, d}, std::pair{-d, -d}, std::pair{d, -d}, std::pair{-d, d}}) {
                    dataset::PatchPosition q{std::clamp(p.row + dr, 0, h - opts.patch),
                                             std::clamp(p.col + dc, 0, w - opts.patch), false};
                    if (std::find(tested_positions.begin(), tested_positions.end(), q) == tested_positions.end())
                        return q;
                }
            return std::nullopt;
        };
        auto emit = [&](const PatchRecord& rec, int label, const char* reason) {
            const auto q = shifted(rec.position);
            if (!q) return;
            nlohmann::ordered_json j;
            j["item"] = item_index;
            j["reason"] = reason;
            j["row"] = q->row;
            j["col"] = q->col;
            out.add(gray.crop(q->row, q->col, opts.patch, opts.patch), label, j.dump());
        };

        if (item.deforming && !positive) {
            std::vector<const PatchRecord*> chosen;
            if (item.source_pixel) {
                const auto [sr, sc] = *item.source_pixel;
                for (const auto& rec : item.result.patches)
                    if (sr >= rec.position.row && sr < rec.position.row + opts.patch && sc >= rec.position.col &&
                        sc < rec.position.col + opts.patch)
                        chosen.push_back(&rec);
            }
            if (chosen.empty()) {
                const PatchRecord* best = nullptr;
                for (const auto& rec : item.result.patches)
                    if (!best || rec.p_deformation > best->p_deformation) best = &rec;
                if (best) chosen.push_back(best);
            }
            for (const auto* rec : chosen) emit(*rec, deformation_label, "false_negative");
            continue;
        }

        for (const auto& rec : item.result.patches) {
            if (!rec.tested) continue;
            if (item.deforming) {
                bool take;
                if (scheme.kind == SchemeKind::ninetyone_class) {
                    const auto wt = estimate_weights(rec.probs);
                    take = wt.alpha > wt.beta && wt.alpha > wt.gamma;
                } else {
                    take = rec.probs[0] > threshold;
                }
                if (take) emit(rec, deformation_label, "true_positive");
                continue;
            }
            // false positive interferogram
            if (scheme.kind == SchemeKind::ninetyone_class) {
                const auto q = shifted(rec.position);
                if (!q) continue;
                const auto cov = atmos::estimate_cov_params(phase.crop(q->row, q->col, opts.patch, opts.patch),
                                                            opts.wavelength_m);
                emit(rec, class_for_turbulence_weight(turbulence_weight(cov.sigma2_max)), "false_positive");
                continue;
            }
            if (!(rec.probs[1] > threshold)) continue;
            emit(rec, 1, "false_positive");
            if (scheme.kind == SchemeKind::three_class) {
                const auto q = shifted(rec.position);
                if (!q) continue;
                const auto cov = atmos::estimate_cov_params(phase.crop(q->row, q->col, opts.patch, opts.patch),
                                                            opts.wavelength_m);
                if (!(cov.sigma2_max > 0) || !cov.efold_defined) continue;
                const GridShape g{opts.patch, opts.patch, gray.spacing()};
                const auto t = atmos::synth_turbulent(cov, g, derive_seed(opts.seed, synthetic++), opts.wavelength_m);
                nlohmann::ordered_json j;
                j["item"] = item_index;
                j["reason"] = "synthetic_turbulence";
                j["sigma2_max"] = cov.sigma2_max;
                j["efold_km"] = cov.efold_km;
                out.add(dataset::to_gray(t), 2, j.dump());
            }
        }
    }
    return out;
}

} // namespace insarforge::detect
