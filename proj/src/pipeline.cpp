#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

#include "insarforge/error.hpp"
#include "insarforge/igrd.hpp"
#include "insarforge/io.hpp"
#include "insarforge/png.hpp"
#include "insarforge/rng.hpp"
#include "insarforge/workflow.hpp"

namespace insarforge::workflow {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::array kStages{Stage::synth, Stage::dataset, Stage::train, Stage::detect,
                             Stage::retrain, Stage::correct, Stage::evaluate};

void plot(png::Image& img, int row, int col, png::Rgb color) {
    if (row >= 0 && row < img.height && col >= 0 && col < img.width) img.at(row, col) = color;
}

void draw_segment(png::Image& img, std::array<double, 2> a, std::array<double, 2> b, png::Rgb color) {
    const double len = std::hypot(b[0] - a[0], b[1] - a[1]);
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 4)));
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        plot(img, static_cast<int>(std::lround(a[1] + t * (b[1] - a[1]))),
             static_cast<int>(std::lround(a[0] + t * (b[0] - a[0]))), color);
    }
}

std::vector<fs::path> igrd_files(const fs::path& dir) {
    if (fs::is_regular_file(dir)) return {dir};
    if (!fs::is_directory(dir)) throw DataError("input not found: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".igrd") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

ordered_json detection_json(const std::string& name, const detect::DetectionResult& r, const dataset::ClassScheme& scheme) {
    const auto& pm = r.probability_map;
    ordered_json j;
    j["name"] = name;
    j["scheme"] = scheme.name();
    j["p_max"] = pm.p_max;
    j["p_max_row"] = pm.p_max_row;
    j["p_max_col"] = pm.p_max_col;
    j["positive"] = r.is_positive;
    if (r.weights) j["weights"] = {r.weights->alpha, r.weights->beta, r.weights->gamma};
    ordered_json patches = ordered_json::array();
    for (const auto& p : r.patches) {
        ordered_json pj = {{"row", p.position.row},
                           {"col", p.position.col},
                           {"tested", p.tested},
                           {"edge_fraction", p.edge_fraction},
                           {"p_deformation", p.p_deformation}};
        if (p.tested) pj["probs"] = p.probs;
        patches.push_back(std::move(pj));
    }
    j["patches"] = std::move(patches);
    ordered_json cs = ordered_json::array();
    for (const auto& c : pm.contours) {
        ordered_json pts = ordered_json::array();
        for (const auto& p : c.points) pts.push_back({p[0], p[1]});
        cs.push_back({{"level", c.level}, {"closed", c.closed}, {"points", std::move(pts)}});
    }
    j["contours"] = std::move(cs);
    return j;
}

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

void write_roc_png(const fs::path& path, const std::vector<Evaluation>& evals) {
    constexpr int n = 256, margin = 8;
    png::Image img{n, n, std::vector<png::Rgb>(static_cast<std::size_t>(n) * n, png::Rgb{255, 255, 255})};
    auto to_px = [](double fpr, double tpr) -> std::array<double, 2> {
        return {margin + fpr * (n - 1 - 2 * margin), n - 1 - margin - tpr * (n - 1 - 2 * margin)};
    };
    draw_segment(img, to_px(0, 0), to_px(1, 1), {190, 190, 190});
    draw_segment(img, to_px(0, 0), to_px(1, 0), {0, 0, 0});
    draw_segment(img, to_px(0, 0), to_px(0, 1), {0, 0, 0});
    const std::array<png::Rgb, 3> colors{png::Rgb{200, 30, 30}, png::Rgb{30, 30, 200}, png::Rgb{30, 150, 30}};
    std::size_t k = 0;
    for (const auto& e : evals) {
        if (!e.roc) continue;
        const auto& pts = e.roc->points;
        for (std::size_t i = 1; i < pts.size(); ++i)
            draw_segment(img, to_px(pts[i - 1].fpr, pts[i - 1].tpr), to_px(pts[i].fpr, pts[i].tpr),
                         colors[k % colors.size()]);
        ++k;
    }
    png::write(path, img);
}

std::string stage_dir(Stage s) { return s == Stage::train ? "model" : std::string(stage_name(s)); }

ordered_json stage_seeds(const ExperimentConfig& cfg, Stage s) {
    auto seed = [&](std::uint64_t i) { return hex64(derive_seed(cfg.seed, i)); };
    switch (s) {
    case Stage::synth: return {{"scenes", seed(1)}};
    case Stage::dataset: return {{"dataset", seed(2)}};
    case Stage::train: return {{"train", seed(3)}, {"init", seed(4)}};
    case Stage::retrain: return {{"select", seed(5)}, {"pool", seed(6)}, {"train", seed(7)}};
    default: return ordered_json::object();
    }
}

fs::path require_input(Stage stage, const fs::path& path) {
    if (!fs::exists(path))
        throw DataError(std::string(stage_name(stage)) + " stage: missing input " + path.string() +
                        " (run the earlier stages first)");
    return path;
}

std::map<std::string, TruthRow> truth_by_name(std::span<const TruthRow> truth) {
    std::map<std::string, TruthRow> m;
    for (const auto& t : truth) m[t.name] = t;
    return m;
}

std::string history_csv(const cnn::TrainResult& r) {
    std::string text = "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
    auto line = [&](const cnn::EpochStats& e) {
        text += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.train_accuracy) +
                "," + format_double(e.val_loss) + "," + format_double(e.val_accuracy) + "\n";
    };
    line(r.initial);
    for (const auto& e : r.model.history) line(e);
    return text;
}

void run_synth(const ExperimentConfig& cfg, const fs::path& dir) {
    const std::uint64_t seed = derive_seed(cfg.seed, 1);
    const auto recipes =
        scene_recipes(cfg.scenes, seed, cfg.scene_atmosphere, cfg.grid, cfg.synth, cfg.ztd);
    write_scenes(dir, recipes);

    const auto scheme = dataset::make_scheme(dataset::SchemeKind::two_class);
    const auto example = dataset::synth_scene(scheme.classes[0], cfg.grid, derive_seed(seed, 0xe0), cfg.synth);
    const std::pair<const char*, const Raster*> parts[] = {
        {"deformation", &example.d}, {"stratified", &example.s}, {"turbulence", &example.t}, {"composed", &example.composed}};
    for (const auto& [name, raster] : parts) {
        igrd::write(dir / "examples" / (std::string(name) + ".igrd"), *raster);
        png::write(dir / "examples" / (std::string(name) + ".png"), png::phase_colormap(wrap_phase(*raster)));
    }
    write_text(dir / "examples" / "record.json", example.record() + "\n");
}

void run_dataset(const ExperimentConfig& cfg, const fs::path& dir) {
    const std::uint64_t seed = derive_seed(cfg.seed, 2);
    const auto data = dataset::build_dataset(dataset::scheme_from_name(cfg.scheme), cfg.per_class, seed,
                                             cfg.build_options());
    dataset::write_packed(dir / "train.ipat", data);
    write_text(dir / "manifest.jsonl", dataset::manifest_text(data, seed));
}

void run_train(const ExperimentConfig& cfg, const fs::path& out, const fs::path& dir) {
    const auto data = dataset::read_packed(require_input(Stage::train, out / "dataset" / "train.ipat"));
    auto tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, 3);
    tc.jobs = cfg.jobs;
    auto initial = cnn::init_model(data.side, data.scheme.size(), derive_seed(cfg.seed, 4));
    initial.zero_centered = data.zero_centered;
    initial.scheme = data.scheme.name();
    const auto result = cnn::train(initial, data, tc);
    cnn::save_model(dir / "model.icnn", result.model);
    write_text(dir / "history.csv", history_csv(result));
}

void run_detect(const ExperimentConfig& cfg, const fs::path& out, const fs::path& dir) {
    const auto model = cnn::load_model(require_input(Stage::detect, out / "model" / "model.icnn"));
    detect_directory(model, dataset::scheme_from_name(model.scheme),
                     require_input(Stage::detect, out / "synth" / "scenes"), cfg.detect_config(), dir);
}

void run_retrain(const ExperimentConfig& cfg, const fs::path& out, const fs::path& dir) {
    const auto model = cnn::load_model(require_input(Stage::retrain, out / "model" / "model.icnn"));
    const auto scheme = dataset::scheme_from_name(model.scheme);
    const auto truth = read_truth(require_input(Stage::retrain, out / "synth" / "truth.csv"));
    const auto dc = cfg.detect_config();
    std::vector<detect::RetrainItem> items;
    for (const auto& t : truth) {
        detect::RetrainItem item;
        item.image = igrd::read(require_input(Stage::retrain, out / "synth" / "scenes" / (t.name + ".igrd")));
        item.result = detect::detect(item.image, model, scheme, dc);
        item.deforming = t.deforming;
        if (t.row >= 0) item.source_pixel = std::array<int, 2>{t.row, t.col};
        items.push_back(std::move(item));
    }
    detect::RetrainOptions ro;
    ro.patch = model.input_side;
    ro.stride = cfg.stride;
    ro.zero_centered = model.zero_centered;
    ro.wavelength_m = cfg.synth.wavelength_m;
    ro.seed = derive_seed(cfg.seed, 5);
    const auto selected = detect::select_retrain_patches(items, scheme, ro);
    write_text(dir / "selected.jsonl", dataset::manifest_text(selected, ro.seed));

    auto opts = cfg.build_options();
    opts.patch = model.input_side;
    auto pool = dataset::build_dataset(scheme, cfg.retrain_synthetic_per_class, derive_seed(cfg.seed, 6), opts);
    if (selected.count() > 0) pool.append(selected);
    dataset::write_packed(dir / "patches.ipat", pool);

    auto tc = cfg.train;
    tc.max_epochs = cfg.retrain_epochs;
    tc.fine_tune = true;
    tc.final_layer_lr_multiplier = cfg.retrain_lr_multiplier;
    tc.seed = derive_seed(cfg.seed, 7);
    tc.jobs = cfg.jobs;
    const auto result = cnn::train(model, pool, tc);
    cnn::save_model(dir / "model.icnn", result.model);
    write_text(dir / "history.csv", history_csv(result));
    detect_directory(result.model, scheme, out / "synth" / "scenes", dc, dir / "detect");
}

void run_correct(const ExperimentConfig& cfg, const fs::path& out, const fs::path& dir) {
    const auto model = cnn::load_model(require_input(Stage::correct, out / "model" / "model.icnn"));
    const auto scheme = dataset::scheme_from_name(model.scheme);
    const auto results = read_results(require_input(Stage::correct, out / "detect" / "results.csv"));
    const auto truth = truth_by_name(read_truth(require_input(Stage::correct, out / "synth" / "truth.csv")));
    fs::create_directories(dir / "corrected");
    for (const auto& r : results) {
        if (!r.positive) continue;
        const auto t = truth.find(r.name);
        if (t == truth.end()) throw DataError("correct stage: no truth row for " + r.name);
        const auto scene = igrd::read(require_input(Stage::correct, out / "synth" / "scenes" / (r.name + ".igrd")));
        const auto master = igrd::read(require_input(Stage::correct, out / "synth" / "ztd" / (r.name + "_master.igrd")));
        const auto slave = igrd::read(require_input(Stage::correct, out / "synth" / "ztd" / (r.name + "_slave.igrd")));
        const LosGeometry geom(t->second.incidence_deg, t->second.heading_deg, cfg.synth.wavelength_m);
        igrd::write(dir / "corrected" / (r.name + ".igrd"),
                    correct::apply_correction(correct::MaskedRaster::full(scene), master, slave, geom, cfg.inpaint));
    }
    const auto redetected = detect_directory(model, scheme, dir / "corrected", cfg.detect_config(), dir / "detect");
    std::map<std::string, ResultRow> by_name;
    for (const auto& r : redetected) by_name[r.name] = r;
    std::vector<ResultRow> merged;
    for (const auto& r : results) {
        const auto it = by_name.find(r.name);
        merged.push_back(it == by_name.end() ? r : it->second);
    }
    write_text(dir / "results.csv", results_csv(merged));
}

void run_evaluate(const ExperimentConfig& cfg, const fs::path& out, const fs::path& dir) {
    const auto truth = read_truth(require_input(Stage::evaluate, out / "synth" / "truth.csv"));
    const std::pair<const char*, fs::path> sets[] = {{"initial", out / "detect" / "results.csv"},
                                                     {"retrained", out / "retrain" / "detect" / "results.csv"},
                                                     {"corrected", out / "correct" / "results.csv"}};
    std::vector<Evaluation> evals;
    for (const auto& [name, path] : sets) {
        if (std::string_view(name) == "initial") require_input(Stage::evaluate, path);
        if (!fs::exists(path)) continue;
        const auto results = read_results(path);
        evals.push_back(evaluate_results(name, results, truth, cfg.threshold));
    }
    std::string summary = "set,n,tp,fp,fn,tn,ppv,recall,accuracy,auc\n";
    for (const auto& e : evals) {
        const auto& c = e.counts;
        summary += e.set + "," + std::to_string(c.total()) + "," + std::to_string(c.tp) + "," + std::to_string(c.fp) +
                   "," + std::to_string(c.fn) + "," + std::to_string(c.tn) + "," + opt_text(e.ppv) + "," +
                   opt_text(e.recall) + "," + opt_text(e.accuracy) + "," +
                   (e.roc ? format_double(e.roc->auc) : std::string()) + "\n";
        if (e.roc) {
            std::string roc = "fpr,tpr,threshold\n";
            for (const auto& p : e.roc->points)
                roc += format_double(p.fpr) + "," + format_double(p.tpr) + "," + format_double(p.threshold) + "\n";
            write_text(dir / ("roc_" + e.set + ".csv"), roc);
        }
    }
    write_text(dir / "summary.csv", summary);
    write_roc_png(dir / "roc.png", evals);
}

void record_stage(const ExperimentConfig& cfg, Stage stage, const fs::path& out) {
    const fs::path manifest = out / "run_manifest.json";
    ordered_json j;
    if (fs::exists(manifest)) j = ordered_json::parse(read_text(manifest));
    j["config"] = to_ini(cfg);
    std::vector<std::string> files;
    const fs::path root = out / stage_dir(stage);
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), out).generic_string());
    std::sort(files.begin(), files.end());
    ordered_json artifacts = ordered_json::object();
    for (const auto& f : files) artifacts[f] = hex64(file_checksum(out / f));
    ordered_json stages = j.contains("stages") ? j["stages"] : ordered_json::object();
    stages[std::string(stage_name(stage))] = {{"seeds", stage_seeds(cfg, stage)}, {"artifacts", std::move(artifacts)}};
    ordered_json ordered = ordered_json::object();
    for (auto s : kStages) {
        const std::string key(stage_name(s));
        if (stages.contains(key)) ordered[key] = stages[key];
    }
    j["stages"] = std::move(ordered);
    write_text(manifest, j.dump(2) + "\n");
}

void run_one(const ExperimentConfig& cfg, Stage stage) {
    const fs::path out = cfg.out;
    const fs::path final_dir = out / stage_dir(stage);
    const fs::path scratch = out / ("." + stage_dir(stage) + ".partial");
    fs::remove_all(scratch);
    fs::create_directories(scratch);
    try {
        switch (stage) {
        case Stage::synth: run_synth(cfg, scratch); break;
        case Stage::dataset: run_dataset(cfg, scratch); break;
        case Stage::train: run_train(cfg, out, scratch); break;
        case Stage::detect: run_detect(cfg, out, scratch); break;
        case Stage::retrain: run_retrain(cfg, out, scratch); break;
        case Stage::correct: run_correct(cfg, out, scratch); break;
        case Stage::evaluate: run_evaluate(cfg, out, scratch); break;
        case Stage::all: break;
        }
    } catch (...) {
        fs::remove_all(scratch);
        throw;
    }
    fs::remove_all(final_dir);
    fs::rename(scratch, final_dir);
    record_stage(cfg, stage, out);
}

} // namespace

std::vector<ResultRow> detect_directory(const cnn::CnnModel& model, const dataset::ClassScheme& scheme,
                                        const fs::path& input, const detect::DetectConfig& cfg, const fs::path& out) {
    std::vector<ResultRow> rows;
    fs::create_directories(out);
    for (const auto& path : igrd_files(input)) {
        const std::string name = path.stem().string();
        const Raster img = igrd::read(path);
        const auto result = detect::detect(img, model, scheme, cfg);
        const auto& pm = result.probability_map;
        write_text(out / (name + ".json"), detection_json(name, result, scheme).dump() + "\n");
        igrd::write(out / (name + "_prob.igrd"), pm.map);
        write_overlay(out / (name + ".png"), img, pm);
        rows.push_back({name, pm.p_max, pm.p_max_row, pm.p_max_col, result.is_positive});
    }
    write_text(out / "results.csv", results_csv(rows));
    return rows;
}

void write_overlay(const fs::path& path, const Raster& image, const detect::ProbabilityMap& map) {
    png::Image img = image.unit() == Unit::gray_u8 ? png::grayscale(image) : png::phase_colormap(wrap_phase(image));
    for (const auto& c : map.contours) {
        const png::Rgb color = c.level >= 0.8 ? png::Rgb{0, 255, 0} : png::Rgb{0, 100, 0};
        for (std::size_t i = 1; i < c.points.size(); ++i) draw_segment(img, c.points[i - 1], c.points[i], color);
        if (c.closed && c.points.size() > 2) draw_segment(img, c.points.back(), c.points.front(), color);
    }
    for (int d = -3; d <= 3; ++d) {
        plot(img, map.p_max_row + d, map.p_max_col, {255, 255, 255});
        plot(img, map.p_max_row, map.p_max_col + d, {255, 255, 255});
    }
    png::write(path, img);
}

Evaluation evaluate_results(std::string set, std::span<const ResultRow> results, std::span<const TruthRow> truth,
                            double threshold) {
    const auto by_name = truth_by_name(truth);
    std::vector<metrics::Scored> scored;
    bool pos = false, neg = false;
    for (const auto& r : results) {
        const auto it = by_name.find(r.name);
        if (it == by_name.end()) throw DataError("no truth row for result '" + r.name + "'");
        scored.push_back({r.p_max, it->second.deforming});
        (it->second.deforming ? pos : neg) = true;
    }
    Evaluation e;
    e.set = std::move(set);
    e.counts = metrics::confusion(scored, threshold);
    e.ppv = metrics::ppv(e.counts);
    e.recall = metrics::recall(e.counts);
    e.accuracy = metrics::accuracy(e.counts);
    if (pos && neg) e.roc = metrics::roc_curve(scored);
    return e;
}

std::string_view stage_name(Stage s) {
    switch (s) {
    case Stage::synth: return "synth";
    case Stage::dataset: return "dataset";
    case Stage::train: return "train";
    case Stage::detect: return "detect";
    case Stage::retrain: return "retrain";
    case Stage::correct: return "correct";
    case Stage::evaluate: return "evaluate";
    case Stage::all: return "all";
    }
    return "all";
}

Stage stage_from_name(std::string_view name) {
    for (auto s : kStages)
        if (stage_name(s) == name) return s;
    if (name == "all") return Stage::all;
    throw UsageError("unknown stage '" + std::string(name) + "'");
}

void run_stage(const ExperimentConfig& cfg, Stage stage) {
    if (stage == Stage::correct && cfg.scene_atmosphere != Atmosphere::ztd)
        throw UsageError("the correct stage needs ZTD scenes (set atmosphere = ztd under [scenes])");
    if (stage != Stage::all) {
        run_one(cfg, stage);
        return;
    }
    for (auto s : kStages) {
        if (s == Stage::correct && cfg.scene_atmosphere != Atmosphere::ztd) continue;
        run_one(cfg, s);
    }
}

VerifyReport replay_run(const fs::path& manifest, const fs::path& out) {
    if (!fs::exists(manifest)) throw DataError("run manifest not found: " + manifest.string());
    ordered_json j;
    try {
        j = ordered_json::parse(read_text(manifest));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed run manifest: ") + e.what());
    }
    if (!j.contains("config") || !j.contains("stages")) throw DataError("run manifest lacks config or stages");
    auto cfg = parse_ini(j["config"].get<std::string>());
    cfg.out = out.string();
    for (auto s : kStages)
        if (j["stages"].contains(std::string(stage_name(s)))) run_one(cfg, s);
    VerifyReport report;
    for (const auto& [stage, entry] : j["stages"].items())
        for (const auto& [file, sum] : entry["artifacts"].items()) {
            if (!fs::exists(out / file))
                report.missing.push_back(file);
            else if (hex64(file_checksum(out / file)) != sum.get<std::string>())
                report.mismatched.push_back(file);
        }
    return report;
}

std::string manifest_hash(const fs::path& out) {
    const fs::path manifest = out / "run_manifest.json";
    if (!fs::exists(manifest)) throw DataError("no run manifest under " + out.string());
    return hex64(file_checksum(manifest));
}

} // namespace insarforge::workflow
