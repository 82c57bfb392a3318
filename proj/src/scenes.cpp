#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "insarforge/error.hpp"
#include "insarforge/igrd.hpp"
#include "insarforge/io.hpp"
#include "insarforge/rng.hpp"
#include "insarforge/workflow.hpp"

namespace insarforge::workflow {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kMaxDeformationDraws = 200;

double peak_to_peak(const Raster& r) { return r.max() - r.min(); }

std::array<int, 2> pixel_of(const GridShape& grid, double east, double north) {
    const int col = static_cast<int>(std::lround(east / grid.spacing));
    const int row = grid.height - 1 - static_cast<int>(std::lround(north / grid.spacing));
    return {std::clamp(row, 0, grid.height - 1), std::clamp(col, 0, grid.width - 1)};
}

TestScene slope_scene(const SceneRecipe& recipe) {
    const auto scheme = dataset::make_scheme(dataset::SchemeKind::two_class);
    auto s = dataset::synth_scene(scheme.classes[recipe.deforming ? 0 : 1], recipe.grid, recipe.seed, recipe.synth);
    TestScene out;
    out.composed = std::move(s.composed);
    out.d = std::move(s.d);
    out.s = std::move(s.s);
    out.t = std::move(s.t);
    out.incidence_deg = s.incidence_deg;
    out.heading_deg = s.heading_deg;
    out.deforming = recipe.deforming;
    if (s.source) {
        const auto [x, y] = deform::epicenter(s.source->source);
        out.epicenter = pixel_of(recipe.grid, x, y);
    }
    out.record = s.record();
    return out;
}

TestScene ztd_scene(const SceneRecipe& recipe) {
    const GridShape& grid = recipe.grid;
    const auto& opt = recipe.synth;
    TestScene out;
    out.deforming = recipe.deforming;
    ordered_json rec;
    rec["seed"] = recipe.seed;
    Rng rng(recipe.seed);
    if (recipe.deforming) {
        if (opt.source_kinds.empty()) throw UsageError("no deformation source kinds configured");
        const auto region = deform::SourceRegion::central(grid, opt.source_region_fraction);
        bool found = false;
        for (int attempt = 0; attempt < kMaxDeformationDraws && !found; ++attempt) {
            Rng sub(derive_seed(recipe.seed, 1000 + attempt));
            const auto kind = opt.source_kinds[sub.below(opt.source_kinds.size())];
            const auto src = deform::sample_source(sub.next_u64(), kind, grid, region);
            const LosGeometry geom(src.geometry.incidence_deg(), src.geometry.heading_deg(), opt.wavelength_m);
            Raster d = deform::render_deformation(src.source, opt.medium, geom, grid);
            if (peak_to_peak(d) < 2.0 * 3.14159265358979323846 * opt.min_fringes) continue;
            out.d = std::move(d);
            out.incidence_deg = geom.incidence_deg();
            out.heading_deg = geom.heading_deg();
            const auto [x, y] = deform::epicenter(src.source);
            out.epicenter = pixel_of(grid, x, y);
            rec["source"] = ordered_json::parse(deform::to_record(src.source));
            found = true;
        }
        if (!found) throw DataError("scene " + recipe.name + ": no deformation source reached the fringe minimum");
    } else {
        out.incidence_deg = rng.uniform(0.0, 45.0);
        out.heading_deg = rng.uniform(0.0, 360.0);
        out.d = Raster(grid, Unit::phase_rad);
    }
    const LosGeometry geom(out.incidence_deg, out.heading_deg, opt.wavelength_m);

    Rng srng(derive_seed(recipe.seed, 1));
    const auto dem_kind = srng.coin() ? atmos::DemKind::cone : atmos::DemKind::shield;
    const double peak = srng.uniform(opt.dem_peak_min, opt.dem_peak_max);
    const Raster dem = atmos::synth_dem(dem_kind, peak, grid, srng.next_u64());
    auto master_params = recipe.ztd, slave_params = recipe.ztd;
    master_params.sea_level_mm *= 1.0 + 0.01 * srng.uniform(-1.0, 1.0);
    slave_params.sea_level_mm *= 1.0 + 0.01 * srng.uniform(-1.0, 1.0);
    out.ztd_master = atmos::synth_ztd(dem, master_params, derive_seed(recipe.seed, 3));
    out.ztd_slave = atmos::synth_ztd(dem, slave_params, derive_seed(recipe.seed, 4));
    out.s = atmos::stratified_from_ztd(*out.ztd_master, *out.ztd_slave, geom);

    Rng trng(derive_seed(recipe.seed, 2));
    const auto cov = atmos::sample_cov_params(trng);
    out.t = atmos::synth_turbulent(cov, grid, trng.next_u64(), opt.wavelength_m);
    out.composed = dataset::combine_components(out.d, out.s, out.t, {1.0, 1.0, 1.0});

    rec["incidence_deg"] = out.incidence_deg;
    rec["heading_deg"] = out.heading_deg;
    rec["dem"] = {{"kind", dem_kind == atmos::DemKind::cone ? "cone" : "shield"}, {"peak_m", peak}};
    rec["sea_level_mm"] = {master_params.sea_level_mm, slave_params.sea_level_mm};
    rec["turbulence"] = {{"sigma2_max", cov.sigma2_max}, {"efold_km", cov.efold_km}};
    out.record = rec.dump();
    return out;
}

std::string csv_line(std::initializer_list<std::string> cells) {
    std::string s;
    for (const auto& c : cells) s += (s.empty() ? "" : ",") + c;
    return s + "\n";
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::string_view expected_header) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line) || line != expected_header)
        throw DataError("'" + path.string() + "' does not start with header '" + std::string(expected_header) + "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

double to_double(const std::string& s, const fs::path& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("'" + where.string() + "': bad number '" + s + "'");
    }
}

void write_checksums(const fs::path& dir, std::vector<std::string> files) {
    std::sort(files.begin(), files.end());
    std::string text;
    for (const auto& f : files) text += f + " " + hex64(file_checksum(dir / f)) + "\n";
    write_text(dir / "checksums.txt", text);
}

std::vector<std::pair<std::string, std::string>> read_checksums(const fs::path& dir) {
    const fs::path path = dir / "checksums.txt";
    if (!fs::exists(path)) throw DataError("corpus has no checksums.txt: " + dir.string());
    std::istringstream in(read_text(path));
    std::vector<std::pair<std::string, std::string>> out;
    std::string name, sum;
    while (in >> name >> sum) out.emplace_back(name, sum);
    return out;
}

enum class FileState : char { ok, missing, mismatched };

VerifyReport compare_checksums(const fs::path& dir, const std::vector<std::pair<std::string, std::string>>& entries) {
    std::vector<FileState> state(entries.size(), FileState::ok);
    auto work = [&](std::size_t begin, std::size_t step) {
        for (std::size_t i = begin; i < entries.size(); i += step) {
            const fs::path p = dir / entries[i].first;
            if (!fs::exists(p))
                state[i] = FileState::missing;
            else if (hex64(file_checksum(p)) != entries[i].second)
                state[i] = FileState::mismatched;
        }
    };
    const std::size_t jobs = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 8);
    std::vector<std::thread> threads;
    for (std::size_t w = 1; w < jobs; ++w) threads.emplace_back(work, w, jobs);
    work(0, jobs);
    for (auto& t : threads) t.join();
    VerifyReport report;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (state[i] == FileState::missing) report.missing.push_back(entries[i].first);
        if (state[i] == FileState::mismatched) report.mismatched.push_back(entries[i].first);
    }
    return report;
}

std::vector<SceneRecipe> read_recipes(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::vector<SceneRecipe> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(SceneRecipe::from_json(line));
    return out;
}

} // namespace

std::string_view atmosphere_name(Atmosphere a) { return a == Atmosphere::slope ? "slope" : "ztd"; }

Atmosphere atmosphere_from_name(std::string_view name) {
    if (name == "slope") return Atmosphere::slope;
    if (name == "ztd") return Atmosphere::ztd;
    throw UsageError("unknown atmosphere '" + std::string(name) + "' (expected slope or ztd)");
}

std::string SceneRecipe::to_json() const {
    ordered_json j;
    j["name"] = name;
    j["seed"] = seed;
    j["deforming"] = deforming;
    j["atmosphere"] = atmosphere_name(atmosphere);
    j["grid"] = {grid.width, grid.height, grid.spacing};
    ordered_json kinds = ordered_json::array();
    for (auto k : synth.source_kinds) kinds.push_back(deform::kind_name(k));
    j["synth"] = {{"wavelength_m", synth.wavelength_m},
                  {"min_fringes", synth.min_fringes},
                  {"sources", kinds},
                  {"source_region", synth.source_region_fraction},
                  {"dem_peak", {synth.dem_peak_min, synth.dem_peak_max}},
                  {"poisson", synth.medium.poisson},
                  {"shear_modulus", synth.medium.shear_modulus}};
    if (atmosphere == Atmosphere::ztd)
        j["ztd"] = {{"sea_level_mm", ztd.sea_level_mm},
                    {"scale_height_m", ztd.scale_height_m},
                    {"cell_amplitude_mm", ztd.cell_amplitude_mm},
                    {"ramp_mm", ztd.ramp_mm}};
    return j.dump();
}

SceneRecipe SceneRecipe::from_json(std::string_view line) {
    try {
        const auto j = ordered_json::parse(line);
        SceneRecipe r;
        r.name = j.at("name").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.deforming = j.at("deforming").get<bool>();
        r.atmosphere = atmosphere_from_name(j.at("atmosphere").get<std::string>());
        const auto& g = j.at("grid");
        r.grid = {g.at(0).get<int>(), g.at(1).get<int>(), g.at(2).get<double>()};
        const auto& s = j.at("synth");
        r.synth.wavelength_m = s.at("wavelength_m").get<double>();
        r.synth.min_fringes = s.at("min_fringes").get<double>();
        r.synth.source_kinds.clear();
        for (const auto& k : s.at("sources")) r.synth.source_kinds.push_back(deform::kind_from_name(k.get<std::string>()));
        r.synth.source_region_fraction = s.at("source_region").get<double>();
        r.synth.dem_peak_min = s.at("dem_peak").at(0).get<double>();
        r.synth.dem_peak_max = s.at("dem_peak").at(1).get<double>();
        r.synth.medium.poisson = s.at("poisson").get<double>();
        r.synth.medium.shear_modulus = s.at("shear_modulus").get<double>();
        if (j.contains("ztd")) {
            const auto& z = j.at("ztd");
            r.ztd.sea_level_mm = z.at("sea_level_mm").get<double>();
            r.ztd.scale_height_m = z.at("scale_height_m").get<double>();
            r.ztd.cell_amplitude_mm = z.at("cell_amplitude_mm").get<double>();
            r.ztd.ramp_mm = z.at("ramp_mm").get<double>();
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed scene recipe: ") + e.what());
    }
}

TestScene make_scene(const SceneRecipe& recipe) {
    recipe.grid.validate();
    return recipe.atmosphere == Atmosphere::slope ? slope_scene(recipe) : ztd_scene(recipe);
}

std::vector<SceneRecipe> scene_recipes(int n, std::uint64_t seed, Atmosphere atmosphere, const GridShape& grid,
                                       const dataset::SynthOptions& synth, const atmos::ZtdParams& ztd) {
    if (n < 0) throw UsageError("scene count must be non-negative");
    std::vector<SceneRecipe> out;
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%03d", i);
        SceneRecipe r;
        r.name = name;
        r.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        r.deforming = i % 2 == 0;
        r.atmosphere = atmosphere;
        r.grid = grid;
        r.synth = synth;
        r.ztd = ztd;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<std::string> write_scenes(const fs::path& dir, std::span<const SceneRecipe> recipes) {
    std::vector<std::string> written;
    std::string recipes_text;
    std::string truth = csv_line({"name", "deforming", "expected", "row", "col", "incidence_deg", "heading_deg"});
    for (const auto& r : recipes) {
        const TestScene s = make_scene(r);
        const std::string scene = "scenes/" + r.name + ".igrd";
        igrd::write(dir / scene, s.composed);
        written.push_back(scene);
        for (const auto& [tag, part] : {std::pair{"d", &s.d}, std::pair{"s", &s.s}, std::pair{"t", &s.t}}) {
            const std::string path = "components/" + r.name + "_" + tag + ".igrd";
            igrd::write(dir / path, *part);
            written.push_back(path);
        }
        if (s.ztd_master) {
            const std::string m = "ztd/" + r.name + "_master.igrd", v = "ztd/" + r.name + "_slave.igrd";
            igrd::write(dir / m, *s.ztd_master);
            igrd::write(dir / v, *s.ztd_slave);
            written.push_back(m);
            written.push_back(v);
        }
        recipes_text += r.to_json() + "\n";
        truth += csv_line({r.name, s.deforming ? "1" : "0", s.deforming ? "positive" : "negative", std::to_string(s.epicenter ? (*s.epicenter)[0] : -1),
                           std::to_string(s.epicenter ? (*s.epicenter)[1] : -1), format_double(s.incidence_deg),
                           format_double(s.heading_deg)});
    }
    write_text(dir / "recipes.jsonl", recipes_text);
    write_text(dir / "truth.csv", truth);
    written.push_back("recipes.jsonl");
    written.push_back("truth.csv");
    return written;
}

std::vector<TruthRow> read_truth(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("truth file not found: " + path.string());
    std::vector<TruthRow> out;
    for (const auto& cells : read_csv(path, "name,deforming,expected,row,col,incidence_deg,heading_deg")) {
        if (cells.size() != 7) throw DataError("'" + path.string() + "': expected 7 columns");
        TruthRow t;
        t.name = cells[0];
        t.deforming = cells[1] == "1";
        t.row = static_cast<int>(to_double(cells[3], path));
        t.col = static_cast<int>(to_double(cells[4], path));
        t.incidence_deg = to_double(cells[5], path);
        t.heading_deg = to_double(cells[6], path);
        out.push_back(std::move(t));
    }
    return out;
}

void freeze_corpus(const fs::path& dir, int n_scenes, std::uint64_t seed, Atmosphere atmosphere) {
    const auto recipes = scene_recipes(n_scenes, seed, atmosphere, GridShape{100, 100, 555.0}, {});
    auto files = write_scenes(dir, recipes);
    write_checksums(dir, std::move(files));
}

VerifyReport verify_corpus(const fs::path& dir) { return compare_checksums(dir, read_checksums(dir)); }

VerifyReport materialize_corpus(const fs::path& dir, const fs::path& dest) {
    const auto recipes = read_recipes(dir / "recipes.jsonl");
    const auto checksums = read_checksums(dir);
    write_scenes(dest, recipes);
    return compare_checksums(dest, checksums);
}

VerifyReport replay_corpus(const fs::path& dir) {
    std::random_device rd;
    const fs::path scratch = fs::temp_directory_path() / ("insarforge-replay-" + hex64((std::uint64_t{rd()} << 32) | rd()));
    VerifyReport report;
    try {
        report = materialize_corpus(dir, scratch);
    } catch (...) {
        fs::remove_all(scratch);
        throw;
    }
    fs::remove_all(scratch);
    return report;
}

std::vector<ResultRow> read_results(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("results file not found: " + path.string());
    std::vector<ResultRow> out;
    for (const auto& cells : read_csv(path, "name,p_max,row,col,positive")) {
        if (cells.size() != 5) throw DataError("'" + path.string() + "': expected 5 columns");
        out.push_back({cells[0], to_double(cells[1], path), static_cast<int>(to_double(cells[2], path)),
                       static_cast<int>(to_double(cells[3], path)), cells[4] == "1"});
    }
    return out;
}

std::string results_csv(std::span<const ResultRow> rows) {
    std::string text = csv_line({"name", "p_max", "row", "col", "positive"});
    for (const auto& r : rows)
        text += csv_line({r.name, format_double(r.p_max), std::to_string(r.row), std::to_string(r.col),
                          r.positive ? "1" : "0"});
    return text;
}

} // namespace insarforge::workflow
