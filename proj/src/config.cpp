#include <charconv>
#include <functional>
#include <sstream>

#include "insarforge/error.hpp"
#include "insarforge/io.hpp"
#include "insarforge/workflow.hpp"

namespace insarforge::workflow {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
    T v{};
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size())
        throw UsageError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw UsageError("config key '" + std::string(key) + "': expected true or false, got '" + std::string(text) + "'");
}

struct Field {
    std::string section, key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, std::string_view)> set;
};

std::vector<Field> fields() {
    std::vector<Field> f;
    auto real = [&](std::string s, std::string k, auto access) {
        f.push_back({s, k, [access](const ExperimentConfig& c) { return format_double(access(const_cast<ExperimentConfig&>(c))); },
                     [access, k](ExperimentConfig& c, std::string_view v) { access(c) = parse_number<double>(k, v); }});
    };
    auto integer = [&](std::string s, std::string k, auto access) {
        f.push_back({s, k,
                     [access](const ExperimentConfig& c) { return std::to_string(access(const_cast<ExperimentConfig&>(c))); },
                     [access, k](ExperimentConfig& c, std::string_view v) {
                         access(c) = parse_number<std::remove_reference_t<decltype(access(c))>>(k, v);
                     }});
    };
    auto boolean = [&](std::string s, std::string k, auto access) {
        f.push_back({s, k,
                     [access](const ExperimentConfig& c) {
                         return std::string(access(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
                     },
                     [access, k](ExperimentConfig& c, std::string_view v) { access(c) = parse_bool(k, v); }});
    };
    using C = ExperimentConfig;
    integer("run", "seed", [](C& c) -> std::uint64_t& { return c.seed; });
    integer("run", "jobs", [](C& c) -> int& { return c.jobs; });
    f.push_back({"run", "out", [](const C& c) { return c.out; }, [](C& c, std::string_view v) { c.out = v; }});

    integer("grid", "width", [](C& c) -> int& { return c.grid.width; });
    integer("grid", "height", [](C& c) -> int& { return c.grid.height; });
    real("grid", "spacing", [](C& c) -> double& { return c.grid.spacing; });

    integer("patch", "size", [](C& c) -> int& { return c.patch; });
    integer("patch", "stride", [](C& c) -> int& { return c.stride; });
    boolean("patch", "zero_centered", [](C& c) -> bool& { return c.zero_centered; });

    real("synth", "wavelength", [](C& c) -> double& { return c.synth.wavelength_m; });
    real("synth", "min_fringes", [](C& c) -> double& { return c.synth.min_fringes; });
    real("synth", "source_region", [](C& c) -> double& { return c.synth.source_region_fraction; });
    real("synth", "dem_peak_min", [](C& c) -> double& { return c.synth.dem_peak_min; });
    real("synth", "dem_peak_max", [](C& c) -> double& { return c.synth.dem_peak_max; });
    real("synth", "poisson", [](C& c) -> double& { return c.synth.medium.poisson; });
    real("synth", "shear_modulus", [](C& c) -> double& { return c.synth.medium.shear_modulus; });
    f.push_back({"synth", "sources",
                 [](const C& c) {
                     std::string s;
                     for (auto k : c.synth.source_kinds) s += (s.empty() ? "" : ",") + std::string(deform::kind_name(k));
                     return s;
                 },
                 [](C& c, std::string_view v) {
                     c.synth.source_kinds.clear();
                     std::stringstream ss{std::string(v)};
                     std::string item;
                     while (std::getline(ss, item, ','))
                         c.synth.source_kinds.push_back(deform::kind_from_name(trim(item)));
                     if (c.synth.source_kinds.empty()) throw UsageError("config key 'sources' is empty");
                 }});

    f.push_back({"dataset", "scheme", [](const C& c) { return c.scheme; },
                 [](C& c, std::string_view v) {
                     dataset::scheme_from_name(v);
                     c.scheme = v;
                 }});
    integer("dataset", "per_class", [](C& c) -> int& { return c.per_class; });

    integer("train", "max_epochs", [](C& c) -> int& { return c.train.max_epochs; });
    integer("train", "batch_size", [](C& c) -> int& { return c.train.batch_size; });
    real("train", "learning_rate", [](C& c) -> double& { return c.train.learning_rate; });
    real("train", "momentum", [](C& c) -> double& { return c.train.momentum; });
    real("train", "weight_decay", [](C& c) -> double& { return c.train.weight_decay; });
    integer("train", "patience", [](C& c) -> int& { return c.train.patience; });
    real("train", "validation_fraction", [](C& c) -> double& { return c.train.validation_fraction; });
    boolean("train", "augment", [](C& c) -> bool& { return c.train.augment; });

    real("detect", "threshold", [](C& c) -> double& { return c.threshold; });
    real("detect", "canny_sigma", [](C& c) -> double& { return c.canny.sigma; });
    real("detect", "canny_low", [](C& c) -> double& { return c.canny.low; });
    real("detect", "canny_high", [](C& c) -> double& { return c.canny.high; });
    real("detect", "min_edge_fraction", [](C& c) -> double& { return c.canny.min_edge_fraction; });
    integer("detect", "merge_size", [](C& c) -> int& { return c.merge.kernel_size; });
    real("detect", "merge_sigma", [](C& c) -> double& { return c.merge.sigma; });

    integer("scenes", "count", [](C& c) -> int& { return c.scenes; });
    f.push_back({"scenes", "atmosphere", [](const C& c) { return std::string(atmosphere_name(c.scene_atmosphere)); },
                 [](C& c, std::string_view v) { c.scene_atmosphere = atmosphere_from_name(v); }});
    real("scenes", "ztd_sea_level_mm", [](C& c) -> double& { return c.ztd.sea_level_mm; });
    real("scenes", "ztd_scale_height_m", [](C& c) -> double& { return c.ztd.scale_height_m; });
    real("scenes", "ztd_cell_mm", [](C& c) -> double& { return c.ztd.cell_amplitude_mm; });
    real("scenes", "ztd_ramp_mm", [](C& c) -> double& { return c.ztd.ramp_mm; });

    integer("retrain", "epochs", [](C& c) -> int& { return c.retrain_epochs; });
    integer("retrain", "synthetic_per_class", [](C& c) -> int& { return c.retrain_synthetic_per_class; });
    real("retrain", "lr_multiplier", [](C& c) -> double& { return c.retrain_lr_multiplier; });

    real("correct", "omega", [](C& c) -> double& { return c.inpaint.omega; });
    real("correct", "tolerance", [](C& c) -> double& { return c.inpaint.tolerance; });
    integer("correct", "direct_max_pixels", [](C& c) -> std::size_t& { return c.inpaint.direct_max_pixels; });
    return f;
}

} // namespace

cnn::TrainConfig ExperimentConfig::default_train() {
    cnn::TrainConfig t;
    t.max_epochs = 20;
    return t;
}

dataset::BuildOptions ExperimentConfig::build_options() const {
    dataset::BuildOptions b;
    b.grid = grid;
    b.patch = patch;
    b.stride = stride;
    b.zero_centered = zero_centered;
    b.synth = synth;
    b.jobs = jobs;
    return b;
}

detect::DetectConfig ExperimentConfig::detect_config() const {
    detect::DetectConfig d;
    d.patch = patch;
    d.stride = stride;
    d.threshold = threshold;
    d.canny = canny;
    d.merge = merge;
    d.jobs = jobs;
    return d;
}

std::string to_ini(const ExperimentConfig& cfg) {
    std::string out, section;
    for (const auto& f : fields()) {
        if (f.section != section) {
            out += (out.empty() ? "[" : "\n[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

ExperimentConfig parse_ini(std::string_view text) {
    ExperimentConfig cfg;
    const auto table = fields();
    std::string section;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw UsageError("config line " + std::to_string(line_no) + ": unterminated section");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            bool known = false;
            for (const auto& f : table) known = known || f.section == section;
            if (!known) throw UsageError("config line " + std::to_string(line_no) + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        const Field* match = nullptr;
        for (const auto& f : table)
            if (f.section == section && f.key == key) match = &f;
        if (!match)
            throw UsageError("config line " + std::to_string(line_no) + ": unknown key '" + key + "' in [" + section + "]");
        match->set(cfg, value);
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw UsageError("config file not found: " + path.string());
    return parse_ini(read_text(path));
}

} // namespace insarforge::workflow
