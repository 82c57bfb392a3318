#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "insarforge/atmos.hpp"
#include "insarforge/cnn.hpp"
#include "insarforge/correct.hpp"
#include "insarforge/dataset.hpp"
#include "insarforge/detect.hpp"
#include "insarforge/metrics.hpp"

namespace insarforge::workflow {

enum class Atmosphere { slope, ztd };

std::string_view atmosphere_name(Atmosphere a);
Atmosphere atmosphere_from_name(std::string_view name);

/// Every experiment knob. Defaults run the whole workflow at desk scale.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string out = "insarforge-out";

    GridShape grid{100, 100, 555.0};
    int patch = 64;
    int stride = 8;
    bool zero_centered = true;

    dataset::SynthOptions synth{};
    std::string scheme = "two_class";
    int per_class = 300;

    cnn::TrainConfig train = default_train();

    double threshold = 0.5;
    detect::CannyConfig canny{};
    detect::MergeConfig merge{};

    int scenes = 20;
    Atmosphere scene_atmosphere = Atmosphere::ztd;
    atmos::ZtdParams ztd{};

    int retrain_epochs = 5;
    int retrain_synthetic_per_class = 100;
    double retrain_lr_multiplier = 10.0;

    correct::InpaintOptions inpaint{};

    static cnn::TrainConfig default_train();
    dataset::BuildOptions build_options() const;
    detect::DetectConfig detect_config() const;
};

/// Flat `key = value` text with [section] headers; every field is written.
std::string to_ini(const ExperimentConfig& cfg);
/// Unknown sections or keys and malformed values throw UsageError.
ExperimentConfig parse_ini(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// How to regenerate one test interferogram.
struct SceneRecipe {
    std::string name;
    std::uint64_t seed = 0;
    bool deforming = false;
    Atmosphere atmosphere = Atmosphere::slope;
    GridShape grid{100, 100, 555.0};
    dataset::SynthOptions synth{};
    atmos::ZtdParams ztd{};

    std::string to_json() const;
    static SceneRecipe from_json(std::string_view line);
};

struct TestScene {
    Raster composed, d, s, t;  // unwrapped phase
    std::optional<Raster> ztd_master, ztd_slave;
    double incidence_deg = 0, heading_deg = 0;
    std::optional<std::array<int, 2>> epicenter;  // (row, col)
    bool deforming = false;
    std::string record;
};

/// Slope atmosphere: a two-class D+S+T or S+T scene. ZTD atmosphere: optional
/// deformation plus S from a pair of synthetic zenith delays plus turbulence,
/// summed with unit weights.
TestScene make_scene(const SceneRecipe& recipe);

/// n recipes alternating deforming and atmosphere-only, names scene_000...
std::vector<SceneRecipe> scene_recipes(int n, std::uint64_t seed, Atmosphere atmosphere, const GridShape& grid,
                                       const dataset::SynthOptions& synth, const atmos::ZtdParams& ztd = {});

/// Writes scenes/<name>.igrd, components/<name>_{d,s,t}.igrd,
/// ztd/<name>_{master,slave}.igrd for ZTD scenes, recipes.jsonl and truth.csv
/// (with the expected detection band).
/// Returns the written paths relative to dir.
std::vector<std::string> write_scenes(const std::filesystem::path& dir, std::span<const SceneRecipe> recipes);

struct TruthRow {
    std::string name;
    bool deforming = false;
    int row = -1, col = -1;
    double incidence_deg = 0, heading_deg = 0;
};
std::vector<TruthRow> read_truth(const std::filesystem::path& path);

/// Corpus: scenes plus recipes.jsonl and checksums.txt (`path checksum` lines).
void freeze_corpus(const std::filesystem::path& dir, int n_scenes, std::uint64_t seed,
                   Atmosphere atmosphere = Atmosphere::slope);

struct VerifyReport {
    std::vector<std::string> mismatched;  // relative paths
    std::vector<std::string> missing;
    bool ok() const { return mismatched.empty() && missing.empty(); }
};

/// Checks the files on disk against checksums.txt.
VerifyReport verify_corpus(const std::filesystem::path& dir);
/// Regenerates the corpus files from dir/recipes.jsonl into `dest` (which may
/// be `dir` itself) and checks them against dir/checksums.txt.
VerifyReport materialize_corpus(const std::filesystem::path& dir, const std::filesystem::path& dest);
/// Regenerates every scene from recipes.jsonl into a scratch directory and checks it against checksums.txt.
VerifyReport replay_corpus(const std::filesystem::path& dir);

/// Per-image detection summary as stored in results.csv.
struct ResultRow {
    std::string name;
    double p_max = 0;
    int row = 0, col = 0;
    bool positive = false;
};
std::vector<ResultRow> read_results(const std::filesystem::path& path);
std::string results_csv(std::span<const ResultRow> rows);

/// Detects `input` (one .igrd file or every *.igrd in a directory), writing <name>.json, <name>_prob.igrd,
/// <name>.png and results.csv into `out`.
std::vector<ResultRow> detect_directory(const cnn::CnnModel& model, const dataset::ClassScheme& scheme,
                                        const std::filesystem::path& input, const detect::DetectConfig& cfg,
                                        const std::filesystem::path& out);

struct Evaluation {
    std::string set;
    metrics::ConfusionCounts counts;
    std::optional<double> ppv, recall, accuracy;
    std::optional<metrics::RocCurve> roc;
};
Evaluation evaluate_results(std::string set, std::span<const ResultRow> results, std::span<const TruthRow> truth,
                            double threshold);

enum class Stage { synth, dataset, train, detect, retrain, correct, evaluate, all };
std::string_view stage_name(Stage s);
Stage stage_from_name(std::string_view name);

/// Runs one stage (or all in order) under cfg.out. Each stage writes into a
/// scratch directory renamed into place on success and records its artifacts
/// in run_manifest.json. Missing inputs throw DataError naming the stage and file.
void run_stage(const ExperimentConfig& cfg, Stage stage);

/// Reruns every stage recorded in a run manifest under `out` and compares
/// the regenerated artifacts with the recorded checksums.
VerifyReport replay_run(const std::filesystem::path& manifest, const std::filesystem::path& out);

/// FNV-1a of run_manifest.json under `out`.
std::string manifest_hash(const std::filesystem::path& out);

/// PNG of wrapped phase with probability contours and the p_max marker.
void write_overlay(const std::filesystem::path& path, const Raster& image, const detect::ProbabilityMap& map);

} // namespace insarforge::workflow
