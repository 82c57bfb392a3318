#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "insarforge/error.hpp"
#include "insarforge/igrd.hpp"
#include "insarforge/io.hpp"
#include "insarforge/png.hpp"
#include "insarforge/rng.hpp"
#include "insarforge/workflow.hpp"

namespace fs = std::filesystem;
using namespace insarforge;

namespace {

struct Globals {
    std::string config, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
};

workflow::ExperimentConfig effective_config(const Globals& g) {
    auto cfg = g.config.empty() ? workflow::ExperimentConfig{} : workflow::load_config(g.config);
    if (const char* env = std::getenv("INSARFORGE_OUT"); env && *env) cfg.out = env;
    if (!g.out.empty()) cfg.out = g.out;
    if (g.seed) cfg.seed = *g.seed;
    if (g.jobs) cfg.jobs = *g.jobs;
    if (cfg.jobs < 1) throw UsageError("--jobs must be at least 1");
    return cfg;
}

void write_raster(const fs::path& path, const Raster& r) {
    igrd::write(path, r);
    std::cout << "wrote " << path.string() << "\n";
}

dataset::WeightTriple parse_weights(const std::string& text) {
    dataset::WeightTriple w;
    if (std::sscanf(text.c_str(), "%lf,%lf,%lf", &w.alpha, &w.beta, &w.gamma) != 3)
        throw UsageError("--weights expects a,b,c");
    return w;
}

void print_evaluation(const workflow::Evaluation& e) {
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("undefined"); };
    std::cout << e.set << ": tp=" << e.counts.tp << " fp=" << e.counts.fp << " fn=" << e.counts.fn
              << " tn=" << e.counts.tn << " ppv=" << opt(e.ppv) << " recall=" << opt(e.recall)
              << " accuracy=" << opt(e.accuracy);
    if (e.roc) std::cout << " auc=" << format_double(e.roc->auc);
    std::cout << "\n";
}

int run(int argc, char** argv) {
    CLI::App app{"Synthetic InSAR deformation detection workbench"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Experiment config file (INI)")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--jobs", g.jobs, "Worker threads");
    app.add_option("--out", g.out, "Output root directory");
    app.fallthrough();

    auto* config_cmd = app.add_subcommand("config", "Print the effective configuration");

    auto* synth = app.add_subcommand("synth", "Generate single components");
    synth->require_subcommand(1);
    std::string output;
    int width = 100, height = 100;
    double spacing = 555.0;
    auto add_grid = [&](CLI::App* c) {
        c->add_option("output", output, "Output .igrd file")->required();
        c->add_option("--width", width, "Grid width in pixels");
        c->add_option("--height", height, "Grid height in pixels");
        c->add_option("--spacing", spacing, "Pixel spacing in meters");
    };
    auto* s_dem = synth->add_subcommand("dem", "Synthetic volcano elevation model");
    add_grid(s_dem);
    std::string dem_kind = "cone";
    double peak = 2000.0;
    s_dem->add_option("--kind", dem_kind, "cone or shield")->check(CLI::IsMember({"cone", "shield"}));
    s_dem->add_option("--peak", peak, "Peak height in meters");

    auto* s_def = synth->add_subcommand("deform", "Deformation phase from a sampled or given source");
    add_grid(s_def);
    std::string source_kind = "mogi", record;
    std::optional<double> incidence, heading;
    s_def->add_option("--source", source_kind, "mogi, penny, earthquake, dyke or sill");
    s_def->add_option("--record", record, "Source as a JSON record instead of a random draw");
    s_def->add_option("--incidence", incidence, "Incidence angle in degrees");
    s_def->add_option("--heading", heading, "Satellite heading in degrees");

    auto* s_turb = synth->add_subcommand("turb", "Turbulent delay phase");
    add_grid(s_turb);
    std::optional<double> sigma2, efold;
    s_turb->add_option("--sigma2", sigma2, "Maximum covariance in mm^2");
    s_turb->add_option("--efold", efold, "E-folding length in km");

    auto* s_strat = synth->add_subcommand("strat", "Stratified delay phase");
    s_strat->add_option("output", output, "Output .igrd file")->required();
    std::string dem_path, ztd_master, ztd_slave;
    std::optional<double> slope;
    s_strat->add_option("--dem", dem_path, "Elevation raster for the linear model")->check(CLI::ExistingFile);
    s_strat->add_option("--slope", slope, "Phase per km of elevation");
    s_strat->add_option("--ztd-master", ztd_master, "Zenith delay at the first acquisition")->check(CLI::ExistingFile);
    s_strat->add_option("--ztd-slave", ztd_slave, "Zenith delay at the second acquisition")->check(CLI::ExistingFile);
    s_strat->add_option("--incidence", incidence, "Incidence angle in degrees");
    s_strat->add_option("--heading", heading, "Satellite heading in degrees");

    auto* s_comp = synth->add_subcommand("compose", "Weighted sum of components");
    s_comp->add_option("output", output, "Output .igrd file")->required();
    std::string d_path, s_path, t_path, weights = "1,1,1";
    bool normalize = false, png_too = false;
    s_comp->add_option("--d", d_path, "Deformation phase")->required()->check(CLI::ExistingFile);
    s_comp->add_option("--s", s_path, "Stratified phase")->required()->check(CLI::ExistingFile);
    s_comp->add_option("--t", t_path, "Turbulent phase")->required()->check(CLI::ExistingFile);
    s_comp->add_option("--weights", weights, "alpha,beta,gamma");
    s_comp->add_flag("--normalize", normalize, "Divide by the weight sum");
    s_comp->add_flag("--png", png_too, "Also write a wrapped-phase PNG");

    auto* dataset_cmd = app.add_subcommand("dataset", "Build the training set");
    auto* train_cmd = app.add_subcommand("train", "Train the classifier");

    auto* detect_cmd = app.add_subcommand("detect", "Detect deformation in interferograms");
    std::string model_path, scheme_name, input;
    std::optional<double> threshold;
    detect_cmd->add_option("--model", model_path, "Model file");
    detect_cmd->add_option("--scheme", scheme_name, "Class scheme (defaults to the model's)");
    detect_cmd->add_option("--input", input, "An .igrd file or a directory of them");
    detect_cmd->add_option("--threshold", threshold, "Detection threshold on p_max");

    auto* retrain_cmd = app.add_subcommand("retrain", "Fine-tune on checked detections plus synthetic patches");

    auto* correct_cmd = app.add_subcommand("correct", "Inpaint and remove the zenith-delay stratified term");
    std::string in_path, mask_path, corrected;
    correct_cmd->add_option("--in", in_path, "Unwrapped phase")->check(CLI::ExistingFile);
    correct_cmd->add_option("--mask", mask_path, "Validity mask (nonzero = valid)")->check(CLI::ExistingFile);
    correct_cmd->add_option("--ztd-master", ztd_master, "Zenith delay at the first acquisition")->check(CLI::ExistingFile);
    correct_cmd->add_option("--ztd-slave", ztd_slave, "Zenith delay at the second acquisition")->check(CLI::ExistingFile);
    correct_cmd->add_option("--incidence", incidence, "Incidence angle in degrees");
    correct_cmd->add_option("--heading", heading, "Satellite heading in degrees");
    correct_cmd->add_option("--output", corrected, "Corrected phase file");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Confusion counts, PPV and ROC");
    std::string results_path, truth_path, roc_path;
    evaluate_cmd->add_option("--results", results_path, "results.csv from detect")->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--truth", truth_path, "truth.csv")->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--roc", roc_path, "Write the ROC points to this CSV");
    evaluate_cmd->add_option("--threshold", threshold, "Detection threshold on p_max");

    auto* run_all = app.add_subcommand("run-all", "Every stage in order");

    auto* replay_cmd = app.add_subcommand("replay", "Rerun a recorded run and compare its artifacts");
    std::string manifest_path;
    replay_cmd->add_option("manifest", manifest_path, "run_manifest.json")->required()->check(CLI::ExistingFile);

    auto* corpus = app.add_subcommand("corpus", "Frozen evaluation corpus");
    corpus->require_subcommand(1);
    std::string corpus_dir, atmosphere = "slope";
    int count = 20;
    bool replay = false;
    auto* freeze = corpus->add_subcommand("freeze", "Generate scenes and record their checksums");
    freeze->add_option("dir", corpus_dir, "Corpus directory")->required();
    freeze->add_option("--count", count, "Number of scenes");
    freeze->add_option("--atmosphere", atmosphere, "slope or ztd")->check(CLI::IsMember({"slope", "ztd"}));
    auto* verify = corpus->add_subcommand("verify", "Check files against the recorded checksums");
    verify->add_option("dir", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    verify->add_flag("--replay", replay, "Regenerate the scenes from their recipes and compare");
    auto* materialize = corpus->add_subcommand("materialize", "Write the scene files from the recorded recipes");
    materialize->add_option("dir", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    auto cfg = effective_config(g);
    const GridShape grid{width, height, spacing};

    if (config_cmd->parsed()) {
        std::cout << workflow::to_ini(cfg);
    } else if (s_dem->parsed()) {
        write_raster(output, atmos::synth_dem(dem_kind == "cone" ? atmos::DemKind::cone : atmos::DemKind::shield, peak,
                                              grid, cfg.seed));
    } else if (s_def->parsed()) {
        grid.validate();
        auto src = deform::sample_source(cfg.seed, deform::kind_from_name(source_kind), grid);
        if (!record.empty()) src.source = deform::from_record(record);
        const LosGeometry geom(incidence.value_or(src.geometry.incidence_deg()),
                               heading.value_or(src.geometry.heading_deg()), cfg.synth.wavelength_m);
        std::cout << deform::to_record(src.source) << "\n";
        write_raster(output, deform::render_deformation(src.source, cfg.synth.medium, geom, grid));
    } else if (s_turb->parsed()) {
        Rng rng(cfg.seed);
        auto p = atmos::sample_cov_params(rng);
        if (sigma2) p.sigma2_max = *sigma2;
        if (efold) p.efold_km = *efold;
        std::cout << "sigma2_max=" << format_double(p.sigma2_max) << " efold_km=" << format_double(p.efold_km) << "\n";
        write_raster(output, atmos::synth_turbulent(p, grid, rng.next_u64(), cfg.synth.wavelength_m));
    } else if (s_strat->parsed()) {
        const LosGeometry geom(incidence.value_or(0.0), heading.value_or(0.0), cfg.synth.wavelength_m);
        if (!ztd_master.empty() || !ztd_slave.empty()) {
            if (ztd_master.empty() || ztd_slave.empty()) throw UsageError("--ztd-master and --ztd-slave go together");
            write_raster(output, atmos::stratified_from_ztd(igrd::read(ztd_master), igrd::read(ztd_slave), geom));
        } else {
            if (dem_path.empty() || !slope) throw UsageError("strat needs --dem and --slope, or a ZTD pair");
            atmos::StratifiedModel m;
            m.slope_rad_per_km = *slope;
            m.dem = igrd::read(dem_path);
            write_raster(output, atmos::synth_stratified(m, geom));
        }
    } else if (s_comp->parsed()) {
        const auto w = parse_weights(weights);
        const auto d = igrd::read(d_path), s = igrd::read(s_path), t = igrd::read(t_path);
        const auto r = normalize ? dataset::compose_interferogram(d, s, t, w) : dataset::combine_components(d, s, t, w);
        write_raster(output, r);
        if (png_too) png::write(fs::path(output).replace_extension(".png"), png::phase_colormap(wrap_phase(r)));
    } else if (dataset_cmd->parsed()) {
        workflow::run_stage(cfg, workflow::Stage::dataset);
    } else if (train_cmd->parsed()) {
        workflow::run_stage(cfg, workflow::Stage::train);
    } else if (detect_cmd->parsed()) {
        if (threshold) cfg.threshold = *threshold;
        if (model_path.empty() && input.empty() && scheme_name.empty()) {
            workflow::run_stage(cfg, workflow::Stage::detect);
        } else {
            if (model_path.empty()) model_path = (fs::path(cfg.out) / "model" / "model.icnn").string();
            if (!fs::exists(model_path)) throw DataError("detect: model file not found: " + model_path);
            if (input.empty()) throw UsageError("detect: --input is required with --model");
            const auto model = cnn::load_model(model_path);
            const auto scheme = dataset::scheme_from_name(scheme_name.empty() ? model.scheme : scheme_name);
            const auto rows = workflow::detect_directory(model, scheme, input, cfg.detect_config(),
                                                         fs::path(cfg.out) / "detect");
            for (const auto& r : rows)
                std::cout << r.name << " p_max=" << format_double(r.p_max) << " at (" << r.row << ", " << r.col
                          << ") " << (r.positive ? "positive" : "negative") << "\n";
        }
    } else if (retrain_cmd->parsed()) {
        workflow::run_stage(cfg, workflow::Stage::retrain);
    } else if (correct_cmd->parsed()) {
        if (in_path.empty()) {
            workflow::run_stage(cfg, workflow::Stage::correct);
        } else {
            if (ztd_master.empty() || ztd_slave.empty() || !incidence || !heading || corrected.empty())
                throw UsageError("correct --in needs --ztd-master, --ztd-slave, --incidence, --heading and --output");
            auto phase = igrd::read(in_path);
            auto masked = mask_path.empty() ? correct::MaskedRaster::full(std::move(phase))
                                            : correct::MaskedRaster::from_mask(std::move(phase), igrd::read(mask_path));
            const LosGeometry geom(*incidence, *heading, cfg.synth.wavelength_m);
            write_raster(corrected, correct::apply_correction(masked, igrd::read(ztd_master), igrd::read(ztd_slave), geom,
                                                             cfg.inpaint));
        }
    } else if (evaluate_cmd->parsed()) {
        if (threshold) cfg.threshold = *threshold;
        if (results_path.empty() && truth_path.empty()) {
            workflow::run_stage(cfg, workflow::Stage::evaluate);
            std::cout << read_text(fs::path(cfg.out) / "evaluate" / "summary.csv");
        } else {
            if (results_path.empty() || truth_path.empty()) throw UsageError("evaluate needs --results and --truth");
            const auto e = workflow::evaluate_results("results", workflow::read_results(results_path),
                                                      workflow::read_truth(truth_path), cfg.threshold);
            print_evaluation(e);
            if (!roc_path.empty()) {
                if (!e.roc) throw DataError("ROC needs both deforming and non-deforming items");
                std::string text = "fpr,tpr,threshold\n";
                for (const auto& p : e.roc->points)
                    text += format_double(p.fpr) + "," + format_double(p.tpr) + "," + format_double(p.threshold) + "\n";
                write_text(roc_path, text);
            }
        }
    } else if (run_all->parsed()) {
        workflow::run_stage(cfg, workflow::Stage::all);
        std::cout << read_text(fs::path(cfg.out) / "evaluate" / "summary.csv");
        std::cout << "manifest " << workflow::manifest_hash(cfg.out) << "\n";
    } else if (replay_cmd->parsed()) {
        const auto report = workflow::replay_run(manifest_path, cfg.out);
        for (const auto& f : report.missing) std::cout << "missing " << f << "\n";
        for (const auto& f : report.mismatched) std::cout << "mismatch " << f << "\n";
        std::cout << (report.ok() ? "replay ok\n" : "replay differs\n");
        return report.ok() ? 0 : 2;
    } else if (freeze->parsed()) {
        workflow::freeze_corpus(corpus_dir, count, cfg.seed, workflow::atmosphere_from_name(atmosphere));
        std::cout << "froze " << count << " scenes in " << corpus_dir << "\n";
    } else if (verify->parsed() || materialize->parsed()) {
        const auto report = materialize->parsed() ? workflow::materialize_corpus(corpus_dir, corpus_dir)
                            : replay              ? workflow::replay_corpus(corpus_dir)
                                                  : workflow::verify_corpus(corpus_dir);
        for (const auto& f : report.missing) std::cout << "missing " << f << "\n";
        for (const auto& f : report.mismatched) std::cout << "mismatch " << f << "\n";
        std::cout << (report.ok() ? "corpus ok\n" : "corpus differs\n");
        return report.ok() ? 0 : 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
}
