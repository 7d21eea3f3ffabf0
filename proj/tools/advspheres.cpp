// advspheres: data generation, inference, attacks and the benchmark from the command line.

#include "advspheres/bench.hpp"
#include "advspheres/config.hpp"
#include "advspheres/csv.hpp"
#include "advspheres/parallel.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace advspheres;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct CommonOptions {
    std::string profile = "paper";
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::string output_dir;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--profile", o.profile, "Preset defaults: paper or ci")
        ->check(CLI::IsMember({"paper", "ci"}));
    cmd->add_option("-c,--config", o.config_file, "key = value config file");
    cmd->add_option("-s,--set", o.overrides, "Override one key, e.g. --set attack.restarts=10");
    cmd->add_option("--seed", o.seed, "Top-level seed (run.seed)");
    cmd->add_option("-j,--threads", o.threads, "Worker threads (default: all cores)");
    cmd->add_option("-o,--output-dir", o.output_dir, "Output directory (run.output_dir)");
}

/// profile < config file < ADVSPHERES_OUTPUT_DIR < flags.
RunConfig load_config(const CommonOptions& o) {
    Settings file;
    if (!o.config_file.empty()) {
        file = read_settings_file(o.config_file);
    }
    Profile profile = parse_profile(o.profile);
    if (o.profile == "paper" && file.count("run.profile")) {
        profile = parse_profile(file.at("run.profile"));
    }
    Settings flags;
    if (const char* env = std::getenv("ADVSPHERES_OUTPUT_DIR"); env && *env) {
        flags["run.output_dir"] = env;
    }
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        flags[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    if (o.seed) flags["run.seed"] = std::to_string(*o.seed);
    if (o.threads) flags["run.threads"] = std::to_string(*o.threads);
    if (!o.output_dir.empty()) flags["run.output_dir"] = o.output_dir;
    RunConfig cfg = build_config(profile, file, flags);
    worker_threads() = cfg.threads;
    return cfg;
}

std::pair<double, double> parse_range(const std::string& text) {
    const auto parts = csv::split(text);
    if (parts.size() != 2) {
        throw ConfigError("range must be lo,hi; got '" + text + "'");
    }
    try {
        return {std::stod(parts[0]), std::stod(parts[1])};
    } catch (const std::exception&) {
        throw ConfigError("range must be two numbers; got '" + text + "'");
    }
}

LabeledFeatures load_train(const fs::path& data_dir, FeatureNormalizer& norm) {
    const fs::path train_csv = data_dir / "train.csv";
    const fs::path norm_csv = data_dir / "normalizer.csv";
    if (!fs::exists(train_csv) || !fs::exists(norm_csv)) {
        throw DataError("no dataset in " + data_dir.string() + " (run `advspheres generate` first)");
    }
    norm = read_normalizer_csv(norm_csv);
    return make_features(read_dataset_csv(train_csv, Split::Train), norm);
}

void print_summary(const char* name, const SphereDataset& d, const SphereConfig& cfg) {
    const Eigen::Index ones = d.labels.count();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const double r = cfg.radius(d.labels[i]);
        worst = std::max(worst, std::abs(d.points.row(i).norm() - r) / r);
    }
    std::cout << name << ": " << d.size() << " points, D=" << d.dim() << ", label0=" << d.size() - ones
              << ", label1=" << ones << ", max relative norm error=" << worst << '\n';
}

int cmd_generate(const RunConfig& cfg) {
    const SphereData data = generate_dataset(cfg.sphere);
    const FeatureNormalizer norm = fit_normalizer(feature_map(data.train.points));
    write_dataset_csv(cfg.output_dir / "train.csv", data.train);
    write_dataset_csv(cfg.output_dir / "val.csv", data.val);
    write_normalizer_csv(cfg.output_dir / "normalizer.csv", norm);
    print_summary("train", data.train, cfg.sphere);
    print_summary("val", data.val, cfg.sphere);
    std::cout << "wrote " << cfg.output_dir.string() << '\n';
    return 0;
}

fs::path ensemble_path(const fs::path& dir, Method m) {
    return dir / ("ensemble-" + std::string(to_string(m)) + ".csv");
}

int cmd_infer(const RunConfig& cfg, const std::string& method_name, const std::string& data_dir) {
    const Method method = parse_method(method_name);
    FeatureNormalizer norm;
    const LabeledFeatures train = load_train(data_dir.empty() ? cfg.output_dir : fs::path(data_dir), norm);
    if (train.dim() != cfg.sphere.dim) {
        throw DataError("dataset has D=" + std::to_string(train.dim()) + " but sphere.dim=" +
                        std::to_string(cfg.sphere.dim));
    }
    InferenceContext ctx(cfg, train);
    ctx.set_diagnostics_dir(cfg.output_dir);
    const std::uint64_t seed = method_seed(cfg.seed, method, "first");
    const WeightEnsemble ens = ctx.run(method, seed);
    const fs::path out = ensemble_path(cfg.output_dir, method);
    write_ensemble(out, ens);
    std::cout << to_string(method) << ": " << ens.size() << " weight vectors, seed " << seed << ", wrote "
              << out.string() << '\n';
    return 0;
}

int cmd_attack(const RunConfig& cfg, const std::string& ensemble_file, const std::string& data_dir) {
    const WeightEnsemble ens = read_ensemble(ensemble_file);
    const fs::path dir = data_dir.empty() ? cfg.output_dir : fs::path(data_dir);
    const fs::path norm_csv = dir / "normalizer.csv";
    if (!fs::exists(norm_csv)) {
        throw DataError("missing " + norm_csv.string());
    }
    const FeatureNormalizer norm = read_normalizer_csv(norm_csv);
    if (norm.dim() != ens.dim()) {
        throw DataError("normalizer and ensemble dimensions differ");
    }
    AttackConfig ac = cfg.attack;
    ac.seed = method_seed(cfg.seed, ens.source, "attack");
    ac.step_size = step_size_for(ens.source, cfg.attack);
    SphereConfig radii = cfg.sphere;
    const AdversarialOutcome outcome = adversarial_error(ens, norm, radii, ac);
    for (const auto& a : outcome.attacks) {
        const std::string side = a.source_label == 0 ? "inner" : "outer";
        write_attack_result(cfg.output_dir / ("attack-" + side + "-restarts.csv"),
                            cfg.output_dir / ("attack-" + side + "-point.csv"), a);
        std::cout << side << " sphere -> label " << a.target_label
                  << ": best target probability " << csv::format(a.best_target_prob) << '\n';
    }
    std::cout << "adversarial error " << csv::format(outcome.error) << '\n';
    return 0;
}

int cmd_bench(const RunConfig& cfg) {
    const BenchReport report = run_benchmark(cfg, &std::cerr);
    write_results_csv(cfg.output_dir / "results.csv", report);
    write_manifest(cfg.output_dir / "manifest.txt", report);
    bool failed = false;
    for (const auto& r : report.rows) {
        std::cout << to_string(r.method) << ": ";
        if (!r.error.empty()) {
            failed = true;
            std::cout << "FAILED " << r.error << '\n';
            continue;
        }
        std::cout << "avg_confidence=" << csv::format(r.avg_confidence)
                  << " adv_error=" << csv::format(r.adv_error);
        if (r.resampled_error) std::cout << " resampled_error=" << csv::format(*r.resampled_error);
        std::cout << " (" << r.wall_seconds << " s)\n";
    }
    std::cout << "wrote " << (cfg.output_dir / "results.csv").string() << '\n';
    return failed ? kExitNumerical : 0;
}

LabeledFeatures generated_train(const RunConfig& cfg) {
    const SphereDataset train = generate_split(cfg.sphere, Split::Train);
    return make_features(train, fit_normalizer(feature_map(train.points)));
}

void write_overlay(const fs::path& path, const WeightEnsemble& ens, const std::vector<Eigen::Index>& cols) {
    for (Eigen::Index c : cols) {
        if (c < 0 || c >= ens.dim()) {
            throw DataError("overlay ensemble has only " + std::to_string(ens.dim()) + " weights");
        }
    }
    auto out = csv::open_out(path);
    for (std::size_t k = 0; k < cols.size(); ++k) {
        out << (k ? "," : "") << 'w' << cols[k] + 1;
    }
    out << '\n';
    for (Eigen::Index i = 0; i < ens.size(); ++i) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
            out << (k ? "," : "") << csv::format(ens.weights(i, cols[k]));
        }
        out << '\n';
    }
}

int cmd_grid(const RunConfig& cfg, const std::string& w1, const std::string& w2, int resolution,
             const std::string& overlay) {
    if (cfg.sphere.dim != 2) {
        throw DataError("grid needs sphere.dim=2, got " + std::to_string(cfg.sphere.dim));
    }
    const LikelihoodGrid g = likelihood_grid(generated_train(cfg), parse_range(w1), parse_range(w2), resolution);
    write_grid_csv(cfg.output_dir / "grid.csv", g);
    std::cout << "wrote " << (cfg.output_dir / "grid.csv").string() << '\n';
    if (!overlay.empty()) {
        write_overlay(cfg.output_dir / "samples.csv", read_ensemble(overlay), {0, 1});
        std::cout << "wrote " << (cfg.output_dir / "samples.csv").string() << '\n';
    }
    return 0;
}

int cmd_slice(const RunConfig& cfg, Eigen::Index coord, const std::string& range, int resolution,
              const std::string& overlay) {
    const LabeledFeatures train = generated_train(cfg);
    ModelSpec spec = cfg.model;
    spec.prior_family = PriorFamily::Isotropic;
    const MapFit map = fit_map(spec, train, cfg.optimizer, true);
    const PosteriorSlice s = posterior_slice(spec, train, map.params, coord, parse_range(range), resolution);
    write_slice_csv(cfg.output_dir / "slice.csv", s);
    std::cout << "MAP value of w" << coord + 1 << " = " << csv::format(map.params[coord]) << ", wrote "
              << (cfg.output_dir / "slice.csv").string() << '\n';
    if (!overlay.empty()) {
        write_overlay(cfg.output_dir / "samples.csv", read_ensemble(overlay), {coord});
        std::cout << "wrote " << (cfg.output_dir / "samples.csv").string() << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian logistic regression on the adversarial spheres problem"};
    app.require_subcommand(1);

    CommonOptions opts;
    auto* generate = app.add_subcommand("generate", "Write train/val sphere data and the feature normalizer");
    add_common(generate, opts);

    std::string method, data_dir, ensemble_file;
    auto* infer = app.add_subcommand("infer", "Fit one inference method and write its weight ensemble");
    add_common(infer, opts);
    infer->add_option("-m,--method", method, "MLE, MAP, Bootstrap, MCMC, Laplace, SVI, SVI-Hier, MCMC-MeanHier")
        ->required();
    infer->add_option("-d,--data", data_dir, "Directory holding train.csv and normalizer.csv (default: output dir)");

    auto* attack = app.add_subcommand("attack", "Search both spheres for confidently misclassified points");
    add_common(attack, opts);
    attack->add_option("-e,--ensemble", ensemble_file, "Weight ensemble CSV written by infer")->required();
    attack->add_option("-d,--data", data_dir, "Directory holding normalizer.csv (default: output dir)");

    auto* bench = app.add_subcommand("bench", "Run every configured method end to end and write results.csv");
    add_common(bench, opts);

    std::string w1_range = "-10,10", w2_range = "-10,10", slice_range = "-300,300", overlay;
    int resolution = 100;
    Eigen::Index coord = 0;
    auto* grid = app.add_subcommand("grid", "Log-likelihood on a weight grid for a two-dimensional problem");
    add_common(grid, opts);
    grid->add_option("--w1", w1_range, "lo,hi");
    grid->add_option("--w2", w2_range, "lo,hi");
    grid->add_option("-r,--resolution", resolution, "Grid points per axis");
    grid->add_option("--overlay", overlay, "Ensemble CSV whose weights are written to samples.csv");

    auto* slice = app.add_subcommand("slice", "Log-posterior along one weight with the others at the MAP");
    add_common(slice, opts);
    slice->add_option("--coord", coord, "Zero-based weight index");
    slice->add_option("--range", slice_range, "lo,hi");
    slice->add_option("-r,--resolution", resolution, "Number of points");
    slice->add_option("--overlay", overlay, "Ensemble CSV whose weight values are written to samples.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        const RunConfig cfg = load_config(opts);
        if (generate->parsed()) return cmd_generate(cfg);
        if (infer->parsed()) return cmd_infer(cfg, method, data_dir);
        if (attack->parsed()) return cmd_attack(cfg, ensemble_file, data_dir);
        if (bench->parsed()) return cmd_bench(cfg);
        if (grid->parsed()) return cmd_grid(cfg, w1_range, w2_range, resolution, overlay);
        if (slice->parsed()) return cmd_slice(cfg, coord, slice_range, resolution, overlay);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
