#include "advspheres/bench.hpp"

#include "advspheres/csv.hpp"
#include "advspheres/gaussian.hpp"
#include "advspheres/mcmc.hpp"
#include "advspheres/parallel.hpp"
#include "advspheres/point.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <ostream>
#include <set>

namespace advspheres {

namespace {

const double kProbHi = std::nextafter(1.0, 0.0);

Vector linspace(std::pair<double, double> range, int resolution) {
    if (resolution < 1) {
        throw ConfigError("grid resolution must be at least 1");
    }
    if (!std::isfinite(range.first) || !std::isfinite(range.second)) {
        throw ConfigError("grid range must be finite");
    }
    if (resolution == 1) {
        return Vector::Constant(1, range.first);
    }
    return Vector::LinSpaced(resolution, range.first, range.second);
}

}  // namespace

// -- metrics -------------------------------------------------------------------

double avg_confidence(const WeightEnsemble& ensemble, const LabeledFeatures& val) {
    if (val.size() == 0) {
        throw DataError("avg_confidence: empty validation set");
    }
    const Vector p = predict_label(ensemble, val.features, val.labels);
    return std::min(p.mean(), kProbHi);
}

double avg_confidence(const WeightEnsemble& ensemble, const SphereDataset& val, const FeatureNormalizer& norm) {
    return avg_confidence(ensemble, make_features(val, norm));
}

double error_rate(const WeightEnsemble& ensemble, const LabeledFeatures& val) {
    if (val.size() == 0) {
        throw DataError("error_rate: empty validation set");
    }
    const Vector p = predict_label(ensemble, val.features, val.labels);
    return static_cast<double>((p.array() <= 0.5).count()) / static_cast<double>(val.size());
}

std::vector<AdversarialPoint> AdversarialOutcome::points() const {
    std::vector<AdversarialPoint> out;
    for (const auto& a : attacks) {
        out.push_back({a.best_point, a.target_label});
    }
    return out;
}

AdversarialOutcome adversarial_error(const WeightEnsemble& ensemble, const FeatureNormalizer& norm,
                                     const SphereConfig& radii, const AttackConfig& cfg) {
    AdversarialOutcome out;
    std::vector<int> sources;
    if (cfg.side != AttackSide::Outer) sources.push_back(0);
    if (cfg.side != AttackSide::Inner) sources.push_back(1);
    for (int source : sources) {
        out.attacks.push_back(run_attack(ensemble, norm, radii.radius(source), source, cfg));
        out.error = std::max(out.error, out.attacks.back().best_target_prob);
    }
    return out;
}

double resampled_error(const WeightEnsemble& second, const std::vector<AdversarialPoint>& points,
                       const FeatureNormalizer& norm) {
    double worst = 0.0;
    for (const auto& pt : points) {
        worst = std::max(worst, target_probability(second, pt.x, pt.target, norm));
    }
    return worst;
}

// -- inference dispatch ---------------------------------------------------------

InferenceContext::InferenceContext(const RunConfig& cfg, const LabeledFeatures& train)
    : cfg_(cfg), train_(train) {}

ModelSpec InferenceContext::spec(PriorFamily family) const {
    ModelSpec s = cfg_.model;
    s.prior_family = family;
    s.feature_dim = static_cast<int>(train_.dim());
    return s;
}

const MapFit& InferenceContext::map_fit(PriorFamily family) {
    auto it = maps_.find(family);
    if (it == maps_.end()) {
        OptimizerConfig opt = cfg_.optimizer;
        opt.record_trace = diag_dir_.has_value();
        it = maps_.emplace(family, fit_map(spec(family), train_, opt, true)).first;
        if (diag_dir_) {
            append_trace_csv(*diag_dir_ / ("map-trace-" + std::string(to_string(family)) + ".csv"),
                             it->second.trace);
        }
    }
    return it->second;
}

WeightEnsemble InferenceContext::run(Method method, std::uint64_t seed) {
    const int m = cfg_.ensemble_size;
    WeightEnsemble out;
    switch (method) {
        case Method::MLE: {
            OptimizerConfig opt = cfg_.optimizer;
            opt.record_trace = diag_dir_.has_value();
            const auto fit = fit_map(spec(PriorFamily::Isotropic), train_, opt, false);
            if (diag_dir_) append_trace_csv(*diag_dir_ / "mle-trace.csv", fit.trace);
            out = fit.ensemble;
            break;
        }
        case Method::MAP:
            out = map_fit(PriorFamily::Isotropic).ensemble;
            break;
        case Method::Bootstrap:
            out = fit_bootstrap(spec(PriorFamily::Isotropic), train_, cfg_.optimizer, m, seed).ensemble;
            break;
        case Method::MCMC:
        case Method::MCMCMeanHier: {
            const PriorFamily family =
                method == Method::MCMC ? PriorFamily::Isotropic : PriorFamily::MeanHierarchical;
            SliceConfig sc = cfg_.slice;
            sc.n_samples = m;
            sc.seed = seed;
            std::optional<Vector> init;
            if (sc.init == ChainInit::MapInit) {
                init = map_fit(family).params;
            }
            const auto chain = run_chain(spec(family), train_, sc, init);
            if (diag_dir_) {
                write_chain_diagnostics(*diag_dir_ / ("chain-" + std::string(to_string(method)) + ".csv"),
                                        chain.log_posterior);
            }
            out = chain.ensemble;
            break;
        }
        case Method::Laplace: {
            const auto fit = laplace_at(spec(PriorFamily::Isotropic), train_, map_fit(PriorFamily::Isotropic));
            if (diag_dir_) write_gaussian(*diag_dir_ / "laplace", fit.posterior);
            Rng rng(seed);
            out = gaussian_sample(fit.posterior, m, rng);
            break;
        }
        case Method::SVI:
        case Method::SVIHier: {
            const bool hier = method == Method::SVIHier;
            const PriorFamily family = hier ? PriorFamily::ScaleHierarchical : PriorFamily::Isotropic;
            SviConfig sc = cfg_.svi;
            sc.seed = seed;
            std::optional<Vector> init;
            if (sc.init_from_map) {
                init = map_fit(family).params;
            }
            const auto fit = svi_fit(spec(family), train_, sc,
                                     hier ? VariationalFamily::HierarchicalFactorized
                                          : VariationalFamily::FullCovGaussian,
                                     init);
            if (diag_dir_) write_gaussian(*diag_dir_ / std::string(to_string(method)), fit.posterior);
            Rng rng(derive_seed(seed, "predictive"));
            out = gaussian_sample(fit.posterior, m, rng);
            break;
        }
    }
    out.source = method;
    out.seed = seed;
    out.validate();
    return out;
}

std::uint64_t method_seed(std::uint64_t seed, Method method, std::string_view role) {
    return derive_seed(derive_seed(seed, to_string(method)), role);
}

double resampled_error(Method method, const std::vector<AdversarialPoint>& points, InferenceContext& ctx,
                       const FeatureNormalizer& norm, std::uint64_t run_seed) {
    const WeightEnsemble second = ctx.run(method, method_seed(run_seed, method, "second"));
    return resampled_error(second, points, norm);
}

// -- benchmark ------------------------------------------------------------------

const BenchRow* BenchReport::find(Method m) const {
    for (const auto& r : rows) {
        if (r.method == m) return &r;
    }
    return nullptr;
}

BenchReport run_benchmark(const RunConfig& cfg, std::ostream* log) {
    cfg.validate();
    BenchReport report;
    report.seed = cfg.seed;
    report.config_fingerprint = cfg.fingerprint();
    report.config_dump = cfg.dump();

    SphereConfig sphere = cfg.sphere;
    sphere.seed = cfg.seed;
    FeatureNormalizer norm;
    LabeledFeatures train;
    LabeledFeatures val;
    {
        const SphereData data = generate_dataset(sphere);
        norm = fit_normalizer(feature_map(data.train.points));
        train = make_features(data.train, norm);
        val = make_features(data.val, norm);
    }

    RunConfig run_cfg = cfg;
    run_cfg.sphere = sphere;
    run_cfg.model.feature_dim = sphere.dim;
    InferenceContext ctx(run_cfg, train);

    const std::set<Method> methods(cfg.methods.begin(), cfg.methods.end());
    for (Method method : methods) {
        BenchRow row;
        row.method = method;
        row.seed = method_seed(cfg.seed, method, "first");
        const auto t0 = std::chrono::steady_clock::now();
        if (log) *log << "[" << to_string(method) << "] inference" << std::endl;
        try {
            const WeightEnsemble ens = ctx.run(method, row.seed);
            row.avg_confidence = avg_confidence(ens, val);
            if (log) *log << "[" << to_string(method) << "] avg_confidence " << row.avg_confidence << std::endl;

            AttackConfig ac = cfg.attack;
            ac.seed = method_seed(cfg.seed, method, "attack");
            ac.step_size = step_size_for(method, cfg.attack);
            const AdversarialOutcome adv = adversarial_error(ens, norm, sphere, ac);
            row.adv_error = adv.error;
            if (log) *log << "[" << to_string(method) << "] adv_error " << row.adv_error << std::endl;

            if (!is_point_estimate(method)) {
                row.resampled_error = resampled_error(method, adv.points(), ctx, norm, cfg.seed);
                if (log) {
                    *log << "[" << to_string(method) << "] resampled_error " << *row.resampled_error << std::endl;
                }
            }
        } catch (const Error& e) {
            row.error = e.what();
            if (log) *log << "[" << to_string(method) << "] failed: " << e.what() << std::endl;
        }
        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.rows.push_back(std::move(row));
    }
    return report;
}

void write_results_csv(const std::filesystem::path& path, const BenchReport& report) {
    auto out = csv::open_out(path);
    out << "model,avg_confidence,adv_error,resampled_error\n";
    for (const auto& r : report.rows) {
        out << to_string(r.method) << ',';
        if (r.error.empty()) {
            out << csv::format(r.avg_confidence) << ',' << csv::format(r.adv_error) << ',';
            if (r.resampled_error) out << csv::format(*r.resampled_error);
        } else {
            out << ",,";
        }
        out << '\n';
    }
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

void write_manifest(const std::filesystem::path& path, const BenchReport& report) {
    auto out = csv::open_out(path);
    out << "seed=" << report.seed << '\n';
    out << "config_fingerprint=" << report.config_fingerprint << '\n';
    out << "compiler=" << __VERSION__ << '\n';
    out << "eigen=" << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << '\n';
    out << "threads=" << resolved_worker_threads() << '\n';
    for (const auto& r : report.rows) {
        const std::string name(to_string(r.method));
        out << "method." << name << ".seed=" << r.seed << '\n';
        out << "method." << name << ".wall_seconds=" << csv::format(r.wall_seconds) << '\n';
        out << "method." << name << ".status=" << (r.error.empty() ? "ok" : "failed: " + r.error) << '\n';
    }
    out << "[config]\n" << report.config_dump;
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

// -- plot data ------------------------------------------------------------------

LikelihoodGrid likelihood_grid(const LabeledFeatures& data, std::pair<double, double> w1_range,
                               std::pair<double, double> w2_range, int resolution) {
    if (data.dim() != 2) {
        throw DataError("likelihood grid needs two-dimensional features, got " + std::to_string(data.dim()));
    }
    LikelihoodGrid g;
    g.w1 = linspace(w1_range, resolution);
    g.w2 = linspace(w2_range, resolution);
    g.loglik.resize(g.w1.size(), g.w2.size());
    const Eigen::ArrayXd s = signed_labels(data.labels);
    const Eigen::ArrayXd f1 = s * data.features.col(0).array();
    const Eigen::ArrayXd f2 = s * data.features.col(1).array();
    parallel_for(static_cast<std::size_t>(g.w1.size()), [&](std::size_t i) {
        for (Eigen::Index j = 0; j < g.w2.size(); ++j) {
            g.loglik(static_cast<Eigen::Index>(i), j) = sum_log_sigmoid(g.w1[i] * f1 + g.w2[j] * f2);
        }
    });
    return g;
}

void write_grid_csv(const std::filesystem::path& path, const LikelihoodGrid& grid) {
    auto out = csv::open_out(path);
    out << "w1,w2,loglik\n";
    for (Eigen::Index i = 0; i < grid.w1.size(); ++i) {
        for (Eigen::Index j = 0; j < grid.w2.size(); ++j) {
            out << csv::format(grid.w1[i]) << ',' << csv::format(grid.w2[j]) << ','
                << csv::format(grid.loglik(i, j)) << '\n';
        }
    }
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

PosteriorSlice posterior_slice(const ModelSpec& spec, const LabeledFeatures& data,
                               const Eigen::Ref<const Vector>& map_params, Eigen::Index j,
                               std::pair<double, double> range, int resolution) {
    if (map_params.size() != spec.param_dim()) {
        throw ConfigError("posterior slice: parameter vector has the wrong length");
    }
    if (j < 0 || j >= map_params.size()) {
        throw ConfigError("posterior slice: coordinate " + std::to_string(j) + " out of range [0, " +
                          std::to_string(map_params.size()) + ")");
    }
    PosteriorSlice out;
    out.values = resolution == 1 ? Vector::Constant(1, map_params[j]) : linspace(range, resolution);
    out.log_density.resize(out.values.size());
    parallel_for(static_cast<std::size_t>(out.values.size()), [&](std::size_t k) {
        Vector p = map_params;
        p[j] = out.values[static_cast<Eigen::Index>(k)];
        out.log_density[static_cast<Eigen::Index>(k)] = log_posterior_unnorm(spec, p, data.features, data.labels);
    });
    return out;
}

void write_slice_csv(const std::filesystem::path& path, const PosteriorSlice& slice) {
    auto out = csv::open_out(path);
    out << "value,log_density\n";
    for (Eigen::Index k = 0; k < slice.values.size(); ++k) {
        out << csv::format(slice.values[k]) << ',' << csv::format(slice.log_density[k]) << '\n';
    }
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

}  // namespace advspheres
