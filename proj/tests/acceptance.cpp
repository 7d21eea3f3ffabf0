// Acceptance checks, one per criterion. Usage: acceptance <1..10> [work_dir]
// Prints one PASS/FAIL line and exits 0 on PASS, 1 on FAIL.

#include "advspheres/bench.hpp"
#include "advspheres/config.hpp"
#include "advspheres/gaussian.hpp"
#include "advspheres/mcmc.hpp"
#include "advspheres/point.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <sys/wait.h>

using namespace advspheres;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x) {
    std::ostringstream s;
    s.precision(6);
    s << x;
    return s.str();
}

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
    Vector g(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        g[j] = (f(xp) - f(xm)) / (2 * h);
    }
    return g;
}

double max_rel_error(const Vector& a, const Vector& b) {
    return ((a - b).array().abs() / b.array().abs().max(1.0)).maxCoeff();
}

/// Mean and its standard error by batch means (100 batches), valid for correlated chains.
struct Estimate {
    double mean;
    double se;
};

Estimate batch_means(const std::vector<double>& xs) {
    const std::size_t batches = 100;
    const std::size_t len = xs.size() / batches;
    std::vector<double> means(batches, 0.0);
    for (std::size_t b = 0; b < batches; ++b) {
        for (std::size_t i = 0; i < len; ++i) means[b] += xs[b * len + i];
        means[b] /= double(len);
    }
    double m = 0.0;
    for (double v : means) m += v;
    m /= double(batches);
    double var = 0.0;
    for (double v : means) var += (v - m) * (v - m);
    var /= double(batches - 1);
    return {m, std::sqrt(var / double(batches))};
}

struct PaperData {
    RunConfig cfg;
    FeatureNormalizer norm;
    LabeledFeatures train;
    LabeledFeatures val;
};

PaperData paper_data() {
    PaperData p;
    p.cfg = build_config(Profile::Paper, {}, {});
    const SphereData data = generate_dataset(p.cfg.sphere);
    p.norm = fit_normalizer(feature_map(data.train.points));
    p.train = make_features(data.train, p.norm);
    p.val = make_features(data.val, p.norm);
    return p;
}

Outcome map_error_rate() {
    const PaperData p = paper_data();
    ModelSpec spec = p.cfg.model;
    spec.feature_dim = p.cfg.sphere.dim;
    const MapFit map = fit_map(spec, p.train, p.cfg.optimizer, true);
    const double err = error_rate(map.ensemble, p.val);
    return {err < 1e-5, "MAP validation error rate " + fmt(err) + " over " + std::to_string(p.val.size()) +
                            " points (need < 1e-5)"};
}

Outcome map_adversarial() {
    const PaperData p = paper_data();
    ModelSpec spec = p.cfg.model;
    spec.feature_dim = p.cfg.sphere.dim;
    const MapFit map = fit_map(spec, p.train, p.cfg.optimizer, true);
    AttackConfig attack = p.cfg.attack;
    attack.seed = method_seed(p.cfg.seed, Method::MAP, "attack");
    const AdversarialOutcome r = adversarial_error(map.ensemble, p.norm, p.cfg.sphere, attack);
    std::string per_side;
    for (const AttackResult& a : r.attacks) per_side += " " + fmt(a.best_target_prob);
    return {r.error > 0.99, "MAP best target probability " + fmt(r.error) + " (need > 0.99); per source sphere:" +
                                per_side};
}

Outcome ordering_battery(const fs::path& work) {
    RunConfig cfg = build_config(Profile::Paper, {}, {});
    const BenchReport report = run_benchmark(cfg, &std::cerr);
    fs::create_directories(work);
    write_results_csv(work / "results.csv", report);
    write_manifest(work / "manifest.txt", report);

    std::ostringstream detail;
    bool ok = true;
    for (const BenchRow& row : report.rows) {
        detail << "\n  " << to_string(row.method) << ": conf " << fmt(row.avg_confidence) << " adv "
               << fmt(row.adv_error) << " resampled "
               << (row.resampled_error ? fmt(*row.resampled_error) : std::string("-"))
               << (row.error.empty() ? "" : " FAILED: " + row.error);
        ok = ok && row.error.empty();
    }
    const auto get = [&](Method m) -> const BenchRow& {
        const BenchRow* r = report.find(m);
        if (!r) throw ConfigError("missing row " + std::string(to_string(m)));
        return *r;
    };
    const double margin = 0.01;
    const BenchRow& map = get(Method::MAP);
    const BenchRow& mcmc = get(Method::MCMC);
    const BenchRow& boot = get(Method::Bootstrap);
    const BenchRow& laplace = get(Method::Laplace);
    const BenchRow& mean_hier = get(Method::MCMCMeanHier);
    const auto check = [&](const char* name, bool cond) {
        detail << "\n  (" << name << ") " << (cond ? "holds" : "violated");
        ok = ok && cond;
    };
    check("b: MCMC adv < MAP adv", mcmc.adv_error < map.adv_error - margin);
    check("c: Bootstrap adv > MCMC adv", boot.adv_error > mcmc.adv_error + margin);
    check("d: Bootstrap resampled > MCMC resampled",
          boot.resampled_error && mcmc.resampled_error && *boot.resampled_error > *mcmc.resampled_error + margin);
    check("e: Laplace conf < MCMC conf", laplace.avg_confidence < mcmc.avg_confidence - margin);
    check("f: MeanHier conf > MCMC conf", mean_hier.avg_confidence > mcmc.avg_confidence + margin);
    check("f: MeanHier adv <= MCMC adv", mean_hier.adv_error < mcmc.adv_error - margin);
    return {ok, "paper-profile ordering battery, margin 0.01:" + detail.str()};
}

Outcome sampler_calibration() {
    Rng rng(2024);
    std::ostringstream detail;
    bool ok = true;
    const auto within = [&](const char* name, const Estimate& e, double truth) {
        const double z = std::abs(e.mean - truth) / e.se;
        detail << "\n  " << name << " " << fmt(e.mean) << " vs " << fmt(truth) << " (" << fmt(z) << " SE)";
        ok = ok && z < 5.0;
    };

    const int n = 100000;
    std::vector<double> x1, x2;
    double x = 0.0;
    const auto normal = [](double t) { return -0.5 * t * t; };
    for (int i = 0; i < n; ++i) {
        x = slice_sample_coordinate(normal, x, 1.0, 100, rng).x;
        x1.push_back(x);
        x2.push_back(x * x);
    }
    within("N(0,1) mean", batch_means(x1), 0.0);
    within("N(0,1) E[x^2]", batch_means(x2), 1.0);

    // 2D Gaussian with unit variances and correlation 0.8, one coordinate sweep per draw.
    const double rho = 0.8;
    const double inv = 1.0 / (1.0 - rho * rho);
    double a = 0.0, b = 0.0;
    std::vector<double> ma, mb, va, vb, cab;
    for (int i = 0; i < n; ++i) {
        a = slice_sample_coordinate([&](double t) { return -0.5 * inv * (t * t - 2 * rho * t * b); }, a, 1.0,
                                    100, rng)
                .x;
        b = slice_sample_coordinate([&](double t) { return -0.5 * inv * (t * t - 2 * rho * a * t); }, b, 1.0,
                                    100, rng)
                .x;
        ma.push_back(a);
        mb.push_back(b);
        va.push_back(a * a);
        vb.push_back(b * b);
        cab.push_back(a * b);
    }
    within("2D mean[0]", batch_means(ma), 0.0);
    within("2D mean[1]", batch_means(mb), 0.0);
    within("2D var[0]", batch_means(va), 1.0);
    within("2D var[1]", batch_means(vb), 1.0);
    within("2D cov", batch_means(cab), rho);
    return {ok, "slice sampler moments within 5 batch-means SE over 1e5 draws:" + detail.str()};
}

LabeledFeatures random_problem(int n, int d, Rng& rng) {
    LabeledFeatures out;
    out.features = standard_normal(static_cast<Eigen::Index>(n) * d, rng).reshaped(n, d);
    out.labels.resize(n);
    for (int i = 0; i < n; ++i) out.labels[i] = static_cast<int>(rng() % 2);
    return out;
}

Outcome gradient_suite() {
    Rng rng(77);
    double post = 0.0, elbo = 0.0, attack = 0.0;
    const PriorFamily families[] = {PriorFamily::Isotropic, PriorFamily::ScaleHierarchical,
                                    PriorFamily::MeanHierarchical};
    for (int rep = 0; rep < 100; ++rep) {
        for (PriorFamily family : families) {
            const int d = 1 + static_cast<int>(rng() % 8);
            const auto data = random_problem(10, d, rng);
            ModelSpec spec;
            spec.prior_family = family;
            spec.feature_dim = d;
            spec.sigma_w = 3.0;
            const Vector theta = standard_normal(spec.param_dim(), rng);
            const Vector g = grad_log_posterior(spec, theta, data.features, data.labels);
            const Vector fd = central_difference(
                [&](const Vector& t) { return log_posterior_unnorm(spec, t, data.features, data.labels); }, theta,
                1e-5);
            post = std::max(post, max_rel_error(g, fd));

            // ELBO with common random numbers, D <= 4.
            const int k = 1 + static_cast<int>(rng() % 4);
            ModelSpec small = spec;
            small.feature_dim = k;
            small.sigma_w = 2.0;
            const auto sdata = random_problem(8, k, rng);
            const VariationalTarget target = make_variational_target(small, sdata, 0);
            const int p = small.param_dim();
            VariationalParams vp;
            vp.mean = 0.5 * standard_normal(p, rng);
            vp.log_diag = 0.3 * standard_normal(p, rng) - Vector::Constant(p, 0.7);
            vp.off = 0.15 * standard_normal(p * p, rng).reshaped(p, p);
            vp.off.triangularView<Eigen::Upper>().setZero();
            const Matrix eps = standard_normal(p * 3, rng).reshaped(p, 3);
            const ElboGradient eg = elbo_with_gradient(target, vp, eps);
            const auto value = [&](const VariationalParams& q) { return elbo_with_gradient(target, q, eps).elbo; };
            const auto fd_one = [&](double analytic, double& slot) {
                const double keep = slot;
                slot = keep + 1e-6;
                const double up = value(vp);
                slot = keep - 1e-6;
                const double down = value(vp);
                slot = keep;
                const double est = (up - down) / 2e-6;
                elbo = std::max(elbo, std::abs(analytic - est) / std::max(1.0, std::abs(est)));
            };
            for (int i = 0; i < p; ++i) {
                fd_one(eg.d_mean[i], vp.mean[i]);
                fd_one(eg.d_log_diag[i], vp.log_diag[i]);
                for (int j = 0; j < i; ++j) fd_one(eg.d_off(i, j), vp.off(i, j));
            }
        }

        // Attack objectives on a random D=5 ensemble.
        const int d = 5;
        FeatureNormalizer norm;
        norm.means = (0.1 * standard_normal(d, rng).array().abs() + 0.2).matrix();
        norm.stds = (0.2 * standard_normal(d, rng).array().abs() + 0.1).matrix();
        WeightEnsemble ens;
        ens.weights = 0.5 * standard_normal(4 * d, rng).reshaped(4, d);
        ens.spec.feature_dim = d;
        const Vector x = project_to_sphere(standard_normal(d, rng), 1.0);
        const int tgt = rep % 2;
        for (auto f : {surrogate_objective, true_objective}) {
            const Vector g = f(ens, x, tgt, norm).grad;
            const Vector fd = central_difference([&](const Vector& y) { return f(ens, y, tgt, norm).value; }, x, 1e-5);
            attack = std::max(attack, max_rel_error(g, fd));
        }
    }
    const bool ok = post < 1e-5 && elbo < 1e-3 && attack < 1e-5;
    return {ok, "max relative FD error: log-posterior " + fmt(post) + " (< 1e-5), ELBO " + fmt(elbo) +
                    " (< 1e-3), attack objectives " + fmt(attack) + " (< 1e-5)"};
}

Outcome elbo_bound() {
    SphereConfig sc;
    sc.dim = 2;
    sc.n_train = 20;
    sc.n_val = 2;
    sc.seed = 5;
    const SphereDataset train = generate_split(sc, Split::Train);
    const LabeledFeatures data = make_features(train, fit_normalizer(feature_map(train.points)));
    ModelSpec spec;
    spec.feature_dim = 2;
    spec.sigma_w = 3.0;

    const int res = 1601;
    const double lim = 24.0;
    const double h = 2 * lim / (res - 1);
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(res) * res);
    for (int i = 0; i < res; ++i) {
        for (int j = 0; j < res; ++j) {
            Vector w(2);
            w << -lim + i * h, -lim + j * h;
            terms.push_back(log_posterior_unnorm(spec, w, data.features, data.labels));
        }
    }
    const double top = *std::max_element(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - top);
    const double log_evidence = top + std::log(acc * h * h);

    SviConfig cfg;
    cfg.seed = 3;
    const SviFit svi = svi_fit(spec, data, cfg, VariationalFamily::FullCovGaussian);
    Rng rng(8);
    const ElboEstimate e = elbo_estimate(spec, data, svi.posterior, 10000, rng);
    return {e.value <= log_evidence + 3 * e.std_error,
            "ELBO " + fmt(e.value) + " +- " + fmt(e.std_error) + " vs quadrature log evidence " + fmt(log_evidence)};
}

Outcome laplace_exactness() {
    double worst = 0.0;
    for (int d : {1, 2, 5, 20}) {
        LabeledFeatures none;
        none.features.resize(0, d);
        none.labels.resize(0);
        ModelSpec spec;
        spec.feature_dim = d;
        const LaplaceFit fit = laplace_fit(spec, none, OptimizerConfig{});
        const double s2 = spec.sigma_w * spec.sigma_w;
        worst = std::max(worst, fit.posterior.mean.cwiseAbs().maxCoeff());
        worst = std::max(worst, (fit.posterior.covariance() - s2 * Matrix::Identity(d, d)).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-9, "zero-data Laplace max deviation from N(0, sigma_w^2 I): " + fmt(worst) + " (<= 1e-9)"};
}

Outcome stability_regression() {
    FeatureNormalizer norm;
    norm.means = Vector::Zero(2);
    norm.stds = Vector::Ones(2);
    Vector x(2);
    x << 1.0, 0.0;
    WeightEnsemble ens;
    ens.weights.resize(2, 2);
    ens.weights << 500.0, 0.0, 500.0, 0.0;
    ens.spec.feature_dim = 2;
    const double naive_sigma = 1.0 / (1.0 + std::exp(-500.0));
    const double naive = naive_sigma * (1.0 - naive_sigma);
    // Both members sit at a = 500; the surrogate sums log sigma(-a) = -500 over members, d/dx0 = -2 * 500 each.
    const ObjectiveValue s = surrogate_objective(ens, x, 0, norm);
    const ObjectiveValue t = true_objective(ens, x, 0, norm);
    const bool ok = naive == 0.0 && s.grad.allFinite() && t.grad.allFinite() &&
                    std::abs(s.grad[0] + 2000.0) <= 1e-9 && t.grad[0] < 0.0 && std::abs(s.value + 1000.0) <= 1e-9;
    return {ok, "|a| = 500: naive sigmoid-chain gradient " + fmt(naive) + ", surrogate gradient " +
                    fmt(s.grad[0]) + " (expect -2000), true-objective gradient " + fmt(t.grad[0])};
}

Outcome attack_oracle() {
    double worst = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
        SphereConfig sc;
        sc.dim = 2;
        sc.n_train = 60;
        sc.n_val = 2;
        sc.seed = seed;
        const SphereDataset train = generate_split(sc, Split::Train);
        const FeatureNormalizer norm = fit_normalizer(feature_map(train.points));
        const LabeledFeatures data = make_features(train, norm);
        ModelSpec spec;
        spec.feature_dim = 2;
        const MapFit map = fit_map(spec, data, OptimizerConfig{}, true);
        const BootstrapFit boot = fit_bootstrap(spec, data, OptimizerConfig{}, 20, seed);
        AttackConfig cfg;
        cfg.restarts = 10;
        cfg.seed = seed;
        for (const WeightEnsemble* e : {&map.ensemble, &boot.ensemble}) {
            for (int source : {0, 1}) {
                const double radius = sc.radius(source);
                const AttackResult r = run_attack(*e, norm, radius, source, cfg);
                double grid = 0.0;
                const int n = 200000;
                for (int i = 0; i < n; ++i) {
                    const double t = 2.0 * std::numbers::pi * i / n;
                    Vector x(2);
                    x << radius * std::cos(t), radius * std::sin(t);
                    grid = std::max(grid, target_probability(*e, x, 1 - source, norm));
                }
                worst = std::max(worst, std::abs(r.best_target_prob - grid));
            }
        }
    }
    return {worst < 1e-3, "max |attack - angular grid| target probability on D=2: " + fmt(worst) + " (< 1e-3)"};
}

Outcome bench_determinism(const fs::path& work) {
    std::string first;
    for (const char* run : {"a", "b"}) {
        const fs::path dir = work / run;
        fs::remove_all(dir);
        const std::string cmd =
            std::string(ADVSPHERES_CLI) + " bench --profile ci --seed 11 -o " + dir.string() + " 2>/dev/null";
        const int status = std::system(cmd.c_str());
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
            return {false, "ci bench exited with status " + std::to_string(status)};
        }
        std::ifstream in(dir / "results.csv", std::ios::binary);
        std::stringstream buf;
        buf << in.rdbuf();
        if (first.empty()) {
            first = buf.str();
        } else {
            const bool same = buf.str() == first;
            return {same && !first.empty(), std::string("two ci bench runs with seed 11: results.csv ") +
                                                (same ? "bitwise identical" : "differs")};
        }
    }
    return {false, "unreachable"};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <1..10> [work_dir]\n";
        return 2;
    }
    const int which = std::atoi(argv[1]);
    const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "advspheres_acceptance";
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
        switch (which) {
            case 1: out = map_error_rate(); break;
            case 2: out = map_adversarial(); break;
            case 3: out = ordering_battery(work / "criterion3"); break;
            case 4: out = sampler_calibration(); break;
            case 5: out = gradient_suite(); break;
            case 6: out = elbo_bound(); break;
            case 7: out = laplace_exactness(); break;
            case 8: out = stability_regression(); break;
            case 9: out = attack_oracle(); break;
            case 10: out = bench_determinism(work / "criterion10"); break;
            default: std::cerr << "unknown criterion " << which << '\n'; return 2;
        }
    } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << which << ": " << out.detail << " [" << fmt(secs)
              << " s]\n";
    return out.pass ? 0 : 1;
}
