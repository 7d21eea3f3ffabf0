#include "advspheres/bench.hpp"

#include "helpers.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace advspheres;

namespace {

WeightEnsemble ensemble_of(const Matrix& w, Method source = Method::Bootstrap) {
    WeightEnsemble e;
    e.weights = w;
    e.source = source;
    e.spec.feature_dim = static_cast<int>(w.cols());
    return e;
}

WeightEnsemble symmetric_ensemble(const Vector& w) {
    Matrix both(2, w.size());
    both.row(0) = w.transpose();
    both.row(1) = -w.transpose();
    return ensemble_of(both);
}

RunConfig small_config(int dim) {
    RunConfig cfg = profile_defaults(Profile::Ci);
    cfg.sphere.dim = dim;
    cfg.sphere.n_train = 60;
    cfg.sphere.n_val = 200;
    cfg.model.feature_dim = dim;
    cfg.ensemble_size = 10;
    cfg.attack.restarts = 3;
    cfg.attack.max_iters = 300;
    cfg.slice.burn_in = 20;
    cfg.slice.thin = 1;
    cfg.svi.opt.max_iters = 300;
    cfg.seed = 17;
    return cfg;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("avg_confidence of perfect and symmetric ensembles") {
    LabeledFeatures val;
    val.features.resize(4, 1);
    val.features << 1.0, -1.0, 1.0, -1.0;
    val.labels.resize(4);
    val.labels << 1, 0, 1, 0;
    const auto perfect = ensemble_of(Matrix::Constant(3, 1, 1e4));
    CHECK(avg_confidence(perfect, val) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(avg_confidence(perfect, val) < 1.0);
    CHECK(error_rate(perfect, val) == 0.0);
    CHECK(error_rate(ensemble_of(Matrix::Constant(1, 1, -2.0)), val) == 1.0);

    Rng rng(1);
    const auto sym = symmetric_ensemble(standard_normal(1, rng));
    CHECK(avg_confidence(sym, val) == 0.5);

    LabeledFeatures none;
    none.features.resize(0, 1);
    none.labels.resize(0);
    CHECK_THROWS_AS(avg_confidence(perfect, none), DataError);
}

TEST_CASE("avg_confidence on raw sphere data applies the normalizer") {
    SphereConfig cfg;
    cfg.dim = 4;
    cfg.n_train = 40;
    cfg.n_val = 30;
    cfg.seed = 2;
    const SphereData data = generate_dataset(cfg);
    const FeatureNormalizer norm = fit_normalizer(feature_map(data.train.points));
    Rng rng(3);
    const auto ens = ensemble_of(standard_normal(5 * 4, rng).reshaped(5, 4));
    CHECK(avg_confidence(ens, data.val, norm) == avg_confidence(ens, make_features(data.val, norm)));
}

TEST_CASE("adversarial error of a symmetric ensemble is one half") {
    Rng rng(4);
    FeatureNormalizer norm;
    norm.means = Vector::Constant(3, 0.3);
    norm.stds = Vector::Constant(3, 0.2);
    const auto sym = symmetric_ensemble(standard_normal(3, rng));
    SphereConfig radii;
    radii.dim = 3;
    AttackConfig cfg;
    cfg.restarts = 4;
    const AdversarialOutcome out = adversarial_error(sym, norm, radii, cfg);
    CHECK(std::abs(out.error - 0.5) <= 1e-12);
    CHECK(out.attacks.size() == 2);
    CHECK(out.points().size() == 2);

    cfg.side = AttackSide::Inner;
    const AdversarialOutcome inner = adversarial_error(sym, norm, radii, cfg);
    REQUIRE(inner.attacks.size() == 1);
    CHECK(inner.attacks[0].source_label == 0);
    CHECK(inner.attacks[0].radius == 1.0);
    CHECK(inner.points()[0].target == 1);
}

TEST_CASE("resampled error of a point estimate equals its adversarial error") {
    const RunConfig cfg = small_config(5);
    const SphereData data = generate_dataset(cfg.sphere);
    const FeatureNormalizer norm = fit_normalizer(feature_map(data.train.points));
    const LabeledFeatures train = make_features(data.train, norm);
    InferenceContext ctx(cfg, train);
    for (Method m : {Method::MAP, Method::MLE}) {
        const WeightEnsemble first = ctx.run(m, method_seed(cfg.seed, m, "first"));
        CHECK(first.size() == 1);
        CHECK(first.source == m);
        const AdversarialOutcome adv = adversarial_error(first, norm, cfg.sphere, cfg.attack);
        CHECK(resampled_error(m, adv.points(), ctx, norm, cfg.seed) == adv.error);
    }
}

TEST_CASE("method seeds are distinct per method and role") {
    CHECK(method_seed(1, Method::MCMC, "first") != method_seed(1, Method::MCMC, "second"));
    CHECK(method_seed(1, Method::MCMC, "first") != method_seed(1, Method::SVI, "first"));
    CHECK(method_seed(1, Method::MCMC, "first") != method_seed(2, Method::MCMC, "first"));
    CHECK(method_seed(1, Method::MCMC, "attack") == method_seed(1, Method::MCMC, "attack"));
}

TEST_CASE("inference dispatch produces ensembles of the configured size") {
    const RunConfig cfg = small_config(3);
    const SphereData data = generate_dataset(cfg.sphere);
    const FeatureNormalizer norm = fit_normalizer(feature_map(data.train.points));
    const LabeledFeatures train = make_features(data.train, norm);
    InferenceContext ctx(cfg, train);
    for (Method m : kAllMethods) {
        INFO(std::string(to_string(m)));
        const WeightEnsemble e = ctx.run(m, 5);
        CHECK(e.source == m);
        CHECK(e.dim() == 3);
        CHECK(e.size() == (m == Method::MAP || m == Method::MLE ? 1 : cfg.ensemble_size));
        CHECK(e.weights.allFinite());
    }
    CHECK(ctx.spec(PriorFamily::MeanHierarchical).feature_dim == 3);
}

TEST_CASE("MAP-only benchmark has a single row without resampled error") {
    RunConfig cfg = small_config(4);
    cfg.methods = {Method::MAP};
    const BenchReport r = run_benchmark(cfg);
    REQUIRE(r.rows.size() == 1);
    const BenchRow& row = r.rows[0];
    CHECK(row.method == Method::MAP);
    CHECK(row.error.empty());
    CHECK_FALSE(row.resampled_error.has_value());
    CHECK(row.avg_confidence > 0.0);
    CHECK(row.avg_confidence < 1.0);
    CHECK(row.adv_error > 0.0);
    CHECK(row.adv_error < 1.0);
    CHECK(r.config_fingerprint == cfg.fingerprint());
    CHECK(r.find(Method::MAP) == &r.rows[0]);
    CHECK(r.find(Method::MCMC) == nullptr);

    const auto dir = std::filesystem::temp_directory_path() / "advspheres_test_bench";
    std::filesystem::remove_all(dir);
    write_results_csv(dir / "results.csv", r);
    const auto lines = read_lines(dir / "results.csv");
    REQUIRE(lines.size() == 2);
    CHECK(lines[0] == "model,avg_confidence,adv_error,resampled_error");
    CHECK(lines[1].rfind("MAP,", 0) == 0);
    CHECK(lines[1].back() == ',');

    write_manifest(dir / "manifest.txt", r);
    std::ifstream in(dir / "manifest.txt");
    const std::string manifest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(manifest.find("config_fingerprint") != std::string::npos);
    CHECK(manifest.find("[config]") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("benchmark reports are deterministic and keep canonical order") {
    RunConfig cfg = small_config(4);
    cfg.methods = {Method::Bootstrap, Method::MAP, Method::Bootstrap, Method::Laplace};
    std::ostringstream log;
    const BenchReport a = run_benchmark(cfg, &log);
    const BenchReport b = run_benchmark(cfg);
    REQUIRE(a.rows.size() == 3);
    CHECK(a.rows[0].method == Method::MAP);
    CHECK(a.rows[1].method == Method::Bootstrap);
    CHECK(a.rows[2].method == Method::Laplace);
    CHECK(log.str().find("[Bootstrap]") != std::string::npos);
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].avg_confidence == b.rows[i].avg_confidence);
        CHECK(a.rows[i].adv_error == b.rows[i].adv_error);
        CHECK(a.rows[i].resampled_error == b.rows[i].resampled_error);
        CHECK(a.rows[i].seed == b.rows[i].seed);
    }
    CHECK(a.rows[1].resampled_error.has_value());
    for (const BenchRow& row : a.rows) {
        CHECK(row.adv_error > 0.0);
        CHECK(row.adv_error < 1.0);
        if (row.resampled_error) {
            CHECK(*row.resampled_error > 0.0);
            CHECK(*row.resampled_error < 1.0);
        }
    }
}

TEST_CASE("a failing method is recorded and the others continue") {
    RunConfig cfg = small_config(3);
    cfg.methods = {Method::MAP, Method::SVI};
    cfg.svi.opt.learning_rate = 1e300;
    cfg.svi.grad_clip = 1e300;
    const BenchReport r = run_benchmark(cfg);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].error.empty());
    CHECK_FALSE(r.rows[1].error.empty());

    const auto path = std::filesystem::temp_directory_path() / "advspheres_failed_results.csv";
    write_results_csv(path, r);
    const auto lines = read_lines(path);
    REQUIRE(lines.size() == 3);
    CHECK(lines[2] == "SVI,,,");
    std::filesystem::remove(path);
}

TEST_CASE("likelihood grid: symmetry, single-point argmax and speed") {
    // Rows (a, b) and (b, a) with the same label make the likelihood symmetric under w1 <-> w2.
    Rng rng(7);
    LabeledFeatures sym;
    sym.features.resize(40, 2);
    sym.labels.resize(40);
    for (int i = 0; i < 20; ++i) {
        const Vector p = standard_normal(2, rng);
        sym.features.row(2 * i) << p[0], p[1];
        sym.features.row(2 * i + 1) << p[1], p[0];
        sym.labels[2 * i] = sym.labels[2 * i + 1] = i % 2;
    }
    const LikelihoodGrid g = likelihood_grid(sym, {-5, 5}, {-5, 5}, 51);
    CHECK((g.loglik - g.loglik.transpose()).cwiseAbs().maxCoeff() <= 1e-10);

    LabeledFeatures one;
    one.features.resize(1, 2);
    one.features << 1.0, -2.0;
    one.labels = Eigen::VectorXi::Constant(1, 1);
    const LikelihoodGrid s = likelihood_grid(one, {-10, 10}, {-10, 10}, 41);
    Eigen::Index i = 0, j = 0;
    s.loglik.maxCoeff(&i, &j);
    CHECK(s.w1[i] == 10.0);
    CHECK(s.w2[j] == -10.0);
    one.labels[0] = 0;
    likelihood_grid(one, {-10, 10}, {-10, 10}, 41).loglik.maxCoeff(&i, &j);
    CHECK(s.w1[i] == -10.0);
    CHECK(s.w2[j] == 10.0);

    SphereConfig cfg;
    cfg.dim = 2;
    cfg.n_train = 1000;
    cfg.n_val = 2;
    const SphereDataset train = generate_split(cfg, Split::Train);
    const LabeledFeatures big = make_features(train, fit_normalizer(feature_map(train.points)));
    const auto t0 = std::chrono::steady_clock::now();
    const LikelihoodGrid timed = likelihood_grid(big, {-10, 10}, {-10, 10}, 100);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 1.0);
    CHECK(timed.loglik.rows() == 100);
    CHECK(timed.loglik.allFinite());

    LabeledFeatures three;
    three.features = Matrix::Ones(2, 3);
    three.labels = Eigen::VectorXi::Zero(2);
    CHECK_THROWS_AS(likelihood_grid(three, {-1, 1}, {-1, 1}, 5), DataError);

    const auto path = std::filesystem::temp_directory_path() / "advspheres_grid.csv";
    write_grid_csv(path, s);
    const auto lines = read_lines(path);
    CHECK(lines.size() == 1 + 41 * 41);
    CHECK(lines[0] == "w1,w2,loglik");
    std::filesystem::remove(path);
}

TEST_CASE("posterior slices") {
    LabeledFeatures none;
    none.features.resize(0, 3);
    none.labels.resize(0);
    ModelSpec spec;
    spec.feature_dim = 3;
    const PosteriorSlice s = posterior_slice(spec, none, Vector::Zero(3), 1, {-300, 300}, 601);
    REQUIRE(s.values.size() == 601);
    const double h = s.values[1] - s.values[0];
    for (int i : {100, 300, 500}) {
        const double curvature = (s.log_density[i + 1] - 2 * s.log_density[i] + s.log_density[i - 1]) / (h * h);
        CHECK(std::abs(curvature + 1.0 / (100.0 * 100.0)) < 1e-6);
    }

    Vector map(3);
    map << 0.5, -2.0, 4.0;
    const PosteriorSlice single = posterior_slice(spec, none, map, 2, {-1, 1}, 1);
    REQUIRE(single.values.size() == 1);
    CHECK(single.values[0] == 4.0);
    CHECK(single.log_density[0] == doctest::Approx(log_posterior_unnorm(spec, map, none.features, none.labels)));

    CHECK_THROWS_AS(posterior_slice(spec, none, map, 3, {-1, 1}, 5), ConfigError);
    CHECK_THROWS_AS(posterior_slice(spec, none, Vector::Zero(2), 0, {-1, 1}, 5), ConfigError);

    const auto path = std::filesystem::temp_directory_path() / "advspheres_slice.csv";
    write_slice_csv(path, s);
    const auto lines = read_lines(path);
    CHECK(lines.size() == 602);
    CHECK(lines[0] == "value,log_density");
    std::filesystem::remove(path);
}

TEST_CASE("two MCMC chains agree on the adversarial points of a 2D problem") {
    RunConfig cfg = profile_defaults(Profile::Ci);
    cfg.sphere.dim = 2;
    cfg.sphere.n_train = 100;
    cfg.sphere.n_val = 2;
    cfg.sphere.seed = 3;
    cfg.model.feature_dim = 2;
    cfg.ensemble_size = 1000;
    cfg.slice.burn_in = 500;
    cfg.slice.thin = 5;
    cfg.attack.restarts = 10;
    cfg.seed = 8;
    const SphereData data = generate_dataset(cfg.sphere);
    const FeatureNormalizer norm = fit_normalizer(feature_map(data.train.points));
    const LabeledFeatures train = make_features(data.train, norm);
    InferenceContext ctx(cfg, train);
    const WeightEnsemble first = ctx.run(Method::MCMC, method_seed(cfg.seed, Method::MCMC, "first"));
    AttackConfig attack = cfg.attack;
    attack.step_size = step_size_for(Method::MCMC, cfg.attack);
    const AdversarialOutcome adv = adversarial_error(first, norm, cfg.sphere, attack);
    const double resampled = resampled_error(Method::MCMC, adv.points(), ctx, norm, cfg.seed);
    INFO("adv ", adv.error, " resampled ", resampled);
    CHECK(std::abs(resampled - adv.error) < 0.05);
}
