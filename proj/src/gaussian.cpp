#include "advspheres/gaussian.hpp"

#include "advspheres/csv.hpp"

#include <algorithm>
#include <memory>
#include <numeric>

namespace advspheres {

Matrix GaussianPosterior::covariance() const {
    return chol_cov.triangularView<Eigen::Lower>() * chol_cov.transpose();
}

void GaussianPosterior::validate() const {
    if (chol_cov.rows() != mean.size() || chol_cov.cols() != mean.size()) {
        throw DataError("Gaussian posterior: Cholesky factor shape does not match the mean");
    }
    if (!mean.allFinite() || !chol_cov.allFinite()) {
        throw DataError("Gaussian posterior: non-finite entries");
    }
    for (Eigen::Index i = 0; i < chol_cov.rows(); ++i) {
        if (!(chol_cov(i, i) > 0.0)) {
            throw DataError("Gaussian posterior: non-positive Cholesky diagonal");
        }
        for (Eigen::Index j = i + 1; j < chol_cov.cols(); ++j) {
            if (chol_cov(i, j) != 0.0) {
                throw DataError("Gaussian posterior: Cholesky factor is not lower triangular");
            }
        }
    }
}

double log_density(const GaussianPosterior& q, const Eigen::Ref<const Vector>& x) {
    const Vector z = q.chol_cov.triangularView<Eigen::Lower>().solve(x - q.mean);
    const double log_det = q.chol_cov.diagonal().array().log().sum();
    return -0.5 * z.squaredNorm() - log_det - 0.5 * double(q.dim()) * kLog2Pi;
}

double kl_divergence(const GaussianPosterior& q, const GaussianPosterior& p) {
    const auto lp = p.chol_cov.triangularView<Eigen::Lower>();
    const Matrix a = lp.solve(Matrix(q.chol_cov.triangularView<Eigen::Lower>()));
    const Vector diff = lp.solve(p.mean - q.mean);
    const double log_det_p = 2.0 * p.chol_cov.diagonal().array().log().sum();
    const double log_det_q = 2.0 * q.chol_cov.diagonal().array().log().sum();
    return 0.5 * (a.squaredNorm() + diff.squaredNorm() - double(q.dim()) + log_det_p - log_det_q);
}

double kl_to_diagonal_prior(const GaussianPosterior& q, const Eigen::Ref<const Vector>& prior_variances) {
    const Eigen::ArrayXd inv_var = prior_variances.array().inverse();
    const Matrix lower = q.chol_cov.triangularView<Eigen::Lower>();
    const double trace = (lower.array().square().colwise() * inv_var).sum();
    const double quad = (q.mean.array().square() * inv_var).sum();
    const double log_det_p = prior_variances.array().log().sum();
    const double log_det_q = 2.0 * q.chol_cov.diagonal().array().log().sum();
    return 0.5 * (trace + quad - double(q.dim()) + log_det_p - log_det_q);
}

// -- Laplace -----------------------------------------------------------------

LaplaceFit laplace_at(const ModelSpec& spec, const LabeledFeatures& data, MapFit map) {
    const Matrix h = hessian_neg_log_posterior(spec, map.params, data.features, data.labels);
    const Eigen::Index d = h.rows();
    // Factor the index-reversed Hessian, P H P = C C^T. Then
    // H^{-1} = (P C^{-T} P)(P C^{-T} P)^T and P C^{-T} P is lower triangular.
    const Matrix reversed = h.reverse();
    const double jitters[] = {0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2};
    for (double jitter : jitters) {
        Eigen::LLT<Matrix> llt(reversed + jitter * Matrix::Identity(d, d));
        if (llt.info() != Eigen::Success) {
            continue;
        }
        const Matrix c = llt.matrixL();
        Matrix c_inv_t = c.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d)).transpose();
        Matrix lower = c_inv_t.reverse();
        lower.triangularView<Eigen::StrictlyUpper>().setZero();
        if (!lower.allFinite() || (lower.diagonal().array() <= 0.0).any()) {
            continue;
        }
        LaplaceFit fit;
        fit.posterior.mean = map.params;
        fit.posterior.chol_cov = std::move(lower);
        fit.posterior.spec = spec;
        fit.posterior.source = Method::Laplace;
        fit.map = std::move(map);
        fit.jitter = jitter;
        return fit;
    }
    throw NumericalError("laplace: Hessian is not positive definite even with jitter 1e-2");
}

LaplaceFit laplace_fit(const ModelSpec& spec, const LabeledFeatures& data, const OptimizerConfig& opt) {
    if (spec.prior_family != PriorFamily::Isotropic) {
        throw ConfigError("laplace_fit: only the isotropic model is supported");
    }
    return laplace_at(spec, data, fit_map(spec, data, opt, true));
}

WeightEnsemble gaussian_sample(const GaussianPosterior& post, int m, Rng& rng) {
    if (m < 1) {
        throw ConfigError("gaussian_sample: sample count must be positive");
    }
    WeightEnsemble ens;
    ens.weights.resize(m, post.spec.feature_dim);
    ens.source = post.source;
    ens.spec = post.spec;
    const auto lower = post.chol_cov.triangularView<Eigen::Lower>();
    for (int i = 0; i < m; ++i) {
        const Vector eps = standard_normal(post.dim(), rng);
        const Vector theta = post.mean + lower * eps;
        ens.weights.row(i) = to_weights(post.spec, theta).transpose();
    }
    return ens;
}

// -- SVI -------------------------------------------------------------------

void SviConfig::validate() const {
    opt.validate();
    if (mc_samples < 1) throw ConfigError("svi mc_samples must be at least 1");
    if (!(grad_clip > 0.0)) throw ConfigError("svi grad_clip must be positive");
    if (!(init_scale > 0.0)) throw ConfigError("svi init_scale must be positive");
    if (!(hier_learning_rate > 0.0)) throw ConfigError("svi hier_learning_rate must be positive");
}

Matrix VariationalParams::chol() const {
    Matrix l = off.triangularView<Eigen::StrictlyLower>();
    l.diagonal() = log_diag.array().exp().matrix();
    return l;
}

VariationalParams VariationalParams::from(const GaussianPosterior& q,
                                          std::vector<Eigen::Index> independent_rows) {
    VariationalParams p;
    p.mean = q.mean;
    p.log_diag = q.chol_cov.diagonal().array().log().matrix();
    p.off = q.chol_cov.triangularView<Eigen::StrictlyLower>();
    p.independent_rows = std::move(independent_rows);
    for (Eigen::Index r : p.independent_rows) {
        p.off.row(r).setZero();
    }
    return p;
}

namespace {

/// Shared body of the exact and the stochastic ELBO gradient.
template <typename DataTerm>
ElboGradient elbo_gradient_impl(const VariationalTarget& target, const VariationalParams& params,
                                const Eigen::Ref<const Matrix>& eps, DataTerm&& data_term) {
    const Eigen::Index k = params.mean.size();
    const Matrix l = params.chol();
    const Vector diag = l.diagonal();
    ElboGradient out;
    out.d_mean = Vector::Zero(k);
    out.d_log_diag = Vector::Zero(k);
    out.d_off = Matrix::Zero(k, k);
    Vector g(k);
    Vector gp(k);
    const Eigen::Index s = eps.cols();
    for (Eigen::Index c = 0; c < s; ++c) {
        const auto e = eps.col(c);
        const Vector theta = params.mean + l.triangularView<Eigen::Lower>() * e;
        double value = data_term(theta, g);
        if (!target.prior_variances) {
            value += target.log_prior(theta, gp);
            g += gp;
        }
        out.elbo += value;
        out.d_mean += g;
        out.d_log_diag.array() += g.array() * e.array() * diag.array();
        out.d_off.noalias() += g * e.transpose();
    }
    const double inv_s = 1.0 / double(s);
    out.elbo *= inv_s;
    out.d_mean *= inv_s;
    out.d_log_diag *= inv_s;
    out.d_off *= inv_s;

    if (target.prior_variances) {
        const Eigen::ArrayXd inv_var = target.prior_variances->array().inverse();
        GaussianPosterior q;
        q.mean = params.mean;
        q.chol_cov = l;
        out.elbo -= kl_to_diagonal_prior(q, *target.prior_variances);
        out.d_mean.array() -= params.mean.array() * inv_var;
        out.d_off -= Matrix(l.array().colwise() * inv_var);
        out.d_log_diag.array() -= diag.array().square() * inv_var - 1.0;
    } else {
        out.elbo += 0.5 * double(k) * (1.0 + kLog2Pi) + params.log_diag.sum();
        out.d_log_diag.array() += 1.0;
    }
    // Only the strictly lower triangle is a parameter.
    out.d_off.triangularView<Eigen::Upper>().setZero();
    for (Eigen::Index r : params.independent_rows) {
        out.d_off.row(r).setZero();
    }
    return out;
}

}  // namespace

ElboGradient elbo_with_gradient(const VariationalTarget& target, const VariationalParams& params,
                                const Eigen::Ref<const Matrix>& eps) {
    return elbo_gradient_impl(target, params, eps,
                              [&](const Vector& theta, Vector& g) { return target.log_lik(theta, g); });
}

VariationalTarget make_variational_target(const ModelSpec& spec, const LabeledFeatures& data,
                                          int batch_size) {
    spec.validate();
    if (data.dim() != spec.feature_dim) {
        throw DataError("variational target: data dimension does not match model feature_dim");
    }
    VariationalTarget t;
    t.dim = spec.param_dim();
    t.objective_scale = std::max<double>(1.0, double(data.size()));
    t.log_lik = [spec, &data](const Vector& theta, Vector& grad) {
        const Vector w = to_weights(spec, theta);
        grad = chain_weight_gradient(spec, theta,
                                     grad_log_likelihood_weights(w, data.features, data.labels));
        return log_likelihood(w, data.features, data.labels);
    };

    const Eigen::Index n = data.size();
    if (batch_size <= 0 || batch_size >= n) {
        t.log_lik_stochastic = [ll = t.log_lik](const Vector& theta, Vector& grad, Rng&) {
            return ll(theta, grad);
        };
    } else {
        // Epoch-wise shuffled minibatches; the likelihood is rescaled by n / batch.
        struct Batches {
            std::vector<Eigen::Index> order;
            Eigen::Index cursor;
            Eigen::ArrayXd signs;
        };
        auto state = std::make_shared<Batches>();
        state->order.resize(static_cast<std::size_t>(n));
        std::iota(state->order.begin(), state->order.end(), Eigen::Index{0});
        state->cursor = n;
        state->signs = signed_labels(data.labels);
        t.log_lik_stochastic = [spec, &data, state, batch_size, n](const Vector& theta, Vector& grad,
                                                                   Rng& rng) {
            const Vector w = to_weights(spec, theta);
            Vector gw = Vector::Zero(w.size());
            double ll = 0.0;
            for (int b = 0; b < batch_size; ++b) {
                if (state->cursor == n) {
                    std::shuffle(state->order.begin(), state->order.end(), rng);
                    state->cursor = 0;
                }
                const Eigen::Index i = state->order[static_cast<std::size_t>(state->cursor++)];
                const double m = state->signs[i] * data.features.row(i).dot(w);
                ll -= softplus(-m);
                gw += (state->signs[i] * sigmoid(-m)) * data.features.row(i).transpose();
            }
            const double scale = double(n) / double(batch_size);
            grad = chain_weight_gradient(spec, theta, gw * scale);
            return ll * scale;
        };
    }

    switch (spec.prior_family) {
        case PriorFamily::Isotropic:
            t.prior_variances = Vector::Constant(spec.feature_dim, spec.sigma_w * spec.sigma_w);
            break;
        case PriorFamily::ScaleHierarchical: {
            Vector var = Vector::Ones(spec.param_dim());
            var[spec.feature_dim] = spec.sigma_v * spec.sigma_v;
            t.prior_variances = var;
            break;
        }
        case PriorFamily::MeanHierarchical:
            t.log_prior = [spec](const Vector& theta, Vector& grad) {
                grad = grad_log_prior(spec, theta);
                return log_prior(spec, theta);
            };
            break;
    }
    return t;
}

SviFit svi_optimize(const VariationalTarget& target, VariationalParams params, const SviConfig& cfg) {
    cfg.validate();
    const Eigen::Index k = params.mean.size();
    if (k != target.dim) {
        throw ConfigError("svi: variational dimension does not match the target");
    }
    Rng rng(cfg.seed);
    auto stochastic = target.log_lik_stochastic;
    if (!stochastic) {
        stochastic = [&](const Vector& theta, Vector& g, Rng&) { return target.log_lik(theta, g); };
    }

    Vector v_mean = Vector::Zero(k);
    Vector v_log_diag = Vector::Zero(k);
    Matrix v_off = Matrix::Zero(k, k);
    const double lr = cfg.opt.learning_rate;
    const double mom = cfg.opt.momentum;
    const double inv_scale = 1.0 / target.objective_scale;
    Matrix eps(k, cfg.mc_samples);
    std::normal_distribution<double> normal(0.0, 1.0);

    SviFit fit;
    for (int step = 0; step < cfg.opt.max_iters; ++step) {
        for (Eigen::Index c = 0; c < eps.cols(); ++c) {
            for (Eigen::Index r = 0; r < k; ++r) {
                eps(r, c) = normal(rng);
            }
        }
        ElboGradient g = elbo_gradient_impl(
            target, params, eps, [&](const Vector& theta, Vector& grad) { return stochastic(theta, grad, rng); });
        if (!std::isfinite(g.elbo) || !g.d_mean.allFinite() || !g.d_log_diag.allFinite() ||
            !g.d_off.allFinite()) {
            throw NumericalError("svi diverged: non-finite ELBO or gradient at step " +
                                 std::to_string(step));
        }
        if (step % 100 == 0) {
            fit.elbo_trace.push_back(g.elbo);
        }
        g.d_mean *= inv_scale;
        g.d_log_diag *= inv_scale;
        g.d_off *= inv_scale;
        const double norm = std::sqrt(g.d_mean.squaredNorm() + g.d_log_diag.squaredNorm() +
                                      g.d_off.squaredNorm());
        if (norm > cfg.grad_clip) {
            const double shrink = cfg.grad_clip / norm;
            g.d_mean *= shrink;
            g.d_log_diag *= shrink;
            g.d_off *= shrink;
        }
        v_mean = mom * v_mean + g.d_mean;
        v_log_diag = mom * v_log_diag + g.d_log_diag;
        v_off = mom * v_off + g.d_off;
        params.mean += lr * v_mean;
        params.log_diag += lr * v_log_diag;
        params.off += lr * v_off;
        fit.steps = step + 1;
    }
    fit.posterior.mean = params.mean;
    fit.posterior.chol_cov = params.chol();
    if (!fit.posterior.chol_cov.allFinite() || !fit.posterior.mean.allFinite()) {
        throw NumericalError("svi diverged: non-finite variational parameters");
    }
    return fit;
}

SviFit svi_fit(const ModelSpec& spec, const LabeledFeatures& data, const SviConfig& cfg,
               VariationalFamily family, std::optional<Vector> init_mean) {
    cfg.validate();
    std::vector<Eigen::Index> independent;
    if (family == VariationalFamily::HierarchicalFactorized) {
        if (spec.prior_family != PriorFamily::ScaleHierarchical) {
            throw ConfigError("hierarchical variational family requires the scale-hierarchical model");
        }
        independent.push_back(spec.feature_dim);
    }
    const VariationalTarget target = make_variational_target(spec, data, cfg.opt.batch_size);

    GaussianPosterior init;
    init.spec = spec;
    if (init_mean) {
        init.mean = std::move(*init_mean);
    } else if (cfg.init_from_map) {
        init.mean = fit_map(spec, data, OptimizerConfig{}, true).params;
    } else {
        init.mean = Vector::Zero(spec.param_dim());
    }
    if (init.mean.size() != spec.param_dim()) {
        throw ConfigError("svi_fit: initial mean has the wrong length");
    }
    init.chol_cov = cfg.init_scale * Matrix::Identity(spec.param_dim(), spec.param_dim());

    SviConfig run = cfg;
    if (family == VariationalFamily::HierarchicalFactorized) {
        // Same weights, but with v chosen so that |z|^2 = D: the scale MAP sits at
        // tiny z and large v, where init_scale noise on z flips the sign of w.
        const Vector w = to_weights(spec, init.mean);
        const double msq = w.squaredNorm() / double(spec.feature_dim);
        if (msq > 0.0 && std::isfinite(msq)) {
            const double v = std::log(msq);
            init.mean.head(spec.feature_dim) = w * std::exp(-0.5 * v);
            init.mean[spec.feature_dim] = v;
        }
        run.opt.learning_rate = cfg.hier_learning_rate;
    }
    SviFit fit = svi_optimize(target, VariationalParams::from(init, independent), run);
    fit.posterior.spec = spec;
    fit.posterior.source =
        family == VariationalFamily::HierarchicalFactorized ? Method::SVIHier : Method::SVI;
    return fit;
}

std::pair<GaussianPosterior, std::pair<double, double>> hierarchical_factors(const GaussianPosterior& q) {
    const int d = q.spec.feature_dim;
    if (q.spec.prior_family != PriorFamily::ScaleHierarchical || q.dim() != d + 1) {
        throw ConfigError("hierarchical_factors: posterior is not over scale-hierarchical parameters");
    }
    if (!q.chol_cov.row(d).head(d).isZero(0.0)) {
        throw ConfigError("hierarchical_factors: q_z and q_v are not independent");
    }
    GaussianPosterior qz;
    qz.mean = q.mean.head(d);
    qz.chol_cov = q.chol_cov.topLeftCorner(d, d);
    qz.spec = q.spec;
    qz.source = q.source;
    return {qz, {q.mean[d], q.chol_cov(d, d)}};
}

ElboEstimate elbo_estimate(const VariationalTarget& target, const GaussianPosterior& q,
                           int mc_samples, Rng& rng) {
    if (mc_samples < 1) {
        throw ConfigError("elbo_estimate: mc_samples must be positive");
    }
    const auto lower = q.chol_cov.triangularView<Eigen::Lower>();
    std::vector<double> values(static_cast<std::size_t>(mc_samples));
    Vector g;
    for (auto& v : values) {
        const Vector theta = q.mean + lower * standard_normal(q.dim(), rng);
        v = target.log_lik(theta, g);
        if (!target.prior_variances) {
            v += target.log_prior(theta, g);
        }
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / double(mc_samples);
    double var = 0.0;
    for (double v : values) {
        var += (v - mean) * (v - mean);
    }
    var = mc_samples > 1 ? var / double(mc_samples - 1) : 0.0;
    double value = mean;
    if (target.prior_variances) {
        value -= kl_to_diagonal_prior(q, *target.prior_variances);
    } else {
        value += 0.5 * double(q.dim()) * (1.0 + kLog2Pi) + q.chol_cov.diagonal().array().log().sum();
    }
    return {value, std::sqrt(var / double(mc_samples))};
}

ElboEstimate elbo_estimate(const ModelSpec& spec, const LabeledFeatures& data,
                           const GaussianPosterior& q, int mc_samples, Rng& rng) {
    return elbo_estimate(make_variational_target(spec, data, 0), q, mc_samples, rng);
}

double log_weight_density(const GaussianPosterior& q, const Eigen::Ref<const Vector>& weights) {
    const int d = q.spec.feature_dim;
    if (weights.size() != d) {
        throw DataError("log_weight_density: weight dimension mismatch");
    }
    if (q.spec.prior_family != PriorFamily::ScaleHierarchical) {
        // w is the leading block of the parameters; its marginal is Gaussian.
        GaussianPosterior marginal;
        marginal.mean = q.mean.head(d);
        const Matrix cov = q.covariance().topLeftCorner(d, d);
        Eigen::LLT<Matrix> llt(cov);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("log_weight_density: marginal covariance not positive definite");
        }
        marginal.chol_cov = llt.matrixL();
        return log_density(marginal, weights);
    }
    // p(w) = int q_v(v) q_z(w exp(-v/2)) exp(-d v / 2) dv, trapezoid on +-12 sd.
    const auto [qz, qv] = hierarchical_factors(q);
    const auto [mv, sv] = qv;
    constexpr int kNodes = 4001;
    const double lo = mv - 12.0 * sv;
    const double h = 24.0 * sv / double(kNodes - 1);
    Eigen::ArrayXd terms(kNodes);
    for (int i = 0; i < kNodes; ++i) {
        const double v = lo + h * i;
        const double weight = (i == 0 || i == kNodes - 1) ? 0.5 : 1.0;
        terms[i] = std::log(weight * h) + log_normal(v, mv, sv) +
                   log_density(qz, weights * std::exp(-0.5 * v)) - 0.5 * double(d) * v;
    }
    const double top = terms.maxCoeff();
    return top + std::log((terms - top).exp().sum());
}

void write_gaussian(const std::filesystem::path& prefix, const GaussianPosterior& q) {
    {
        auto out = csv::open_out(prefix.string() + "_mean.csv");
        csv::write_rows(out, q.mean.transpose());
    }
    {
        auto out = csv::open_out(prefix.string() + "_chol.csv");
        csv::write_rows(out, Matrix(q.chol_cov.triangularView<Eigen::Lower>()));
    }
    auto meta = csv::open_out(prefix.string() + ".meta");
    meta << "param_space=" << to_string(q.spec.prior_family) << '\n'
         << "source=" << to_string(q.source) << '\n'
         << "feature_dim=" << q.spec.feature_dim << '\n';
}

}  // namespace advspheres
