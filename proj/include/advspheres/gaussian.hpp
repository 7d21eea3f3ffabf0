#pragma once

#include "advspheres/data.hpp"
#include "advspheres/model.hpp"
#include "advspheres/point.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace advspheres {

/// Gaussian over a model's parameter space, N(mean, L L^T).
struct GaussianPosterior {
    Vector mean;
    Matrix chol_cov;  // lower triangular, positive diagonal
    ModelSpec spec;   // parameter-space layout the Gaussian lives in
    Method source = Method::Laplace;

    Eigen::Index dim() const { return mean.size(); }
    Matrix covariance() const;
    /// Throws DataError unless chol_cov is square, lower triangular with positive diagonal.
    void validate() const;
};

double log_density(const GaussianPosterior& q, const Eigen::Ref<const Vector>& x);

/// KL(q || p) between two Gaussians, closed form.
double kl_divergence(const GaussianPosterior& q, const GaussianPosterior& p);

/// KL(q || N(0, diag(prior_variances))), closed form.
double kl_to_diagonal_prior(const GaussianPosterior& q, const Eigen::Ref<const Vector>& prior_variances);

/// Laplace approximation for the isotropic model: mean at the MAP, covariance
/// the inverse Hessian of the negative log-posterior. The Cholesky factor is
/// retried with diagonal jitter 0, 1e-10, 1e-8, ..., 1e-2 before giving up
/// with NumericalError.
struct LaplaceFit {
    GaussianPosterior posterior;
    MapFit map;
    double jitter = 0.0;
};
LaplaceFit laplace_fit(const ModelSpec& spec, const LabeledFeatures& data, const OptimizerConfig& opt);
/// Laplace step alone, around a given mode.
LaplaceFit laplace_at(const ModelSpec& spec, const LabeledFeatures& data, MapFit map);

/// m draws mean + L eps mapped through to_weights.
WeightEnsemble gaussian_sample(const GaussianPosterior& post, int m, Rng& rng);

// -- stochastic variational inference ---------------------------------------

enum class VariationalFamily { FullCovGaussian, HierarchicalFactorized };

struct SviConfig {
    OptimizerConfig opt = default_optimizer();
    int mc_samples = 1;
    double grad_clip = 1e3;
    double init_scale = 0.1;
    bool init_from_map = true;
    // The hierarchical family's v gradient is heavy-tailed (w scales as e^{v/2});
    // at the full-covariance rate it collapses q_v.
    double hier_learning_rate = 1e-3;
    std::uint64_t seed = 0;

    static OptimizerConfig default_optimizer() {
        OptimizerConfig o;
        o.method = OptimizerMethod::MomentumSgd;
        o.learning_rate = 0.01;
        o.momentum = 0.98;
        o.batch_size = 100;
        o.max_iters = 50000;
        return o;
    }
    void validate() const;
};

/// The pieces of an ELBO that SVI needs, independent of logistic regression
/// so that tests can substitute a conjugate Gaussian likelihood.
struct VariationalTarget {
    int dim = 0;
    /// Data term over the full data set: value, gradient with respect to theta.
    std::function<double(const Vector& theta, Vector& grad)> log_lik;
    /// Unbiased stochastic version (e.g. minibatch rescaled by n / batch). Defaults to log_lik.
    std::function<double(const Vector& theta, Vector& grad, Rng& rng)> log_lik_stochastic;
    /// When set, KL to N(0, diag(prior_variances)) is taken in closed form.
    std::optional<Vector> prior_variances;
    /// Used when prior_variances is empty: log-prior and its gradient, paired with the closed-form entropy.
    std::function<double(const Vector& theta, Vector& grad)> log_prior;
    /// The SGD ascends ELBO / objective_scale.
    double objective_scale = 1.0;
};

/// Logistic-regression target for a model and data set.
VariationalTarget make_variational_target(const ModelSpec& spec, const LabeledFeatures& data,
                                          int batch_size);

/// Unconstrained variational parameters: L = strictly-lower(off) + diag(exp(log_diag)).
struct VariationalParams {
    Vector mean;
    Vector log_diag;
    Matrix off;  // only the strictly lower triangle is used
    /// Rows whose off-diagonal entries are pinned at zero (independent factors).
    std::vector<Eigen::Index> independent_rows;

    Matrix chol() const;
    static VariationalParams from(const GaussianPosterior& q,
                                  std::vector<Eigen::Index> independent_rows = {});
};

struct ElboGradient {
    double elbo = 0.0;
    Vector d_mean;
    Vector d_log_diag;
    Matrix d_off;
};

/// ELBO averaged over the columns of eps (each a standard-normal draw),
/// full-data likelihood, with its exact gradient. Deterministic given eps.
ElboGradient elbo_with_gradient(const VariationalTarget& target, const VariationalParams& params,
                                const Eigen::Ref<const Matrix>& eps);

struct SviFit {
    GaussianPosterior posterior;
    int steps = 0;
    std::vector<double> elbo_trace;  // every 100 steps, single-sample minibatch estimate
};

/// Momentum-SGD ascent on the reparameterized ELBO.
/// Throws NumericalError with the step index if the objective or gradient becomes non-finite.
SviFit svi_optimize(const VariationalTarget& target, VariationalParams init, const SviConfig& cfg);

/// Fits q for a model. FullCovGaussian fits one Gaussian over all parameters;
/// HierarchicalFactorized (scale-hierarchical models) fits q_z (full covariance)
/// and q_v independently, stored as one block-diagonal Gaussian.
SviFit svi_fit(const ModelSpec& spec, const LabeledFeatures& data, const SviConfig& cfg,
               VariationalFamily family, std::optional<Vector> init_mean = std::nullopt);

/// q_z and (mean, sd) of q_v from a block-diagonal hierarchical posterior.
std::pair<GaussianPosterior, std::pair<double, double>> hierarchical_factors(const GaussianPosterior& q);

struct ElboEstimate {
    double value;
    double std_error;
};

/// Monte-Carlo ELBO with the full-data likelihood.
ElboEstimate elbo_estimate(const ModelSpec& spec, const LabeledFeatures& data,
                           const GaussianPosterior& q, int mc_samples, Rng& rng);
ElboEstimate elbo_estimate(const VariationalTarget& target, const GaussianPosterior& q,
                           int mc_samples, Rng& rng);

/// Log-density that q induces over feature-space weights. Isotropic spaces
/// use the Gaussian directly; block-diagonal scale-hierarchical posteriors
/// integrate over v numerically.
double log_weight_density(const GaussianPosterior& q, const Eigen::Ref<const Vector>& weights);

/// mean.csv (one row), chol.csv (dense, zeros above the diagonal) and meta
/// (param_space, source) under the given prefix.
void write_gaussian(const std::filesystem::path& prefix, const GaussianPosterior& q);

}  // namespace advspheres
