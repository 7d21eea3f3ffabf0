#pragma once

#include "advspheres/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace advspheres {

// Logistic regression on normalized squared features, p(y=1|x) = sigmoid(w . phi(x)),
// with three prior families over an unconstrained parameter vector:
//
//   Isotropic          params = w             w_i ~ N(0, sigma_w^2)
//   ScaleHierarchical  params = [z, v]        w = exp(v/2) z, z_i ~ N(0,1), v ~ N(0, sigma_v^2)
//   MeanHierarchical   params = [w, mu]       w_i ~ N(mu, sigma_w^2), mu ~ N(0, sigma_mu^2)

enum class PriorFamily { Isotropic, ScaleHierarchical, MeanHierarchical };

std::string_view to_string(PriorFamily family);
PriorFamily parse_prior_family(std::string_view name);

struct ModelSpec {
    PriorFamily prior_family = PriorFamily::Isotropic;
    double sigma_w = 100.0;
    double sigma_v = 100.0;
    double sigma_mu = 100.0;
    int feature_dim = 0;

    int param_dim() const {
        return prior_family == PriorFamily::Isotropic ? feature_dim : feature_dim + 1;
    }
    void validate() const;
};

/// Inference method tags. Declaration order is the canonical report order.
enum class Method { MLE, MAP, Bootstrap, MCMC, Laplace, SVI, SVIHier, MCMCMeanHier };

inline constexpr Method kAllMethods[] = {Method::MLE,     Method::MAP, Method::Bootstrap,
                                         Method::MCMC,    Method::Laplace, Method::SVI,
                                         Method::SVIHier, Method::MCMCMeanHier};

/// Report name: "MLE", "MAP", "Bootstrap", "MCMC", "Laplace", "SVI", "SVI-Hier", "MCMC-MeanHier".
std::string_view to_string(Method method);
/// Accepts report names case-insensitively. Throws ConfigError otherwise.
Method parse_method(std::string_view name);
bool is_point_estimate(Method method);

/// M weight vectors in feature space; the universal predictive representation.
struct WeightEnsemble {
    Matrix weights;  // M x D
    Method source = Method::MAP;
    std::uint64_t seed = 0;
    ModelSpec spec;

    Eigen::Index size() const { return weights.rows(); }
    Eigen::Index dim() const { return weights.cols(); }
    /// Throws DataError unless M >= 1, rows are finite and M == 1 exactly for point estimates.
    void validate() const;
};

/// Maps unconstrained parameters onto feature-space weights.
Vector to_weights(const ModelSpec& spec, const Eigen::Ref<const Vector>& params);

/// +1 for label 1, -1 for label 0.
Eigen::ArrayXd signed_labels(const Eigen::VectorXi& labels);

/// sum_i log p(y_i | w). Evaluated through softplus only.
double log_likelihood(const Eigen::Ref<const Vector>& weights, const Eigen::Ref<const Matrix>& features,
                      const Eigen::VectorXi& labels);
/// Same, from precomputed activations a = features * w.
double log_likelihood_from_activations(const Eigen::Ref<const Vector>& activations,
                                       const Eigen::VectorXi& labels);

double log_prior(const ModelSpec& spec, const Eigen::Ref<const Vector>& params);
Vector grad_log_prior(const ModelSpec& spec, const Eigen::Ref<const Vector>& params);

double log_posterior_unnorm(const ModelSpec& spec, const Eigen::Ref<const Vector>& params,
                            const Eigen::Ref<const Matrix>& features, const Eigen::VectorXi& labels);
/// Same, with activations a = features * to_weights(params) supplied by the caller.
double log_posterior_unnorm_cached(const ModelSpec& spec, const Eigen::Ref<const Vector>& params,
                                   const Eigen::Ref<const Vector>& activations,
                                   const Eigen::VectorXi& labels);

/// features^T (y - sigmoid(a)), the likelihood gradient with respect to w.
Vector grad_log_likelihood_weights(const Eigen::Ref<const Vector>& weights,
                                   const Eigen::Ref<const Matrix>& features,
                                   const Eigen::VectorXi& labels);

/// Chains a feature-space gradient through to_weights into parameter space.
Vector chain_weight_gradient(const ModelSpec& spec, const Eigen::Ref<const Vector>& params,
                             const Eigen::Ref<const Vector>& grad_weights);

Vector grad_log_posterior(const ModelSpec& spec, const Eigen::Ref<const Vector>& params,
                          const Eigen::Ref<const Matrix>& features, const Eigen::VectorXi& labels);

/// features^T S features + I / sigma_w^2 with S = diag(sigmoid(a)(1 - sigmoid(a))).
/// Isotropic models only; other families throw ConfigError.
Matrix hessian_neg_log_posterior(const ModelSpec& spec, const Eigen::Ref<const Vector>& weights,
                                 const Eigen::Ref<const Matrix>& features,
                                 const Eigen::VectorXi& labels);

/// Ensemble-averaged p(y=1|x) for each feature row, clamped into the open interval (0, 1).
Vector predict(const WeightEnsemble& ensemble, const Eigen::Ref<const Matrix>& features);

/// Ensemble-averaged probability of the given label for each feature row, clamped into (0, 1).
Vector predict_label(const WeightEnsemble& ensemble, const Eigen::Ref<const Matrix>& features,
                     const Eigen::VectorXi& labels);

/// Mean of sigmoid over a vector of activations, clamped into (0, 1).
double mean_sigmoid(const Eigen::Ref<const Vector>& activations);

// -- persistence -------------------------------------------------------------

/// Writes weights as CSV (one vector per row) and a sidecar `<path>.meta`
/// holding the source tag, seed and ModelSpec as key=value lines.
void write_ensemble(const std::filesystem::path& csv_path, const WeightEnsemble& ensemble);
WeightEnsemble read_ensemble(const std::filesystem::path& csv_path);

}  // namespace advspheres
