#include "advspheres/model.hpp"

#include "advspheres/csv.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>

namespace advspheres {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

void check_params(const ModelSpec& spec, Eigen::Index size) {
    if (size != spec.param_dim()) {
        throw ConfigError("parameter vector has length " + std::to_string(size) + ", model expects " +
                          std::to_string(spec.param_dim()));
    }
}

void check_data(Eigen::Index weight_dim, const Eigen::Ref<const Matrix>& features,
                const Eigen::VectorXi& labels) {
    if (features.cols() != weight_dim) {
        throw DataError("feature dimension " + std::to_string(features.cols()) +
                        " does not match weight dimension " + std::to_string(weight_dim));
    }
    if (features.rows() != labels.size()) {
        throw DataError("feature rows and label count differ");
    }
}

constexpr double kProbLo = std::numeric_limits<double>::denorm_min();
const double kProbHi = std::nextafter(1.0, 0.0);

}  // namespace

std::string_view to_string(PriorFamily family) {
    switch (family) {
        case PriorFamily::Isotropic: return "isotropic";
        case PriorFamily::ScaleHierarchical: return "scale-hierarchical";
        case PriorFamily::MeanHierarchical: return "mean-hierarchical";
    }
    return "?";
}

PriorFamily parse_prior_family(std::string_view name) {
    const auto n = lower(name);
    if (n == "isotropic") return PriorFamily::Isotropic;
    if (n == "scale-hierarchical") return PriorFamily::ScaleHierarchical;
    if (n == "mean-hierarchical") return PriorFamily::MeanHierarchical;
    throw ConfigError("unknown prior family '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
    if (feature_dim < 1) {
        throw ConfigError("feature_dim must be positive");
    }
    if (!(sigma_w > 0.0) || !(sigma_v > 0.0) || !(sigma_mu > 0.0)) {
        throw ConfigError("prior widths must be positive");
    }
}

std::string_view to_string(Method method) {
    switch (method) {
        case Method::MLE: return "MLE";
        case Method::MAP: return "MAP";
        case Method::Bootstrap: return "Bootstrap";
        case Method::MCMC: return "MCMC";
        case Method::Laplace: return "Laplace";
        case Method::SVI: return "SVI";
        case Method::SVIHier: return "SVI-Hier";
        case Method::MCMCMeanHier: return "MCMC-MeanHier";
    }
    return "?";
}

Method parse_method(std::string_view name) {
    const auto n = lower(name);
    for (Method m : kAllMethods) {
        if (lower(to_string(m)) == n) {
            return m;
        }
    }
    if (n == "ml") return Method::MLE;
    throw ConfigError("unknown method '" + std::string(name) + "'");
}

bool is_point_estimate(Method method) { return method == Method::MLE || method == Method::MAP; }

void WeightEnsemble::validate() const {
    if (weights.rows() < 1) {
        throw DataError("ensemble has no members");
    }
    if (!weights.allFinite()) {
        throw DataError("ensemble contains non-finite weights");
    }
    if (is_point_estimate(source) != (weights.rows() == 1)) {
        throw DataError("ensemble size " + std::to_string(weights.rows()) +
                        " inconsistent with source " + std::string(to_string(source)));
    }
}

Vector to_weights(const ModelSpec& spec, const Eigen::Ref<const Vector>& params) {
    check_params(spec, params.size());
    const int d = spec.feature_dim;
    switch (spec.prior_family) {
        case PriorFamily::Isotropic: return params;
        case PriorFamily::ScaleHierarchical: return std::exp(0.5 * params[d]) * params.head(d);
        case PriorFamily::MeanHierarchical: return params.head(d);
    }
    return params;
}

Eigen::ArrayXd signed_labels(const Eigen::VectorXi& labels) {
    return (labels.array() == 1).select(Eigen::ArrayXd::Ones(labels.size()),
                                        -Eigen::ArrayXd::Ones(labels.size()));
}

double log_likelihood_from_activations(const Eigen::Ref<const Vector>& activations,
                                       const Eigen::VectorXi& labels) {
    if (activations.size() != labels.size()) {
        throw DataError("activation and label counts differ");
    }
    return sum_log_sigmoid(signed_labels(labels) * activations.array());
}

double log_likelihood(const Eigen::Ref<const Vector>& weights, const Eigen::Ref<const Matrix>& features,
                      const Eigen::VectorXi& labels) {
    check_data(weights.size(), features, labels);
    if (features.rows() == 0) {
        return 0.0;
    }
    const Vector a = features * weights;
    return log_likelihood_from_activations(a, labels);
}

double log_prior(const ModelSpec& spec, const Eigen::Ref<const Vector>& params) {
    check_params(spec, params.size());
    const int d = spec.feature_dim;
    const double n_log2pi = 0.5 * kLog2Pi;
    switch (spec.prior_family) {
        case PriorFamily::Isotropic:
            return -0.5 * params.squaredNorm() / (spec.sigma_w * spec.sigma_w) -
                   d * (std::log(spec.sigma_w) + n_log2pi);
        case PriorFamily::ScaleHierarchical:
            return -0.5 * params.head(d).squaredNorm() - d * n_log2pi +
                   log_normal(params[d], 0.0, spec.sigma_v);
        case PriorFamily::MeanHierarchical: {
            const double mu = params[d];
            return -0.5 * (params.head(d).array() - mu).square().sum() / (spec.sigma_w * spec.sigma_w) -
                   d * (std::log(spec.sigma_w) + n_log2pi) + log_normal(mu, 0.0, spec.sigma_mu);
        }
    }
    return 0.0;
}

Vector grad_log_prior(const ModelSpec& spec, const Eigen::Ref<const Vector>& params) {
    check_params(spec, params.size());
    const int d = spec.feature_dim;
    Vector g(params.size());
    switch (spec.prior_family) {
        case PriorFamily::Isotropic:
            g = -params / (spec.sigma_w * spec.sigma_w);
            break;
        case PriorFamily::ScaleHierarchical:
            g.head(d) = -params.head(d);
            g[d] = -params[d] / (spec.sigma_v * spec.sigma_v);
            break;
        case PriorFamily::MeanHierarchical: {
            const double mu = params[d];
            const double inv_var = 1.0 / (spec.sigma_w * spec.sigma_w);
            g.head(d) = -(params.head(d).array() - mu).matrix() * inv_var;
            g[d] = (params.head(d).array() - mu).sum() * inv_var - mu / (spec.sigma_mu * spec.sigma_mu);
            break;
        }
    }
    return g;
}

double log_posterior_unnorm(const ModelSpec& spec, const Eigen::Ref<const Vector>& params,
                            const Eigen::Ref<const Matrix>& features, const Eigen::VectorXi& labels) {
    return log_likelihood(to_weights(spec, params), features, labels) + log_prior(spec, params);
}

double log_posterior_unnorm_cached(const ModelSpec& spec, const Eigen::Ref<const Vector>& params,
                                   const Eigen::Ref<const Vector>& activations,
                                   const Eigen::VectorXi& labels) {
    return log_likelihood_from_activations(activations, labels) + log_prior(spec, params);
}

Vector grad_log_likelihood_weights(const Eigen::Ref<const Vector>& weights,
                                   const Eigen::Ref<const Matrix>& features,
                                   const Eigen::VectorXi& labels) {
    check_data(weights.size(), features, labels);
    if (features.rows() == 0) {
        return Vector::Zero(weights.size());
    }
    // d/da log sigmoid(s a) = s sigmoid(-s a); avoids forming y - sigmoid(a) by cancellation.
    const Eigen::ArrayXd s = signed_labels(labels);
    const Eigen::ArrayXd a = (features * weights).array();
    const Vector r = (s * sigmoid(Eigen::ArrayXd(-s * a))).matrix();
    return features.transpose() * r;
}

Vector chain_weight_gradient(const ModelSpec& spec, const Eigen::Ref<const Vector>& params,
                             const Eigen::Ref<const Vector>& grad_weights) {
    check_params(spec, params.size());
    const int d = spec.feature_dim;
    Vector g(params.size());
    switch (spec.prior_family) {
        case PriorFamily::Isotropic:
            g = grad_weights;
            break;
        case PriorFamily::ScaleHierarchical: {
            const double scale = std::exp(0.5 * params[d]);
            g.head(d) = scale * grad_weights;
            g[d] = 0.5 * scale * params.head(d).dot(grad_weights);
            break;
        }
        case PriorFamily::MeanHierarchical:
            g.head(d) = grad_weights;
            g[d] = 0.0;
            break;
    }
    return g;
}

Vector grad_log_posterior(const ModelSpec& spec, const Eigen::Ref<const Vector>& params,
                          const Eigen::Ref<const Matrix>& features, const Eigen::VectorXi& labels) {
    const Vector w = to_weights(spec, params);
    return chain_weight_gradient(spec, params, grad_log_likelihood_weights(w, features, labels)) +
           grad_log_prior(spec, params);
}

Matrix hessian_neg_log_posterior(const ModelSpec& spec, const Eigen::Ref<const Vector>& weights,
                                 const Eigen::Ref<const Matrix>& features,
                                 const Eigen::VectorXi& labels) {
    if (spec.prior_family != PriorFamily::Isotropic) {
        throw ConfigError("hessian_neg_log_posterior: unsupported model '" +
                          std::string(to_string(spec.prior_family)) + "' (isotropic only)");
    }
    check_params(spec, weights.size());
    check_data(weights.size(), features, labels);
    const Eigen::Index d = weights.size();
    Matrix h = Matrix::Identity(d, d) / (spec.sigma_w * spec.sigma_w);
    if (features.rows() > 0) {
        const Eigen::ArrayXd a = (features * weights).array();
        const Eigen::ArrayXd p = sigmoid(a);
        const Eigen::ArrayXd q = sigmoid(Eigen::ArrayXd(-a));
        const Eigen::ArrayXd sqrt_s = (p * q).sqrt();
        const Matrix scaled = features.array().colwise() * sqrt_s;
        h.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
        h.triangularView<Eigen::StrictlyUpper>() = h.transpose();
    }
    return h;
}

double mean_sigmoid(const Eigen::Ref<const Vector>& activations) {
    const double p = sigmoid(activations.array()).mean();
    return std::clamp(p, kProbLo, kProbHi);
}

namespace {

/// out[i] = mean_m sigmoid(sign[i] * features_i . w_m), in row blocks.
Vector mean_sigmoid_rows(const WeightEnsemble& ensemble, const Eigen::Ref<const Matrix>& features,
                         const Eigen::ArrayXd& signs) {
    if (features.cols() != ensemble.dim()) {
        throw DataError("predict: feature dimension does not match ensemble dimension");
    }
    const Eigen::Index n = features.rows();
    const Eigen::Index m = ensemble.size();
    Vector out(n);
    // Row blocks keep the n x M activation buffer bounded.
    const Eigen::Index block = std::max<Eigen::Index>(1, (1 << 22) / std::max<Eigen::Index>(1, m));
    Matrix act;
    for (Eigen::Index start = 0; start < n; start += block) {
        const Eigen::Index rows = std::min(block, n - start);
        act.noalias() = features.middleRows(start, rows) * ensemble.weights.transpose();
        act.array().colwise() *= signs.segment(start, rows);
        const Eigen::ArrayXXd e = (-act.array().abs()).exp();
        const Eigen::ArrayXXd small = e / (1.0 + e);
        const Eigen::ArrayXXd p = (act.array() >= 0.0).select(1.0 - small, small);
        out.segment(start, rows) = p.rowwise().mean().max(kProbLo).min(kProbHi).matrix();
    }
    return out;
}

}  // namespace

Vector predict(const WeightEnsemble& ensemble, const Eigen::Ref<const Matrix>& features) {
    return mean_sigmoid_rows(ensemble, features, Eigen::ArrayXd::Ones(features.rows()));
}

Vector predict_label(const WeightEnsemble& ensemble, const Eigen::Ref<const Matrix>& features,
                     const Eigen::VectorXi& labels) {
    if (labels.size() != features.rows()) {
        throw DataError("predict_label: feature rows and label count differ");
    }
    return mean_sigmoid_rows(ensemble, features, signed_labels(labels));
}

// -- persistence -------------------------------------------------------------

void write_ensemble(const std::filesystem::path& csv_path, const WeightEnsemble& ensemble) {
    {
        auto out = csv::open_out(csv_path);
        csv::write_rows(out, ensemble.weights);
        if (!out) {
            throw DataError("failed writing " + csv_path.string());
        }
    }
    auto meta = csv::open_out(csv_path.string() + ".meta");
    meta << "source=" << to_string(ensemble.source) << '\n'
         << "seed=" << ensemble.seed << '\n'
         << "members=" << ensemble.size() << '\n'
         << "prior_family=" << to_string(ensemble.spec.prior_family) << '\n'
         << "sigma_w=" << csv::format(ensemble.spec.sigma_w) << '\n'
         << "sigma_v=" << csv::format(ensemble.spec.sigma_v) << '\n'
         << "sigma_mu=" << csv::format(ensemble.spec.sigma_mu) << '\n'
         << "feature_dim=" << ensemble.spec.feature_dim << '\n';
}

WeightEnsemble read_ensemble(const std::filesystem::path& csv_path) {
    const auto table = csv::read(csv_path, false);
    if (table.rows.empty()) {
        throw DataError(csv_path.string() + ": empty ensemble file");
    }
    WeightEnsemble ens;
    const auto m = static_cast<Eigen::Index>(table.rows.size());
    const auto d = static_cast<Eigen::Index>(table.rows.front().size());
    ens.weights.resize(m, d);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            ens.weights(i, j) = table.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }

    std::map<std::string, std::string> kv;
    std::ifstream meta(csv_path.string() + ".meta");
    if (!meta) {
        throw DataError(csv_path.string() + ".meta: missing ensemble header");
    }
    std::string line;
    while (std::getline(meta, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            continue;
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    try {
        ens.source = parse_method(kv.at("source"));
        ens.seed = std::stoull(kv.at("seed"));
        ens.spec.prior_family = parse_prior_family(kv.at("prior_family"));
        ens.spec.sigma_w = std::stod(kv.at("sigma_w"));
        ens.spec.sigma_v = std::stod(kv.at("sigma_v"));
        ens.spec.sigma_mu = std::stod(kv.at("sigma_mu"));
        ens.spec.feature_dim = std::stoi(kv.at("feature_dim"));
    } catch (const std::out_of_range&) {
        throw DataError(csv_path.string() + ".meta: missing field");
    } catch (const std::invalid_argument&) {
        throw DataError(csv_path.string() + ".meta: malformed field");
    } catch (const ConfigError& e) {
        throw DataError(csv_path.string() + ".meta: " + e.what());
    }
    if (ens.spec.feature_dim != d) {
        throw DataError(csv_path.string() + ": weight width does not match feature_dim");
    }
    ens.validate();
    return ens;
}

}  // namespace advspheres
