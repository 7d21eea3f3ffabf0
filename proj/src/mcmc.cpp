#include "advspheres/mcmc.hpp"

#include "advspheres/csv.hpp"
#include "advspheres/point.hpp"

#include <algorithm>

namespace advspheres {

void SliceConfig::validate() const {
    if (n_samples < 1) throw ConfigError("slice n_samples must be positive");
    if (burn_in < 0) throw ConfigError("slice burn_in must be non-negative");
    if (thin < 1) throw ConfigError("slice thin must be at least 1");
    if (!(initial_width > 0.0)) throw ConfigError("slice initial_width must be positive");
    if (max_step_out < 1) throw ConfigError("slice max_step_out must be at least 1");
}

namespace {

template <typename Derived>
double sum_log_sigmoid_lazy(const Eigen::ArrayBase<Derived>& m) {
    return -((-m).max(0.0) + (-m.abs()).exp().log1p()).sum();
}

}  // namespace

SliceChain::SliceChain(const ModelSpec& spec, const LabeledFeatures& data, Vector init_params,
                       double width, int max_step_out)
    : spec_(spec),
      data_(data),
      signs_(signed_labels(data.labels)),
      params_(std::move(init_params)),
      width_(width),
      max_step_out_(max_step_out) {
    spec_.validate();
    if (params_.size() != spec_.param_dim()) {
        throw ConfigError("SliceChain: initial parameter vector has the wrong length");
    }
    if (data_.dim() != spec_.feature_dim) {
        throw DataError("SliceChain: data dimension does not match model feature_dim");
    }
    signed_features_ = data_.features.array().colwise() * signs_;
    const int d = spec_.feature_dim;
    // For the scale family the cache holds signed Phi z; margins are exp(v/2) times it.
    if (data_.size() == 0) {
        cache_.resize(0);
    } else {
        cache_ = (signed_features_ * params_.head(d)).array();
    }
}

Vector SliceChain::activations() const {
    if (spec_.prior_family == PriorFamily::ScaleHierarchical) {
        const double scale = std::exp(0.5 * params_[spec_.feature_dim]);
        return (signs_ * cache_ * scale).matrix();
    }
    return (signs_ * cache_).matrix();
}

Vector SliceChain::fresh_activations() const {
    if (data_.size() == 0) {
        return Vector(0);
    }
    return data_.features * weights();
}

double SliceChain::log_posterior() const {
    double ll = 0.0;
    if (spec_.prior_family == PriorFamily::ScaleHierarchical) {
        ll = sum_log_sigmoid_lazy(cache_ * std::exp(0.5 * params_[spec_.feature_dim]));
    } else {
        ll = sum_log_sigmoid_lazy(cache_);
    }
    return ll + log_prior(spec_, params_);
}

double SliceChain::coordinate_update(Eigen::Index j, Rng& rng) {
    const int d = spec_.feature_dim;
    const double current = params_[j];
    SliceDraw draw{};

    switch (spec_.prior_family) {
        case PriorFamily::Isotropic: {
            const double inv_var = 1.0 / (spec_.sigma_w * spec_.sigma_w);
            const auto col = signed_features_.col(j).array();
            auto logp = [&](double t) {
                return sum_log_sigmoid_lazy(cache_ + (t - current) * col) - 0.5 * t * t * inv_var;
            };
            draw = slice_sample_coordinate(logp, current, width_, max_step_out_, rng);
            cache_ += (draw.x - current) * col;
            break;
        }
        case PriorFamily::MeanHierarchical: {
            const double inv_var = 1.0 / (spec_.sigma_w * spec_.sigma_w);
            const double mu = params_[d];
            if (j < d) {
                const auto col = signed_features_.col(j).array();
                auto logp = [&](double t) {
                    return sum_log_sigmoid_lazy(cache_ + (t - current) * col) -
                           0.5 * (t - mu) * (t - mu) * inv_var;
                };
                draw = slice_sample_coordinate(logp, current, width_, max_step_out_, rng);
                cache_ += (draw.x - current) * col;
            } else {
                // The likelihood does not depend on mu; only the prior terms move.
                const auto w = params_.head(d).array();
                const double inv_var_mu = 1.0 / (spec_.sigma_mu * spec_.sigma_mu);
                auto logp = [&](double t) {
                    return -0.5 * (w - t).square().sum() * inv_var - 0.5 * t * t * inv_var_mu;
                };
                draw = slice_sample_coordinate(logp, current, width_, max_step_out_, rng);
            }
            break;
        }
        case PriorFamily::ScaleHierarchical: {
            if (j < d) {
                const double scale = std::exp(0.5 * params_[d]);
                const auto col = signed_features_.col(j).array();
                auto logp = [&](double t) {
                    return sum_log_sigmoid_lazy((cache_ + (t - current) * col) * scale) - 0.5 * t * t;
                };
                draw = slice_sample_coordinate(logp, current, width_, max_step_out_, rng);
                cache_ += (draw.x - current) * col;
            } else {
                const double inv_var_v = 1.0 / (spec_.sigma_v * spec_.sigma_v);
                auto logp = [&](double t) {
                    return sum_log_sigmoid_lazy(cache_ * std::exp(0.5 * t)) - 0.5 * t * t * inv_var_v;
                };
                draw = slice_sample_coordinate(logp, current, width_, max_step_out_, rng);
            }
            break;
        }
    }
    params_[j] = draw.x;
    min_slack_ = std::min(min_slack_, draw.logp - draw.log_level);
    return draw.x;
}

void SliceChain::sweep(Rng& rng) {
    for (Eigen::Index j = 0; j < params_.size(); ++j) {
        coordinate_update(j, rng);
    }
}

ChainResult run_chain(const ModelSpec& spec, const LabeledFeatures& data, const SliceConfig& cfg,
                      std::optional<Vector> init_params) {
    cfg.validate();
    spec.validate();
    Vector init;
    if (init_params) {
        init = std::move(*init_params);
    } else if (cfg.init == ChainInit::MapInit) {
        init = fit_map(spec, data, OptimizerConfig{}, true).params;
    } else {
        init = Vector::Zero(spec.param_dim());
    }

    SliceChain chain(spec, data, std::move(init), cfg.initial_width, cfg.max_step_out);
    Rng rng(cfg.seed);

    ChainResult out;
    out.param_samples.resize(cfg.n_samples, spec.param_dim());
    out.ensemble.weights.resize(cfg.n_samples, spec.feature_dim);
    out.log_posterior.reserve(static_cast<std::size_t>(cfg.burn_in) +
                              static_cast<std::size_t>(cfg.n_samples) * cfg.thin);

    for (int s = 0; s < cfg.burn_in; ++s) {
        chain.sweep(rng);
        out.log_posterior.push_back(chain.log_posterior());
    }
    for (int kept = 0; kept < cfg.n_samples; ++kept) {
        for (int t = 0; t < cfg.thin; ++t) {
            chain.sweep(rng);
            out.log_posterior.push_back(chain.log_posterior());
        }
        out.param_samples.row(kept) = chain.params().transpose();
        out.ensemble.weights.row(kept) = chain.weights().transpose();
    }
    if (!out.ensemble.weights.allFinite()) {
        throw NumericalError("slice chain produced non-finite weights");
    }

    out.final_params = chain.params();
    if (data.size() > 0) {
        const Vector fresh = chain.fresh_activations();
        out.cache_error = (chain.activations() - fresh).cwiseAbs().maxCoeff() /
                          std::max(1.0, fresh.cwiseAbs().maxCoeff());
    }
    out.min_slice_slack = chain.min_slice_slack();
    out.ensemble.source =
        spec.prior_family == PriorFamily::MeanHierarchical ? Method::MCMCMeanHier : Method::MCMC;
    out.ensemble.seed = cfg.seed;
    out.ensemble.spec = spec;
    return out;
}

void write_chain_diagnostics(const std::filesystem::path& path, const std::vector<double>& trace) {
    auto out = csv::open_out(path);
    out << "sweep,log_posterior\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        out << i << ',' << csv::format(trace[i]) << '\n';
    }
}

}  // namespace advspheres
