#pragma once

#include "advspheres/data.hpp"
#include "advspheres/model.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace advspheres {

enum class ChainInit { MapInit, ZeroInit };

struct SliceConfig {
    int n_samples = 1000;
    int burn_in = 1000;
    int thin = 5;
    double initial_width = 30.0;  // weight-space posterior widths are tens of units at D=500
    int max_step_out = 100;
    std::uint64_t seed = 0;
    ChainInit init = ChainInit::MapInit;

    void validate() const;
};

struct SliceDraw {
    double x;          // accepted point
    double log_level;  // slice height; logp(x) >= log_level
    double logp;       // logp(x)
    int evaluations;
};

/// One univariate slice-sampling update (stepping out with Neal's random
/// split of max_step_out steps between the two sides, then shrinkage).
/// Throws NumericalError when logp(x0) is not finite.
template <typename LogDensity>
SliceDraw slice_sample_coordinate(LogDensity&& logp, double x0, double width, int max_step_out,
                                  Rng& rng) {
    int evals = 0;
    auto f = [&](double x) {
        ++evals;
        return logp(x);
    };
    const double f0 = f(x0);
    if (!std::isfinite(f0)) {
        throw NumericalError("slice sampler: log-density at the current point is not finite");
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    const double level = f0 - expo(rng);

    double left = x0 - width * unif(rng);
    double right = left + width;
    int j = static_cast<int>(std::floor(max_step_out * unif(rng)));
    int k = max_step_out - 1 - j;
    while (j > 0 && level < f(left)) {
        left -= width;
        --j;
    }
    while (k > 0 && level < f(right)) {
        right += width;
        --k;
    }

    for (int shrink = 0; shrink < 1000; ++shrink) {
        const double x1 = left + unif(rng) * (right - left);
        const double f1 = f(x1);
        if (f1 >= level) {
            return {x1, level, f1, evals};
        }
        if (x1 < x0) {
            left = x1;
        } else {
            right = x1;
        }
    }
    // The bracket has collapsed onto x0, which is always inside the slice.
    return {x0, level, f0, evals};
}

/// Coordinate-wise slice sampler over a model's unconstrained parameters.
/// Keeps signed margins s_i * a_i cached so each proposal costs O(n).
class SliceChain {
public:
    SliceChain(const ModelSpec& spec, const LabeledFeatures& data, Vector init_params,
               double width, int max_step_out);

    /// Updates every parameter once, in index order.
    void sweep(Rng& rng);

    const Vector& params() const { return params_; }
    Vector weights() const { return to_weights(spec_, params_); }
    /// Cached activations a = features * weights.
    Vector activations() const;
    /// Activations recomputed from scratch.
    Vector fresh_activations() const;
    double log_posterior() const;
    /// Smallest (logp - level) seen over all accepted draws; never negative.
    double min_slice_slack() const { return min_slack_; }

private:
    double coordinate_update(Eigen::Index j, Rng& rng);

    ModelSpec spec_;
    const LabeledFeatures& data_;
    Eigen::ArrayXd signs_;
    Matrix signed_features_;  // column-major: signs * features
    Vector params_;
    Eigen::ArrayXd cache_;  // signed margins (iso/mean) or signed Phi z (scale)
    double width_;
    int max_step_out_;
    double min_slack_ = std::numeric_limits<double>::infinity();
};

struct ChainResult {
    WeightEnsemble ensemble;
    Matrix param_samples;                  // n_samples x param_dim
    std::vector<double> log_posterior;     // one entry per sweep, burn-in included
    Vector final_params;
    /// max |cached - recomputed| activation after the run, relative to max(1, max |a|).
    double cache_error = 0.0;
    double min_slice_slack = 0.0;
};

/// Runs burn_in sweeps, then keeps every thin-th sweep until n_samples are stored.
/// init_params overrides cfg.init when given.
ChainResult run_chain(const ModelSpec& spec, const LabeledFeatures& data, const SliceConfig& cfg,
                      std::optional<Vector> init_params = std::nullopt);

/// (sweep, log_posterior) rows.
void write_chain_diagnostics(const std::filesystem::path& path, const std::vector<double>& trace);

}  // namespace advspheres
