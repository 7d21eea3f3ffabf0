#pragma once

#include "advspheres/attack.hpp"
#include "advspheres/config.hpp"
#include "advspheres/data.hpp"
#include "advspheres/model.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace advspheres {

// -- metrics -------------------------------------------------------------------

/// Mean predicted probability of the true label over a (normalized) validation set.
double avg_confidence(const WeightEnsemble& ensemble, const LabeledFeatures& val);
double avg_confidence(const WeightEnsemble& ensemble, const SphereDataset& val, const FeatureNormalizer& norm);

/// Fraction of validation points whose ensemble prediction picks the wrong class.
double error_rate(const WeightEnsemble& ensemble, const LabeledFeatures& val);

struct AdversarialPoint {
    Vector x;
    int target = 1;
};

struct AdversarialOutcome {
    double error = 0.0;  // max target probability over attacked classes and restarts
    std::vector<AttackResult> attacks;
    /// Best point of each attacked class.
    std::vector<AdversarialPoint> points() const;
};

/// Attacks each source class selected by cfg.side with cfg.step_size, returning
/// the largest target probability found.
AdversarialOutcome adversarial_error(const WeightEnsemble& ensemble, const FeatureNormalizer& norm,
                                     const SphereConfig& radii, const AttackConfig& cfg);

/// Largest target probability a second ensemble assigns to the adversarial points.
double resampled_error(const WeightEnsemble& second, const std::vector<AdversarialPoint>& points,
                       const FeatureNormalizer& norm);

// -- inference dispatch ---------------------------------------------------------

/// Training data plus configuration shared by every method of a run. MAP
/// fits are computed once per prior family and reused for initialization.
class InferenceContext {
public:
    InferenceContext(const RunConfig& cfg, const LabeledFeatures& train);

    /// Runs one method with the given seed and returns its predictive ensemble.
    WeightEnsemble run(Method method, std::uint64_t seed);
    ModelSpec spec(PriorFamily family) const;
    const MapFit& map_fit(PriorFamily family);

    /// When set, run() also writes optimizer traces, chain log-posteriors and
    /// Gaussian posteriors under this directory.
    void set_diagnostics_dir(std::filesystem::path dir) { diag_dir_ = std::move(dir); }

private:
    const RunConfig& cfg_;
    const LabeledFeatures& train_;
    std::map<PriorFamily, MapFit> maps_;
    std::optional<std::filesystem::path> diag_dir_;
};

/// Seed for one method and role ("first", "second", "attack") of a run.
std::uint64_t method_seed(std::uint64_t seed, Method method, std::string_view role);

/// Re-runs the method with the second-ensemble seed and evaluates it at the points.
double resampled_error(Method method, const std::vector<AdversarialPoint>& points, InferenceContext& ctx,
                       const FeatureNormalizer& norm, std::uint64_t run_seed);

// -- benchmark ------------------------------------------------------------------

struct BenchRow {
    Method method = Method::MAP;
    double avg_confidence = 0.0;
    double adv_error = 0.0;
    std::optional<double> resampled_error;  // absent for point estimates
    std::string error;                      // non-empty when the method failed
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

struct BenchReport {
    std::vector<BenchRow> rows;  // canonical method order
    std::uint64_t config_fingerprint = 0;
    std::uint64_t seed = 0;
    std::string config_dump;

    const BenchRow* find(Method m) const;
};

/// Generates the data, then for each method: inference, validation confidence,
/// attack, and (for ensembles) transfer to an independently trained second
/// ensemble. A failing method is recorded in its row and the others continue.
BenchReport run_benchmark(const RunConfig& cfg, std::ostream* log = nullptr);

/// Header `model,avg_confidence,adv_error,resampled_error`.
void write_results_csv(const std::filesystem::path& path, const BenchReport& report);
/// Seeds, config fingerprint and dump, build information and wall times.
void write_manifest(const std::filesystem::path& path, const BenchReport& report);

// -- plot data ------------------------------------------------------------------

struct LikelihoodGrid {
    Vector w1;
    Vector w2;
    Matrix loglik;  // loglik(i, j) at (w1[i], w2[j])
};

/// Log-likelihood of a two-feature data set on a resolution x resolution weight grid.
LikelihoodGrid likelihood_grid(const LabeledFeatures& data, std::pair<double, double> w1_range,
                               std::pair<double, double> w2_range, int resolution);
void write_grid_csv(const std::filesystem::path& path, const LikelihoodGrid& grid);

struct PosteriorSlice {
    Vector values;
    Vector log_density;
};

/// Unnormalized log-posterior along coordinate j with every other parameter
/// held at map_params. Resolution 1 gives the single row at the MAP value.
PosteriorSlice posterior_slice(const ModelSpec& spec, const LabeledFeatures& data,
                               const Eigen::Ref<const Vector>& map_params, Eigen::Index j,
                               std::pair<double, double> range, int resolution);
void write_slice_csv(const std::filesystem::path& path, const PosteriorSlice& slice);

}  // namespace advspheres
