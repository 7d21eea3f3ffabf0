#pragma once

#include "advspheres/data.hpp"
#include "advspheres/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace advspheres {

// Projected gradient ascent on a sphere for argmax_x log p(y = target | x).
//
// Ensembles (M > 1) first ascend the Jensen lower bound sum_m log sigmoid(+-a_m)
// for surrogate_iters steps, then the exact log of the ensemble-mean
// probability. Single models ascend the signed logit throughout, which has the
// same argmax and never saturates.

enum class AttackSide { Inner, Outer, Both };
std::string_view to_string(AttackSide side);
AttackSide parse_attack_side(std::string_view name);

struct AttackConfig {
    double step_size = 0.01;
    double sampled_step_size = 1e-4;  // used by bench for MCMC and SVI ensembles
    int surrogate_iters = 300;
    double improve_tol = 1e-4;
    int patience = 10;
    int max_iters = 10000;
    int restarts = 100;
    AttackSide side = AttackSide::Both;
    std::uint64_t seed = 0;
    bool record_trajectories = false;

    void validate() const;
};

enum class AttackPhase { Logit, Surrogate, True };
enum class AttackStop { Patience, MaxIters, NonFinite };
std::string_view to_string(AttackPhase p);
std::string_view to_string(AttackStop s);

struct RestartResult {
    Vector final_point;  // best iterate of the restart (on the sphere)
    double final_prob = 0.0;
    int iterations = 0;
    AttackPhase phase = AttackPhase::True;
    AttackStop stop = AttackStop::MaxIters;
    /// Best true log-probability so far, one entry per evaluated iterate.
    std::vector<double> best_history;
    /// Largest relative deviation of any iterate from the sphere.
    double max_radius_error = 0.0;
    /// Iterates (rows), only when record_trajectories is set.
    Matrix trajectory;
};

struct AttackResult {
    Vector best_point;
    double best_target_prob = 0.0;
    int source_label = 0;
    int target_label = 1;
    double radius = 1.0;
    std::vector<RestartResult> per_restart;
};

/// radius * x / |x|, scale-free. Throws NumericalError for the zero vector.
Vector project_to_sphere(const Eigen::Ref<const Vector>& x, double radius);

/// (1/M) sum_m sigmoid(s a_m) at a raw input point, clamped into (0, 1).
double target_probability(const WeightEnsemble& ensemble, const Eigen::Ref<const Vector>& x, int target,
                          const FeatureNormalizer& norm);

struct ObjectiveValue {
    double value;
    Vector grad;  // with respect to the raw input x
};

/// Jensen lower bound sum_m log sigmoid(s a_m), s = +1 for target 1 and -1 for target 0.
ObjectiveValue surrogate_objective(const WeightEnsemble& ensemble, const Eigen::Ref<const Vector>& x,
                                   int target, const FeatureNormalizer& norm);

/// log((1/M) sum_m sigmoid(s a_m)), evaluated as a max-shifted log-sum-exp.
ObjectiveValue true_objective(const WeightEnsemble& ensemble, const Eigen::Ref<const Vector>& x,
                              int target, const FeatureNormalizer& norm);

/// Signed logit s a for single models (M must be 1).
ObjectiveValue logit_objective(const WeightEnsemble& ensemble, const Eigen::Ref<const Vector>& x,
                               int target, const FeatureNormalizer& norm);

/// Restarts start uniformly on the source sphere (seeded per restart index)
/// and run in parallel. A restart whose gradient turns non-finite is stopped
/// and recorded; the others continue.
AttackResult run_attack(const WeightEnsemble& ensemble, const FeatureNormalizer& norm, double radius,
                        int source_label, const AttackConfig& cfg);

/// The step size bench uses for an ensemble: sampled_step_size for MCMC and
/// SVI ensembles, step_size otherwise.
double step_size_for(Method source, const AttackConfig& cfg);

/// restart,final_prob,iterations,phase,termination rows plus the best point
/// written to a separate one-column CSV.
void write_attack_result(const std::filesystem::path& restarts_csv,
                         const std::filesystem::path& point_csv, const AttackResult& result);

}  // namespace advspheres
