#pragma once

#include "advspheres/data.hpp"
#include "advspheres/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace advspheres {

enum class OptimizerMethod { QuasiNewton, MomentumSgd };

struct OptimizerConfig {
    OptimizerMethod method = OptimizerMethod::QuasiNewton;
    int max_iters = 50000;
    int batch_size = 0;  // 0 = full batch
    double learning_rate = 0.01;
    double momentum = 0.98;
    double grad_tol = 1e-8;
    int history = 10;  // quasi-newton memory
    std::uint64_t seed = 0;
    bool record_trace = false;

    void validate() const;
};

enum class Termination { GradTol, MaxIters, NoProgress };
std::string_view to_string(Termination t);

struct TraceRow {
    int iteration;
    double loss;
    double grad_norm;
};

/// Result of a point estimate. `params` lives in the model's parameter space.
struct MapFit {
    Vector params;
    WeightEnsemble ensemble;  // M = 1
    Termination termination = Termination::MaxIters;
    int iterations = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    std::vector<TraceRow> trace;
};

/// Maximizes log-likelihood (plus log-prior when use_prior) over the model
/// parameters. Quasi-newton runs are full batch with a backtracking line
/// search; momentum-sgd draws minibatches from opt.seed.
/// Throws NumericalError if the objective becomes non-finite.
MapFit fit_map(const ModelSpec& spec, const LabeledFeatures& data, const OptimizerConfig& opt,
               bool use_prior);

/// Rows of `data` selected by index (repeats allowed).
LabeledFeatures subset(const LabeledFeatures& data, const std::vector<Eigen::Index>& indices);

std::uint64_t bootstrap_member_seed(std::uint64_t seed, std::size_t member);
/// n draws with replacement from [0, n).
std::vector<Eigen::Index> bootstrap_indices(Eigen::Index n, std::uint64_t member_seed);

struct BootstrapFit {
    WeightEnsemble ensemble;
    std::vector<Termination> terminations;
};

/// MAP fits on m_models independent with-replacement resamples of size n.
/// Member i depends only on (seed, i); members run through parallel_for.
BootstrapFit fit_bootstrap(const ModelSpec& spec, const LabeledFeatures& data,
                           const OptimizerConfig& opt, int m_models, std::uint64_t seed);

/// Appends (iteration, loss, grad_norm) rows; writes the header for new files.
void append_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

}  // namespace advspheres
