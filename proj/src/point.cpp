#include "advspheres/point.hpp"

#include "advspheres/csv.hpp"
#include "advspheres/parallel.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

namespace advspheres {

void OptimizerConfig::validate() const {
    if (max_iters < 1) throw ConfigError("optimizer max_iters must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("optimizer learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer momentum must lie in [0, 1)");
    if (!(grad_tol > 0.0)) throw ConfigError("optimizer grad_tol must be positive");
    if (batch_size < 0) throw ConfigError("optimizer batch_size must be non-negative");
    if (history < 1) throw ConfigError("optimizer history must be at least 1");
}

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::GradTol: return "grad-tol";
        case Termination::MaxIters: return "max-iters";
        case Termination::NoProgress: return "no-progress";
    }
    return "?";
}

namespace {

/// Negative log-posterior (or negative log-likelihood) over a row subset.
class Objective {
public:
    Objective(const ModelSpec& spec, const LabeledFeatures& data, bool use_prior)
        : spec_(spec), data_(data), signs_(signed_labels(data.labels)), use_prior_(use_prior) {}

    double value_and_grad(const Vector& params, Vector& grad) const {
        const Vector w = to_weights(spec_, params);
        double ll = 0.0;
        Vector gw = Vector::Zero(w.size());
        if (data_.size() > 0) {
            const Eigen::ArrayXd m = signs_ * (data_.features * w).array();
            ll = sum_log_sigmoid(m);
            const Vector r = (signs_ * sigmoid(Eigen::ArrayXd(-m))).matrix();
            gw.noalias() = data_.features.transpose() * r;
        }
        grad = -chain_weight_gradient(spec_, params, gw);
        double lp = 0.0;
        if (use_prior_) {
            lp = log_prior(spec_, params);
            grad -= grad_log_prior(spec_, params);
        }
        return -(ll + lp);
    }

    /// Minibatch estimate; the likelihood part is rescaled by n / batch.
    void minibatch_grad(const Vector& params, const std::vector<Eigen::Index>& rows,
                        Vector& grad) const {
        const Vector w = to_weights(spec_, params);
        Vector gw = Vector::Zero(w.size());
        for (Eigen::Index i : rows) {
            const double s = signs_[i];
            const double a = data_.features.row(i).dot(w);
            gw += (s * sigmoid(-s * a)) * data_.features.row(i).transpose();
        }
        gw *= double(data_.size()) / double(rows.size());
        grad = -chain_weight_gradient(spec_, params, gw);
        if (use_prior_) {
            grad -= grad_log_prior(spec_, params);
        }
    }

private:
    const ModelSpec& spec_;
    const LabeledFeatures& data_;
    Eigen::ArrayXd signs_;
    bool use_prior_;
};

void check_finite(double loss, const Vector& grad, int iteration) {
    if (!std::isfinite(loss) || !grad.allFinite()) {
        throw NumericalError("optimization diverged (non-finite objective) after " +
                             std::to_string(iteration) + " iterations");
    }
}

MapFit run_quasi_newton(const Objective& obj, Vector x, const OptimizerConfig& opt) {
    MapFit fit;
    Vector g;
    double f = obj.value_and_grad(x, g);
    check_finite(f, g, 0);

    std::deque<Vector> s_hist;
    std::deque<Vector> y_hist;
    std::deque<double> rho_hist;
    Vector x_new;
    Vector g_new;

    int it = 0;
    fit.termination = Termination::MaxIters;
    for (; it < opt.max_iters; ++it) {
        const double gnorm = g.norm();
        if (opt.record_trace) {
            fit.trace.push_back({it, f, gnorm});
        }
        if (gnorm <= opt.grad_tol) {
            fit.termination = Termination::GradTol;
            break;
        }

        // Two-loop recursion for the quasi-newton direction.
        Vector q = g;
        const std::size_t k = s_hist.size();
        std::vector<double> alpha(k);
        for (std::size_t i = k; i-- > 0;) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        if (k > 0) {
            q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        }
        for (std::size_t i = 0; i < k; ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        Vector dir = -q;
        double slope = dir.dot(g);
        if (!(slope < 0.0)) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -g;
            slope = -gnorm * gnorm;
        }

        // Backtracking (Armijo) line search.
        double step = s_hist.empty() ? std::min(1.0, 1.0 / gnorm) : 1.0;
        double f_new = f;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = x + step * dir;
            f_new = obj.value_and_grad(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (!s_hist.empty()) {
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
                continue;
            }
            fit.termination = Termination::NoProgress;
            break;
        }
        check_finite(f_new, g_new, it + 1);

        Vector s = x_new - x;
        Vector y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (static_cast<int>(s_hist.size()) == opt.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
        }
        const bool stalled = f_new == f && (x_new - x).norm() == 0.0;
        x.swap(x_new);
        g.swap(g_new);
        f = f_new;
        if (stalled) {
            fit.termination = Termination::NoProgress;
            ++it;
            break;
        }
    }
    fit.params = std::move(x);
    fit.iterations = it;
    fit.loss = f;
    fit.grad_norm = g.norm();
    return fit;
}

MapFit run_momentum_sgd(const Objective& obj, Vector x, Eigen::Index n, const OptimizerConfig& opt) {
    MapFit fit;
    Rng rng(opt.seed);
    const bool full_batch = opt.batch_size == 0 || opt.batch_size >= n;
    const Eigen::Index batch = full_batch ? n : opt.batch_size;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::vector<Eigen::Index> rows;
    Eigen::Index cursor = n;

    Vector velocity = Vector::Zero(x.size());
    Vector g;
    fit.termination = Termination::MaxIters;
    int it = 0;
    for (; it < opt.max_iters; ++it) {
        if (full_batch) {
            const double f = obj.value_and_grad(x, g);
            check_finite(f, g, it);
            const double gnorm = g.norm();
            if (opt.record_trace) {
                fit.trace.push_back({it, f, gnorm});
            }
            if (gnorm <= opt.grad_tol) {
                fit.termination = Termination::GradTol;
                break;
            }
        } else {
            rows.clear();
            for (Eigen::Index b = 0; b < batch; ++b) {
                if (cursor == n) {
                    std::shuffle(order.begin(), order.end(), rng);
                    cursor = 0;
                }
                rows.push_back(order[static_cast<std::size_t>(cursor++)]);
            }
            obj.minibatch_grad(x, rows, g);
            if (!g.allFinite()) {
                throw NumericalError("optimization diverged (non-finite gradient) after " +
                                     std::to_string(it) + " iterations");
            }
            if (opt.record_trace) {
                Vector full_g;
                const double f = obj.value_and_grad(x, full_g);
                fit.trace.push_back({it, f, full_g.norm()});
            }
        }
        velocity = opt.momentum * velocity + g;
        x -= opt.learning_rate * velocity;
        if (!x.allFinite()) {
            throw NumericalError("optimization diverged (non-finite parameters) after " +
                                 std::to_string(it + 1) + " iterations");
        }
    }
    fit.loss = obj.value_and_grad(x, g);
    check_finite(fit.loss, g, it);
    fit.grad_norm = g.norm();
    fit.params = std::move(x);
    fit.iterations = it;
    return fit;
}

}  // namespace

MapFit fit_map(const ModelSpec& spec, const LabeledFeatures& data, const OptimizerConfig& opt,
               bool use_prior) {
    spec.validate();
    opt.validate();
    if (data.dim() != spec.feature_dim) {
        throw DataError("fit_map: data dimension does not match model feature_dim");
    }
    Objective obj(spec, data, use_prior);
    Vector x0 = Vector::Zero(spec.param_dim());
    MapFit fit = opt.method == OptimizerMethod::QuasiNewton
                     ? run_quasi_newton(obj, std::move(x0), opt)
                     : run_momentum_sgd(obj, std::move(x0), data.size(), opt);
    fit.ensemble.weights = to_weights(spec, fit.params).transpose();
    fit.ensemble.source = use_prior ? Method::MAP : Method::MLE;
    fit.ensemble.seed = opt.seed;
    fit.ensemble.spec = spec;
    return fit;
}

LabeledFeatures subset(const LabeledFeatures& data, const std::vector<Eigen::Index>& indices) {
    LabeledFeatures out;
    out.features.resize(static_cast<Eigen::Index>(indices.size()), data.dim());
    out.labels.resize(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto i = indices[r];
        if (i < 0 || i >= data.size()) {
            throw DataError("subset: row index out of range");
        }
        out.features.row(static_cast<Eigen::Index>(r)) = data.features.row(i);
        out.labels[static_cast<Eigen::Index>(r)] = data.labels[i];
    }
    return out;
}

std::uint64_t bootstrap_member_seed(std::uint64_t seed, std::size_t member) {
    return derive_seed(derive_seed(seed, "bootstrap"), static_cast<std::uint64_t>(member));
}

std::vector<Eigen::Index> bootstrap_indices(Eigen::Index n, std::uint64_t member_seed) {
    Rng rng(member_seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (auto& i : idx) {
        i = pick(rng);
    }
    return idx;
}

BootstrapFit fit_bootstrap(const ModelSpec& spec, const LabeledFeatures& data,
                           const OptimizerConfig& opt, int m_models, std::uint64_t seed) {
    if (m_models < 1) {
        throw ConfigError("fit_bootstrap: m_models must be at least 1");
    }
    if (data.size() < 1) {
        throw DataError("fit_bootstrap: empty training set");
    }
    const auto m = static_cast<std::size_t>(m_models);
    BootstrapFit out;
    out.ensemble.weights.resize(m_models, spec.feature_dim);
    out.ensemble.source = Method::Bootstrap;
    out.ensemble.seed = seed;
    out.ensemble.spec = spec;
    out.terminations.resize(m);
    std::vector<std::string> failures(m);

    parallel_for(m, [&](std::size_t i) {
        const auto member_seed = bootstrap_member_seed(seed, i);
        OptimizerConfig member_opt = opt;
        member_opt.seed = member_seed;
        member_opt.record_trace = false;
        try {
            const auto resample = subset(data, bootstrap_indices(data.size(), member_seed));
            const MapFit fit = fit_map(spec, resample, member_opt, true);
            out.ensemble.weights.row(static_cast<Eigen::Index>(i)) = fit.ensemble.weights.row(0);
            out.terminations[i] = fit.termination;
        } catch (const NumericalError& e) {
            failures[i] = e.what();
        }
    });

    std::string failed;
    for (std::size_t i = 0; i < m; ++i) {
        if (!failures[i].empty()) {
            failed += (failed.empty() ? "" : ", ") + std::to_string(i);
        }
    }
    if (!failed.empty()) {
        throw NumericalError("bootstrap members failed to converge: [" + failed + "]");
    }
    return out;
}

void append_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
    const bool fresh = !std::filesystem::exists(path);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::app);
    if (!out) {
        throw DataError("cannot open " + path.string() + " for appending");
    }
    if (fresh) {
        out << "iteration,loss,grad_norm\n";
    }
    for (const auto& row : trace) {
        out << row.iteration << ',' << csv::format(row.loss) << ',' << csv::format(row.grad_norm)
            << '\n';
    }
}

}  // namespace advspheres
