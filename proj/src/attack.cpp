#include "advspheres/attack.hpp"

#include "advspheres/csv.hpp"
#include "advspheres/parallel.hpp"

#include <algorithm>
#include <cctype>
#include <limits>

namespace advspheres {

std::string_view to_string(AttackSide side) {
    switch (side) {
        case AttackSide::Inner: return "inner";
        case AttackSide::Outer: return "outer";
        case AttackSide::Both: return "both";
    }
    return "?";
}

AttackSide parse_attack_side(std::string_view name) {
    if (name == "inner") return AttackSide::Inner;
    if (name == "outer") return AttackSide::Outer;
    if (name == "both") return AttackSide::Both;
    throw ConfigError("unknown attack side '" + std::string(name) + "' (inner, outer, both)");
}

std::string_view to_string(AttackPhase p) {
    switch (p) {
        case AttackPhase::Logit: return "logit";
        case AttackPhase::Surrogate: return "surrogate";
        case AttackPhase::True: return "true";
    }
    return "?";
}

std::string_view to_string(AttackStop s) {
    switch (s) {
        case AttackStop::Patience: return "patience";
        case AttackStop::MaxIters: return "max-iters";
        case AttackStop::NonFinite: return "non-finite";
    }
    return "?";
}

void AttackConfig::validate() const {
    if (!(step_size > 0.0) || !(sampled_step_size > 0.0)) throw ConfigError("attack step sizes must be positive");
    if (surrogate_iters < 0) throw ConfigError("attack surrogate_iters must be non-negative");
    if (!(improve_tol > 0.0)) throw ConfigError("attack improve_tol must be positive");
    if (patience < 1) throw ConfigError("attack patience must be at least 1");
    if (max_iters < 1) throw ConfigError("attack max_iters must be at least 1");
    if (restarts < 1) throw ConfigError("attack restarts must be at least 1");
}

Vector project_to_sphere(const Eigen::Ref<const Vector>& x, double radius) {
    const double top = x.cwiseAbs().maxCoeff();
    if (!(top > 0.0)) {
        throw NumericalError("project_to_sphere: projection of the zero vector is undefined");
    }
    if (!std::isfinite(top)) {
        throw NumericalError("project_to_sphere: non-finite input");
    }
    // Rescale by the largest magnitude first so tiny or huge inputs neither underflow nor overflow.
    const Vector scaled = x / top;
    return scaled * (radius / scaled.norm());
}

namespace {

double target_sign(int target) {
    if (target != 0 && target != 1) {
        throw ConfigError("attack target label must be 0 or 1");
    }
    return target == 1 ? 1.0 : -1.0;
}

/// Activations a_m and the feature-space chain factor d phi~ / dx = 2 x / std.
struct Forward {
    Eigen::ArrayXd act;
    Eigen::ArrayXd chain;
};

Forward forward(const WeightEnsemble& ensemble, const Eigen::Ref<const Vector>& x,
                const FeatureNormalizer& norm) {
    if (x.size() != ensemble.dim() || norm.dim() != ensemble.dim()) {
        throw DataError("attack: dimension mismatch between point, ensemble and normalizer");
    }
    const Vector phi = ((x.array().square() - norm.means.array()) / norm.stds.array()).matrix();
    return {(ensemble.weights * phi).array(), 2.0 * x.array() / norm.stds.array()};
}

Vector input_gradient(const WeightEnsemble& ensemble, const Forward& f, const Eigen::ArrayXd& coef) {
    return ((ensemble.weights.transpose() * coef.matrix()).array() * f.chain).matrix();
}

/// log mean sigmoid(s a) and the softmax weights of its log-sum-exp.
double log_mean_sigmoid(const Eigen::ArrayXd& signed_act, Eigen::ArrayXd* weights) {
    const Eigen::ArrayXd ls = -((-signed_act).max(0.0) + (-signed_act.abs()).exp().log1p());
    const double top = ls.maxCoeff();
    const Eigen::ArrayXd e = (ls - top).exp();
    const double sum = e.sum();
    if (weights) {
        *weights = e / sum;
    }
    return top + std::log(sum) - std::log(double(signed_act.size()));
}

}  // namespace

double target_probability(const WeightEnsemble& ensemble, const Eigen::Ref<const Vector>& x, int target,
                          const FeatureNormalizer& norm) {
    const double s = target_sign(target);
    return mean_sigmoid((s * forward(ensemble, x, norm).act).matrix());
}

ObjectiveValue surrogate_objective(const WeightEnsemble& ensemble, const Eigen::Ref<const Vector>& x,
                                   int target, const FeatureNormalizer& norm) {
    const double s = target_sign(target);
    const Forward f = forward(ensemble, x, norm);
    const Eigen::ArrayXd sa = s * f.act;
    const double value = sum_log_sigmoid(sa);
    // d/da log sigmoid(s a) = s sigmoid(-s a)
    const Eigen::ArrayXd coef = s * sigmoid(Eigen::ArrayXd(-sa));
    return {value, input_gradient(ensemble, f, coef)};
}

ObjectiveValue true_objective(const WeightEnsemble& ensemble, const Eigen::Ref<const Vector>& x,
                              int target, const FeatureNormalizer& norm) {
    const double s = target_sign(target);
    const Forward f = forward(ensemble, x, norm);
    const Eigen::ArrayXd sa = s * f.act;
    Eigen::ArrayXd soft;
    const double value = log_mean_sigmoid(sa, &soft);
    const Eigen::ArrayXd coef = soft * s * sigmoid(Eigen::ArrayXd(-sa));
    return {value, input_gradient(ensemble, f, coef)};
}

ObjectiveValue logit_objective(const WeightEnsemble& ensemble, const Eigen::Ref<const Vector>& x,
                               int target, const FeatureNormalizer& norm) {
    if (ensemble.size() != 1) {
        throw ConfigError("logit_objective: defined for single models only");
    }
    const double s = target_sign(target);
    const Forward f = forward(ensemble, x, norm);
    const Eigen::ArrayXd coef = Eigen::ArrayXd::Constant(1, s);
    return {s * f.act[0], input_gradient(ensemble, f, coef)};
}

namespace {

RestartResult run_restart(const WeightEnsemble& ensemble, const FeatureNormalizer& norm, double radius,
                          int target, const AttackConfig& cfg, double step, std::uint64_t seed) {
    Rng rng(seed);
    const int d = static_cast<int>(ensemble.dim());
    Vector x = sample_sphere(d, radius, 1, rng).row(0).transpose();
    const bool single = ensemble.size() == 1;
    const double s = target_sign(target);

    RestartResult out;
    out.phase = single ? AttackPhase::Logit
                       : (cfg.surrogate_iters > 0 ? AttackPhase::Surrogate : AttackPhase::True);
    out.stop = AttackStop::MaxIters;
    double best_true = -std::numeric_limits<double>::infinity();
    double best_obj = -std::numeric_limits<double>::infinity();
    double anchor = best_obj;
    int stall = 0;
    Vector best_x = x;
    std::vector<Vector> traj;

    int it = 0;
    for (;; ++it) {
        out.max_radius_error = std::max(out.max_radius_error, std::abs(x.norm() - radius) / radius);
        if (cfg.record_trajectories) {
            traj.push_back(x);
        }
        if (out.phase == AttackPhase::Surrogate && it == cfg.surrogate_iters) {
            out.phase = AttackPhase::True;
        }
        ObjectiveValue obj{};
        switch (out.phase) {
            case AttackPhase::Logit: obj = logit_objective(ensemble, x, target, norm); break;
            case AttackPhase::Surrogate: obj = surrogate_objective(ensemble, x, target, norm); break;
            case AttackPhase::True: obj = true_objective(ensemble, x, target, norm); break;
        }

        // Best point tracking uses the exact target log-probability in every phase.
        const double true_value = out.phase == AttackPhase::True
                                      ? obj.value
                                      : log_mean_sigmoid(s * forward(ensemble, x, norm).act, nullptr);
        if (true_value > best_true) {
            best_true = true_value;
            best_x = x;
        }
        out.best_history.push_back(best_true);

        if (!std::isfinite(obj.value) || !obj.grad.allFinite()) {
            out.stop = AttackStop::NonFinite;
            break;
        }
        if (out.phase != AttackPhase::Surrogate) {
            best_obj = std::max(best_obj, obj.value);
            if (best_obj > anchor + cfg.improve_tol) {
                anchor = best_obj;
                stall = 0;
            } else if (++stall >= cfg.patience) {
                out.stop = AttackStop::Patience;
                break;
            }
        }
        if (it == cfg.max_iters) {
            out.stop = AttackStop::MaxIters;
            break;
        }
        const Vector moved = x + step * obj.grad;
        if (!moved.allFinite()) {
            out.stop = AttackStop::NonFinite;
            break;
        }
        x = project_to_sphere(moved, radius);
    }
    out.iterations = it;
    out.final_point = best_x;
    out.final_prob = target_probability(ensemble, best_x, target, norm);
    if (cfg.record_trajectories) {
        out.trajectory.resize(static_cast<Eigen::Index>(traj.size()), d);
        for (std::size_t i = 0; i < traj.size(); ++i) {
            out.trajectory.row(static_cast<Eigen::Index>(i)) = traj[i].transpose();
        }
    }
    return out;
}

}  // namespace

AttackResult run_attack(const WeightEnsemble& ensemble, const FeatureNormalizer& norm, double radius,
                        int source_label, const AttackConfig& cfg) {
    cfg.validate();
    if (source_label != 0 && source_label != 1) {
        throw ConfigError("run_attack: source label must be 0 or 1");
    }
    if (!(radius > 0.0)) {
        throw ConfigError("run_attack: radius must be positive");
    }
    if (ensemble.size() < 1) {
        throw DataError("run_attack: empty ensemble");
    }
    AttackResult result;
    result.source_label = source_label;
    result.target_label = 1 - source_label;
    result.radius = radius;
    result.per_restart.resize(static_cast<std::size_t>(cfg.restarts));
    const std::uint64_t base = derive_seed(cfg.seed, source_label == 0 ? "attack/inner" : "attack/outer");
    parallel_for(result.per_restart.size(), [&](std::size_t r) {
        result.per_restart[r] = run_restart(ensemble, norm, radius, result.target_label, cfg, cfg.step_size,
                                            derive_seed(base, static_cast<std::uint64_t>(r)));
    });

    std::size_t best = 0;
    for (std::size_t r = 1; r < result.per_restart.size(); ++r) {
        if (result.per_restart[r].final_prob > result.per_restart[best].final_prob) {
            best = r;
        }
    }
    result.best_point = result.per_restart[best].final_point;
    result.best_target_prob = target_probability(ensemble, result.best_point, result.target_label, norm);
    return result;
}

double step_size_for(Method source, const AttackConfig& cfg) {
    switch (source) {
        case Method::MCMC:
        case Method::MCMCMeanHier:
        case Method::SVI:
        case Method::SVIHier:
            return cfg.sampled_step_size;
        default:
            return cfg.step_size;
    }
}

void write_attack_result(const std::filesystem::path& restarts_csv,
                         const std::filesystem::path& point_csv, const AttackResult& result) {
    {
        auto out = csv::open_out(restarts_csv);
        out << "restart,final_prob,iterations,phase,termination\n";
        for (std::size_t r = 0; r < result.per_restart.size(); ++r) {
            const auto& rr = result.per_restart[r];
            out << r << ',' << csv::format(rr.final_prob) << ',' << rr.iterations << ','
                << to_string(rr.phase) << ',' << to_string(rr.stop) << '\n';
        }
    }
    auto out = csv::open_out(point_csv);
    out << "x\n";
    for (Eigen::Index j = 0; j < result.best_point.size(); ++j) {
        out << csv::format(result.best_point[j]) << '\n';
    }
}

}  // namespace advspheres
