#pragma once

#include "advspheres/data.hpp"
#include "advspheres/model.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

namespace testing {

using advspheres::LabeledFeatures;
using advspheres::Matrix;
using advspheres::Rng;
using advspheres::Vector;

inline LabeledFeatures random_problem(int n, int d, Rng& rng, double scale = 1.0) {
    LabeledFeatures out;
    out.features = scale * advspheres::standard_normal(static_cast<Eigen::Index>(n) * d, rng)
                               .reshaped(n, d);
    out.labels.resize(n);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < n; ++i) out.labels[i] = coin(rng) ? 1 : 0;
    return out;
}

inline Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
    Vector g(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        g[j] = (f(xp) - f(xm)) / (2 * h);
    }
    return g;
}

/// max_j |a_j - b_j| / max(1, |b_j|)
inline double max_rel_error(const Vector& a, const Vector& b) {
    return ((a - b).array().abs() / b.array().abs().max(1.0)).maxCoeff();
}

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

inline Moments moments(const std::vector<double>& xs) {
    Moments m;
    for (double x : xs) m.mean += x;
    m.mean /= xs.size();
    for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
    m.var /= (xs.size() - 1);
    return m;
}

}  // namespace testing
