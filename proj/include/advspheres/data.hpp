#pragma once

#include "advspheres/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace advspheres {

enum class Split { Train, Val };

struct SphereConfig {
    int dim = 500;
    double inner_radius = 1.0;
    double outer_radius = 1.3;
    int n_train = 1000;
    int n_val = 100000;
    std::uint64_t seed = 0;

    /// Throws ConfigError unless dim >= 2, 0 < inner < outer and sizes are positive.
    void validate() const;
    double radius(int label) const { return label == 0 ? inner_radius : outer_radius; }
    /// Stable 64-bit fingerprint of every field, used to key the binary cache.
    std::uint64_t fingerprint() const;
};

/// Points on two concentric spheres. Label 0 is the inner sphere, label 1 the outer.
struct SphereDataset {
    Matrix points;          // n x D
    Eigen::VectorXi labels; // n, values in {0, 1}
    Split split = Split::Train;

    Eigen::Index size() const { return points.rows(); }
    Eigen::Index dim() const { return points.cols(); }
};

/// Normalized features paired with labels; the input to every inference method.
struct LabeledFeatures {
    Matrix features;        // n x D
    Eigen::VectorXi labels; // n

    Eigen::Index size() const { return features.rows(); }
    Eigen::Index dim() const { return features.cols(); }
};

/// Per-column z-score statistics fitted on the training split.
struct FeatureNormalizer {
    Vector means;
    Vector stds;

    Eigen::Index dim() const { return means.size(); }
};

/// n points drawn uniformly on the sphere of the given radius in R^dim
/// (normalized Gaussian draws, scaled).
Matrix sample_sphere(int dim, double radius, int n, Rng& rng);

/// Generates one split. Labels alternate 0,1,0,1,... so both classes are
/// balanced; each split draws from its own stream derived from cfg.seed.
SphereDataset generate_split(const SphereConfig& cfg, Split split);

struct SphereData {
    SphereDataset train;
    SphereDataset val;
};

SphereData generate_dataset(const SphereConfig& cfg);

/// Squared-coordinate basis: out[j] = x[j]^2.
Vector feature_map_point(const Eigen::Ref<const Vector>& x);
Matrix feature_map(const Eigen::Ref<const Matrix>& points);

/// Per-column sample mean and sample standard deviation (divisor n-1).
/// Throws DataError for n < 2 or any zero-variance column.
FeatureNormalizer fit_normalizer(const Eigen::Ref<const Matrix>& train_features);

Matrix normalize(const Eigen::Ref<const Matrix>& features, const FeatureNormalizer& norm);
Vector normalize_point(const Eigen::Ref<const Vector>& features, const FeatureNormalizer& norm);
Matrix denormalize(const Eigen::Ref<const Matrix>& normalized, const FeatureNormalizer& norm);

/// feature_map followed by normalize.
LabeledFeatures make_features(const SphereDataset& data, const FeatureNormalizer& norm);

// -- persistence -------------------------------------------------------------

/// One row per point: D coordinates followed by the label.
void write_dataset_csv(const std::filesystem::path& path, const SphereDataset& data);
SphereDataset read_dataset_csv(const std::filesystem::path& path, Split split);

/// Two columns (mean, std), one row per feature.
void write_normalizer_csv(const std::filesystem::path& path, const FeatureNormalizer& norm);
FeatureNormalizer read_normalizer_csv(const std::filesystem::path& path);

/// Binary cache file name for a configuration: sphere-<fingerprint>.bin.
std::filesystem::path cache_path(const std::filesystem::path& dir, const SphereConfig& cfg);
void save_cache(const std::filesystem::path& dir, const SphereConfig& cfg, const SphereData& data);
/// Returns nullopt when no cache exists for this exact configuration.
std::optional<SphereData> load_cache(const std::filesystem::path& dir, const SphereConfig& cfg);

}  // namespace advspheres
