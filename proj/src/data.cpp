#include "advspheres/data.hpp"

#include "advspheres/csv.hpp"

#include <cstring>
#include <fstream>

namespace advspheres {

void SphereConfig::validate() const {
    if (dim < 2) {
        throw ConfigError("sphere dimension must be at least 2");
    }
    if (!(inner_radius > 0.0) || !(outer_radius > inner_radius)) {
        throw ConfigError("radii must satisfy 0 < inner_radius < outer_radius");
    }
    if (n_train < 1 || n_val < 1) {
        throw ConfigError("n_train and n_val must be positive");
    }
}

std::uint64_t SphereConfig::fingerprint() const {
    std::string key = "dim=" + std::to_string(dim) + ";inner=" + csv::format(inner_radius) +
                      ";outer=" + csv::format(outer_radius) + ";n_train=" +
                      std::to_string(n_train) + ";n_val=" + std::to_string(n_val) +
                      ";seed=" + std::to_string(seed);
    return fnv1a(key);
}

Matrix sample_sphere(int dim, double radius, int n, Rng& rng) {
    if (dim < 2) {
        throw ConfigError("sample_sphere: dim must be at least 2");
    }
    if (!(radius > 0.0) || !std::isfinite(radius)) {
        throw ConfigError("sample_sphere: radius must be positive and finite");
    }
    if (n < 1) {
        throw ConfigError("sample_sphere: n must be positive");
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(n, dim);
    for (int i = 0; i < n; ++i) {
        double sq = 0.0;
        // Redraw the (probability-zero) all-zero vector.
        do {
            for (int j = 0; j < dim; ++j) {
                out(i, j) = normal(rng);
            }
            sq = out.row(i).squaredNorm();
        } while (sq == 0.0);
        out.row(i) *= radius / std::sqrt(sq);
    }
    return out;
}

SphereDataset generate_split(const SphereConfig& cfg, Split split) {
    cfg.validate();
    const int n = split == Split::Train ? cfg.n_train : cfg.n_val;
    Rng rng(derive_seed(cfg.seed, split == Split::Train ? "data/train" : "data/val"));
    const int n_outer = n / 2;
    const int n_inner = n - n_outer;
    Matrix inner = sample_sphere(cfg.dim, cfg.inner_radius, n_inner, rng);
    Matrix outer = n_outer > 0 ? sample_sphere(cfg.dim, cfg.outer_radius, n_outer, rng)
                               : Matrix(0, cfg.dim);

    SphereDataset ds;
    ds.split = split;
    ds.points.resize(n, cfg.dim);
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        ds.labels[i] = label;
        ds.points.row(i) = label == 0 ? inner.row(i / 2) : outer.row(i / 2);
    }
    return ds;
}

SphereData generate_dataset(const SphereConfig& cfg) {
    return {generate_split(cfg, Split::Train), generate_split(cfg, Split::Val)};
}

Vector feature_map_point(const Eigen::Ref<const Vector>& x) { return x.array().square().matrix(); }

Matrix feature_map(const Eigen::Ref<const Matrix>& points) {
    return points.array().square().matrix();
}

FeatureNormalizer fit_normalizer(const Eigen::Ref<const Matrix>& train_features) {
    const Eigen::Index n = train_features.rows();
    if (n < 2) {
        throw DataError("fit_normalizer: need at least two training rows");
    }
    FeatureNormalizer norm;
    norm.means = train_features.colwise().mean().transpose();
    norm.stds.resize(train_features.cols());
    for (Eigen::Index j = 0; j < train_features.cols(); ++j) {
        const double var =
            (train_features.col(j).array() - norm.means[j]).square().sum() / double(n - 1);
        if (!(var > 0.0)) {
            throw DataError("fit_normalizer: feature column " + std::to_string(j) +
                            " has zero variance");
        }
        norm.stds[j] = std::sqrt(var);
    }
    return norm;
}

namespace {
void check_dim(Eigen::Index cols, const FeatureNormalizer& norm) {
    if (cols != norm.dim()) {
        throw DataError("normalizer dimension " + std::to_string(norm.dim()) +
                        " does not match feature dimension " + std::to_string(cols));
    }
}
}  // namespace

Matrix normalize(const Eigen::Ref<const Matrix>& features, const FeatureNormalizer& norm) {
    check_dim(features.cols(), norm);
    return ((features.rowwise() - norm.means.transpose()).array().rowwise() /
            norm.stds.transpose().array())
        .matrix();
}

Vector normalize_point(const Eigen::Ref<const Vector>& features, const FeatureNormalizer& norm) {
    check_dim(features.size(), norm);
    return ((features - norm.means).array() / norm.stds.array()).matrix();
}

Matrix denormalize(const Eigen::Ref<const Matrix>& normalized, const FeatureNormalizer& norm) {
    check_dim(normalized.cols(), norm);
    return ((normalized.array().rowwise() * norm.stds.transpose().array()).matrix().rowwise() +
            norm.means.transpose());
}

LabeledFeatures make_features(const SphereDataset& data, const FeatureNormalizer& norm) {
    return {normalize(feature_map(data.points), norm), data.labels};
}

// -- persistence -------------------------------------------------------------

void write_dataset_csv(const std::filesystem::path& path, const SphereDataset& data) {
    auto out = csv::open_out(path);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        for (Eigen::Index j = 0; j < data.dim(); ++j) {
            out << csv::format(data.points(i, j)) << ',';
        }
        out << data.labels[i] << '\n';
    }
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

SphereDataset read_dataset_csv(const std::filesystem::path& path, Split split) {
    const auto table = csv::read(path, false);
    if (table.rows.empty() || table.rows.front().size() < 3) {
        throw DataError(path.string() + ": expected at least two coordinates and a label");
    }
    const auto n = static_cast<Eigen::Index>(table.rows.size());
    const auto d = static_cast<Eigen::Index>(table.rows.front().size()) - 1;
    SphereDataset ds;
    ds.split = split;
    ds.points.resize(n, d);
    ds.labels.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = table.rows[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < d; ++j) {
            ds.points(i, j) = row[static_cast<std::size_t>(j)];
        }
        const double label = row.back();
        if (label != 0.0 && label != 1.0) {
            throw DataError(path.string() + ": label must be 0 or 1");
        }
        ds.labels[i] = static_cast<int>(label);
    }
    return ds;
}

void write_normalizer_csv(const std::filesystem::path& path, const FeatureNormalizer& norm) {
    auto out = csv::open_out(path);
    out << "mean,std\n";
    for (Eigen::Index j = 0; j < norm.dim(); ++j) {
        out << csv::format(norm.means[j]) << ',' << csv::format(norm.stds[j]) << '\n';
    }
}

FeatureNormalizer read_normalizer_csv(const std::filesystem::path& path) {
    const auto table = csv::read(path, true);
    if (table.rows.empty() || table.rows.front().size() != 2) {
        throw DataError(path.string() + ": expected mean,std columns");
    }
    FeatureNormalizer norm;
    const auto d = static_cast<Eigen::Index>(table.rows.size());
    norm.means.resize(d);
    norm.stds.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        norm.means[j] = table.rows[static_cast<std::size_t>(j)][0];
        norm.stds[j] = table.rows[static_cast<std::size_t>(j)][1];
        if (!(norm.stds[j] > 0.0)) {
            throw DataError(path.string() + ": non-positive std");
        }
    }
    return norm;
}

namespace {

constexpr char kCacheMagic[8] = {'A', 'S', 'P', 'H', 'C', 'A', 'C', '1'};

void write_split(std::ofstream& out, const SphereDataset& ds) {
    const std::int64_t n = ds.size();
    const std::int64_t d = ds.dim();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(&d), sizeof d);
    out.write(reinterpret_cast<const char*>(ds.points.data()),
              static_cast<std::streamsize>(sizeof(double) * n * d));
    out.write(reinterpret_cast<const char*>(ds.labels.data()),
              static_cast<std::streamsize>(sizeof(int) * n));
}

SphereDataset read_split(std::ifstream& in, Split split) {
    std::int64_t n = 0;
    std::int64_t d = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    in.read(reinterpret_cast<char*>(&d), sizeof d);
    if (!in || n < 0 || d < 0) {
        throw DataError("corrupt dataset cache");
    }
    SphereDataset ds;
    ds.split = split;
    ds.points.resize(n, d);
    ds.labels.resize(n);
    in.read(reinterpret_cast<char*>(ds.points.data()),
            static_cast<std::streamsize>(sizeof(double) * n * d));
    in.read(reinterpret_cast<char*>(ds.labels.data()),
            static_cast<std::streamsize>(sizeof(int) * n));
    if (!in) {
        throw DataError("truncated dataset cache");
    }
    return ds;
}

}  // namespace

std::filesystem::path cache_path(const std::filesystem::path& dir, const SphereConfig& cfg) {
    char name[64];
    std::snprintf(name, sizeof name, "sphere-%016llx.bin",
                  static_cast<unsigned long long>(cfg.fingerprint()));
    return dir / name;
}

void save_cache(const std::filesystem::path& dir, const SphereConfig& cfg, const SphereData& data) {
    auto out = csv::open_out(cache_path(dir, cfg));
    out.write(kCacheMagic, sizeof kCacheMagic);
    const std::uint64_t fp = cfg.fingerprint();
    out.write(reinterpret_cast<const char*>(&fp), sizeof fp);
    write_split(out, data.train);
    write_split(out, data.val);
    if (!out) {
        throw DataError("failed writing dataset cache");
    }
}

std::optional<SphereData> load_cache(const std::filesystem::path& dir, const SphereConfig& cfg) {
    const auto path = cache_path(dir, cfg);
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    char magic[sizeof kCacheMagic];
    std::uint64_t fp = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&fp), sizeof fp);
    if (!in || std::memcmp(magic, kCacheMagic, sizeof magic) != 0 || fp != cfg.fingerprint()) {
        return std::nullopt;
    }
    SphereData data;
    data.train = read_split(in, Split::Train);
    data.val = read_split(in, Split::Val);
    return data;
}

}  // namespace advspheres
