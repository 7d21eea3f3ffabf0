#pragma once

#include "advspheres/attack.hpp"
#include "advspheres/data.hpp"
#include "advspheres/gaussian.hpp"
#include "advspheres/mcmc.hpp"
#include "advspheres/model.hpp"
#include "advspheres/point.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace advspheres {

enum class Profile { Paper, Ci };
std::string_view to_string(Profile p);
Profile parse_profile(std::string_view name);

/// Everything a run needs. All randomness descends from `seed`.
struct RunConfig {
    Profile profile = Profile::Paper;
    SphereConfig sphere;
    ModelSpec model;
    OptimizerConfig optimizer;
    SliceConfig slice;
    SviConfig svi;
    AttackConfig attack;
    std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
    int ensemble_size = 1000;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
    unsigned threads = 0;  // 0 = hardware concurrency

    void validate() const;
    /// key=value lines for every setting, sorted by key.
    std::string dump() const;
    std::uint64_t fingerprint() const { return fnv1a(dump()); }
};

using Settings = std::map<std::string, std::string>;

/// Parses `key = value` lines; '#' starts a comment. Throws ConfigError.
Settings parse_settings(const std::string& text);
Settings read_settings_file(const std::filesystem::path& path);

/// Applies one flat key (e.g. "attack.restarts") to a config. Throws ConfigError on unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Profile preset, then file settings, then overrides; later layers win.
RunConfig build_config(Profile profile, const Settings& file, const Settings& overrides);

/// Preset defaults: `paper` is D=500, 1000 train, 100k val, 1000-member
/// ensembles, 100 restarts; `ci` is D=50, 200 train, 5k val, 200 members, 10 restarts.
RunConfig profile_defaults(Profile profile);

}  // namespace advspheres
