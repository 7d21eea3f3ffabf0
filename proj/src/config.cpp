#include "advspheres/config.hpp"

#include "advspheres/csv.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace advspheres {

std::string_view to_string(Profile p) { return p == Profile::Paper ? "paper" : "ci"; }

Profile parse_profile(std::string_view name) {
    if (name == "paper") return Profile::Paper;
    if (name == "ci") return Profile::Ci;
    throw ConfigError("unknown profile '" + std::string(name) + "' (paper, ci)");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return out;
}

long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define ADV_DOUBLE(path)                                                                   \
    Field {                                                                                \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.path = to_double(k, v); }, \
            [](const RunConfig& c) { return csv::format(c.path); }                         \
    }
#define ADV_INT(path)                                                                      \
    Field {                                                                                \
        [](RunConfig& c, const std::string& k, const std::string& v) {                     \
            c.path = static_cast<decltype(c.path)>(to_int(k, v));                          \
        },                                                                                 \
            [](const RunConfig& c) { return std::to_string(c.path); }                      \
    }

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = {
        {"sphere.dim", ADV_INT(sphere.dim)},
        {"sphere.inner_radius", ADV_DOUBLE(sphere.inner_radius)},
        {"sphere.outer_radius", ADV_DOUBLE(sphere.outer_radius)},
        {"sphere.n_train", ADV_INT(sphere.n_train)},
        {"sphere.n_val", ADV_INT(sphere.n_val)},
        {"model.sigma_w", ADV_DOUBLE(model.sigma_w)},
        {"model.sigma_v", ADV_DOUBLE(model.sigma_v)},
        {"model.sigma_mu", ADV_DOUBLE(model.sigma_mu)},
        {"optimizer.max_iters", ADV_INT(optimizer.max_iters)},
        {"optimizer.grad_tol", ADV_DOUBLE(optimizer.grad_tol)},
        {"optimizer.history", ADV_INT(optimizer.history)},
        {"slice.burn_in", ADV_INT(slice.burn_in)},
        {"slice.thin", ADV_INT(slice.thin)},
        {"slice.initial_width", ADV_DOUBLE(slice.initial_width)},
        {"slice.max_step_out", ADV_INT(slice.max_step_out)},
        {"slice.init",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "map-init") c.slice.init = ChainInit::MapInit;
              else if (v == "zero-init") c.slice.init = ChainInit::ZeroInit;
              else throw ConfigError(k + ": expected map-init or zero-init");
          },
          [](const RunConfig& c) {
              return std::string(c.slice.init == ChainInit::MapInit ? "map-init" : "zero-init");
          }}},
        {"svi.max_iters", ADV_INT(svi.opt.max_iters)},
        {"svi.learning_rate", ADV_DOUBLE(svi.opt.learning_rate)},
        {"svi.momentum", ADV_DOUBLE(svi.opt.momentum)},
        {"svi.batch_size", ADV_INT(svi.opt.batch_size)},
        {"svi.mc_samples", ADV_INT(svi.mc_samples)},
        {"svi.grad_clip", ADV_DOUBLE(svi.grad_clip)},
        {"svi.init_scale", ADV_DOUBLE(svi.init_scale)},
        {"svi.hier_learning_rate", ADV_DOUBLE(svi.hier_learning_rate)},
        {"attack.step_size", ADV_DOUBLE(attack.step_size)},
        {"attack.sampled_step_size", ADV_DOUBLE(attack.sampled_step_size)},
        {"attack.surrogate_iters", ADV_INT(attack.surrogate_iters)},
        {"attack.improve_tol", ADV_DOUBLE(attack.improve_tol)},
        {"attack.patience", ADV_INT(attack.patience)},
        {"attack.max_iters", ADV_INT(attack.max_iters)},
        {"attack.restarts", ADV_INT(attack.restarts)},
        {"attack.side",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.attack.side = parse_attack_side(v); },
          [](const RunConfig& c) { return std::string(to_string(c.attack.side)); }}},
        {"bench.ensemble_size", ADV_INT(ensemble_size)},
        {"bench.methods",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              c.methods.clear();
              for (const auto& part : csv::split(v)) {
                  const auto name = trim(part);
                  if (name.empty()) continue;
                  c.methods.push_back(parse_method(name));
              }
              if (c.methods.empty()) throw ConfigError(k + ": no methods given");
          },
          [](const RunConfig& c) {
              std::string s;
              for (Method m : c.methods) {
                  s += (s.empty() ? "" : ",") + std::string(to_string(m));
              }
              return s;
          }}},
        {"run.seed",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
          [](const RunConfig& c) { return std::to_string(c.seed); }}},
        {"run.output_dir",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
          [](const RunConfig& c) { return c.output_dir.string(); }}},
        {"run.threads", ADV_INT(threads)},
    };
    return table;
}

#undef ADV_DOUBLE
#undef ADV_INT

}  // namespace

RunConfig profile_defaults(Profile profile) {
    RunConfig c;
    c.profile = profile;
    if (profile == Profile::Ci) {
        c.sphere.dim = 50;
        c.sphere.n_train = 200;
        c.sphere.n_val = 5000;
        c.ensemble_size = 200;
        c.attack.restarts = 10;
        c.slice.burn_in = 200;
    }
    return c;
}

void RunConfig::validate() const {
    sphere.validate();
    ModelSpec m = model;
    m.feature_dim = sphere.dim;
    m.validate();
    optimizer.validate();
    slice.validate();
    svi.validate();
    attack.validate();
    if (ensemble_size < 1) throw ConfigError("bench.ensemble_size must be positive");
    if (methods.empty()) throw ConfigError("bench.methods must name at least one method");
}

std::string RunConfig::dump() const {
    std::string out = "run.profile=" + std::string(to_string(profile)) + "\n";
    for (const auto& [key, field] : fields()) {
        if (key == "run.output_dir" || key == "run.threads") {
            continue;  // do not affect results
        }
        out += key + "=" + field.get(*this) + "\n";
    }
    return out;
}

Settings parse_settings(const std::string& text) {
    Settings s;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        s[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return s;
}

Settings read_settings_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_settings(buf.str());
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "run.profile") {
        return;  // consumed by build_config
    }
    const auto& table = fields();
    const auto it = table.find(key);
    if (it == table.end()) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    it->second.set(cfg, key, value);
}

RunConfig build_config(Profile profile, const Settings& file, const Settings& overrides) {
    RunConfig cfg = profile_defaults(profile);
    for (const auto& [k, v] : file) apply_setting(cfg, k, v);
    for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
    cfg.sphere.seed = cfg.seed;
    cfg.model.feature_dim = cfg.sphere.dim;
    cfg.validate();
    return cfg;
}

}  // namespace advspheres
