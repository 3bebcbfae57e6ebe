#pragma once
// Flat key=value configuration. One struct drives the whole pipeline; the
// same text format is embedded in checkpoints so a run can be reproduced
// from its artifacts alone.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace sam {

struct LossWeights {
    double l2_center = 1.0;
    double l2_outer = 0.25;
    double lpips_center = 0.6;
    double lpips_outer = 0.1;
    double reg = 0.005;
    double id = 0.1;
    double age = 5.0;
    double cycle = 1.0;
};

struct RunConfig {
    // generator
    std::size_t latent_rows = 8;    // L
    std::size_t style_dim = 64;     // D
    std::size_t resolution = 32;
    std::uint64_t gen_seed = 7;
    std::size_t n_avg = 4096;

    // training
    std::size_t steps = 2000;
    std::size_t batch_size = 6;
    double learning_rate = 0.001;
    double same_age_probability = 0.33;
    std::uint64_t seed = 1;
    std::string mode = "residual";  // residual | direct
    double center_fraction = 0.5;
    double age_min = 5.0;
    double age_max = 100.0;
    std::size_t checkpoint_every = 0;  // 0 = final only
    std::size_t loss_downscale = 1;    // losses computed at resolution/loss_downscale
    LossWeights weights;

    // datasets (rendered scenes with known ages)
    std::size_t dataset_size = 192;
    std::uint64_t dataset_seed = 11;
    std::size_t holdout_size = 64;
    std::uint64_t holdout_seed = 12;

    // oracle stand-ins
    std::size_t predictor_width = 12;
    std::size_t eval_predictor_width = 16;
    std::size_t oracle_steps = 2500;
    std::size_t oracle_batch = 16;
    double oracle_lr = 0.005;
    double identity_crop_fraction = 0.7;
    std::size_t embed_resolution = 16;
    std::size_t embed_dim = 16;
    std::size_t embedder_steps = 1250;
    std::size_t embedder_batch = 12;
    double embedder_lr = 0.005;

    // frozen inversion encoder pretraining
    std::size_t inverter_steps = 1400;
    std::size_t inverter_batch = 8;
    double inverter_lr = 0.005;
};

namespace detail {

inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

template <class F>
void each_key(RunConfig& c, F&& f) {
    f("gen_l", c.latent_rows);
    f("gen_d", c.style_dim);
    f("resolution", c.resolution);
    f("gen_seed", c.gen_seed);
    f("n_avg", c.n_avg);
    f("steps", c.steps);
    f("batch_size", c.batch_size);
    f("lr", c.learning_rate);
    f("p_same", c.same_age_probability);
    f("seed", c.seed);
    f("mode", c.mode);
    f("center_fraction", c.center_fraction);
    f("age_min", c.age_min);
    f("age_max", c.age_max);
    f("checkpoint_every", c.checkpoint_every);
    f("loss_downscale", c.loss_downscale);
    f("lambda_l2_center", c.weights.l2_center);
    f("lambda_l2_outer", c.weights.l2_outer);
    f("lambda_lpips_center", c.weights.lpips_center);
    f("lambda_lpips_outer", c.weights.lpips_outer);
    f("lambda_reg", c.weights.reg);
    f("lambda_id", c.weights.id);
    f("lambda_age", c.weights.age);
    f("lambda_cycle", c.weights.cycle);
    f("dataset_size", c.dataset_size);
    f("dataset_seed", c.dataset_seed);
    f("holdout_size", c.holdout_size);
    f("holdout_seed", c.holdout_seed);
    f("predictor_width", c.predictor_width);
    f("eval_predictor_width", c.eval_predictor_width);
    f("oracle_steps", c.oracle_steps);
    f("oracle_batch", c.oracle_batch);
    f("oracle_lr", c.oracle_lr);
    f("identity_crop_fraction", c.identity_crop_fraction);
    f("embed_resolution", c.embed_resolution);
    f("embed_dim", c.embed_dim);
    f("embedder_steps", c.embedder_steps);
    f("embedder_batch", c.embedder_batch);
    f("embedder_lr", c.embedder_lr);
    f("inverter_steps", c.inverter_steps);
    f("inverter_batch", c.inverter_batch);
    f("inverter_lr", c.inverter_lr);
}

template <class T>
void assign(T& dst, const std::string& v) {
    if constexpr (std::is_same_v<T, std::string>) dst = v;
    else if constexpr (std::is_floating_point_v<T>) dst = std::stod(v);
    else dst = static_cast<T>(std::stoull(v));
}

template <class T>
std::string render(const T& v) {
    if constexpr (std::is_same_v<T, std::string>) return v;
    else if constexpr (std::is_floating_point_v<T>) return format_double(v);
    else return std::to_string(v);
}

}  // namespace detail

inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    RunConfig& c = const_cast<RunConfig&>(cfg);
    detail::each_key(c, [&](const char* key, auto& field) {
        os << key << "=" << detail::render(field) << "\n";
    });
    return os.str();
}

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing '='");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    detail::each_key(cfg, [&](const char* key, auto& field) {
        auto it = kv.find(key);
        if (it != kv.end()) {
            detail::assign(field, it->second);
            kv.erase(it);
        }
    });
    if (!kv.empty()) throw std::invalid_argument("config: unknown key '" + kv.begin()->first + "'");
    if (cfg.mode != "residual" && cfg.mode != "direct")
        throw std::invalid_argument("config: mode must be residual or direct");
    if (cfg.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (cfg.same_age_probability < 0.0 || cfg.same_age_probability > 1.0)
        throw std::invalid_argument("config: p_same must be in [0,1]");
    if (cfg.age_min < 5.0 || cfg.age_max > 100.0 || cfg.age_min > cfg.age_max)
        throw std::invalid_argument("config: age range must lie within [5,100]");
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse_config_text(os.str());
}

inline void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("config: cannot write " + path);
    f << serialize_config(cfg);
}

}  // namespace sam
