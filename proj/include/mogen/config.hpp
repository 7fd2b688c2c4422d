#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mogen/guided_sampler.hpp"
#include "mogen/meta_dataset.hpp"
#include "mogen/predictors.hpp"
#include "mogen/scale_tuner.hpp"
#include "mogen/score_network.hpp"

namespace mogen {

// User-facing configuration problems: bad flags, malformed JSON, schema
// violations. Mapped to exit code 2 by the CLI; everything else is 3.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GenerateDefaults {
    std::size_t batch_size = 256;  // single-phase batches
    std::size_t per_phase = 128;   // stretched phases
    double max_guidance_step = kDefaultMaxGuidanceStep;
};

struct RunConfig {
    Space space = Space::NB201;
    std::uint64_t seed = 0;
    std::string artifacts_root = "artifacts";
    SdeSchedule sde;
    MetaBuildParams meta;
    ScoreTrainConfig score_train;
    PredictorTrainConfig predictor_train;
    bool shared_trunk = true;
    GenerateDefaults generate;
    TunerConfig tune;
};

namespace detail {

inline void require_keys(const nlohmann::json& obj, const std::string& scope,
                         const std::set<std::string>& allowed) {
    if (!obj.is_object())
        throw ConfigError("config: " + scope + " must be a JSON object");
    for (const auto& [key, _] : obj.items()) {
        if (allowed.find(key) == allowed.end()) {
            std::string msg = "config: unknown key \"" + scope + key + "\"; allowed keys:";
            for (const std::string& k : allowed) msg += " " + k;
            throw ConfigError(msg);
        }
    }
}

template <typename T>
T get_or(const nlohmann::json& obj, const std::string& scope, const std::string& key,
         T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: \"" + scope + key + "\" has the wrong type");
    }
}

inline void check_positive(double v, const std::string& what) {
    if (!(v > 0.0)) throw ConfigError("config: \"" + what + "\" must be > 0");
}

} // namespace detail

// Full-schema parse with strict unknown-key rejection. Every field has a
// default except "space"; numeric sanity is checked before any work starts.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using detail::get_or;
    using detail::require_keys;
    require_keys(j, "", {"space", "seed", "artifacts_root", "sde", "meta", "score_train",
                         "predictor_train", "generate", "tune"});
    if (!j.contains("space")) throw ConfigError("config: \"space\" is required");

    RunConfig cfg;
    try {
        cfg.space = space_from_name(j.at("space").get<std::string>());
    } catch (const std::exception&) {
        throw ConfigError("config: \"space\" must be \"nb201\" or \"mbv3\"");
    }
    cfg.seed = get_or<std::uint64_t>(j, "", "seed", 0);
    cfg.artifacts_root = get_or<std::string>(j, "", "artifacts_root", "artifacts");
    if (cfg.artifacts_root.empty())
        throw ConfigError("config: \"artifacts_root\" must be non-empty");

    const nlohmann::json sde = j.value("sde", nlohmann::json::object());
    require_keys(sde, "sde.", {"sigma_min", "sigma_max", "T", "steps"});
    cfg.sde.sigma_min = get_or<double>(sde, "sde.", "sigma_min", cfg.sde.sigma_min);
    cfg.sde.sigma_max = get_or<double>(sde, "sde.", "sigma_max", cfg.sde.sigma_max);
    cfg.sde.T = get_or<double>(sde, "sde.", "T", cfg.sde.T);
    cfg.sde.steps = get_or<int>(sde, "sde.", "steps", cfg.sde.steps);
    try {
        cfg.sde.check();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: sde: ") + e.what());
    }

    const nlohmann::json meta = j.value("meta", nlohmann::json::object());
    require_keys(meta, "meta.", {"n", "oracle_seed", "bias", "top_k", "probe_tasks"});
    cfg.meta.space = cfg.space;
    cfg.meta.build_seed = cfg.seed;
    cfg.meta.n = get_or<std::size_t>(meta, "meta.", "n", cfg.meta.n);
    cfg.meta.oracle_seed = get_or<std::uint64_t>(meta, "meta.", "oracle_seed",
                                                 cfg.meta.oracle_seed);
    cfg.meta.bias = get_or<double>(meta, "meta.", "bias", cfg.meta.bias);
    if (cfg.meta.bias < 0.0 || cfg.meta.bias > 1.0)
        throw ConfigError("config: \"meta.bias\" must lie in [0, 1]");
    cfg.meta.top_k = get_or<std::size_t>(meta, "meta.", "top_k", cfg.meta.top_k);
    cfg.meta.probe_tasks =
        get_or<std::size_t>(meta, "meta.", "probe_tasks", cfg.meta.probe_tasks);

    const nlohmann::json st = j.value("score_train", nlohmann::json::object());
    require_keys(st, "score_train.", {"steps", "batch", "lr", "lr_min", "t_min"});
    cfg.score_train.steps = get_or<std::size_t>(st, "score_train.", "steps",
                                                cfg.score_train.steps);
    cfg.score_train.batch = get_or<std::size_t>(st, "score_train.", "batch",
                                                cfg.score_train.batch);
    cfg.score_train.lr = get_or<double>(st, "score_train.", "lr", cfg.score_train.lr);
    cfg.score_train.lr_min =
        get_or<double>(st, "score_train.", "lr_min", cfg.score_train.lr_min);
    cfg.score_train.t_min = get_or<double>(st, "score_train.", "t_min", cfg.score_train.t_min);
    cfg.score_train.seed = cfg.seed;
    if (cfg.score_train.steps < 1 || cfg.score_train.batch < 1)
        throw ConfigError("config: score_train steps and batch must be >= 1");
    detail::check_positive(cfg.score_train.lr, "score_train.lr");
    detail::check_positive(cfg.score_train.t_min, "score_train.t_min");

    const nlohmann::json pt = j.value("predictor_train", nlohmann::json::object());
    require_keys(pt, "predictor_train.",
                 {"steps", "batch", "lr", "lr_min", "weight_decay", "t_min", "holdout_every",
                  "shared_trunk"});
    cfg.predictor_train.steps =
        get_or<std::size_t>(pt, "predictor_train.", "steps", cfg.predictor_train.steps);
    cfg.predictor_train.batch =
        get_or<std::size_t>(pt, "predictor_train.", "batch", cfg.predictor_train.batch);
    cfg.predictor_train.lr = get_or<double>(pt, "predictor_train.", "lr",
                                            cfg.predictor_train.lr);
    cfg.predictor_train.lr_min =
        get_or<double>(pt, "predictor_train.", "lr_min", cfg.predictor_train.lr_min);
    cfg.predictor_train.weight_decay = get_or<double>(pt, "predictor_train.", "weight_decay",
                                                      cfg.predictor_train.weight_decay);
    cfg.predictor_train.t_min =
        get_or<double>(pt, "predictor_train.", "t_min", cfg.predictor_train.t_min);
    cfg.predictor_train.holdout_every = get_or<std::size_t>(
        pt, "predictor_train.", "holdout_every", cfg.predictor_train.holdout_every);
    cfg.predictor_train.seed = cfg.seed;
    cfg.shared_trunk = get_or<bool>(pt, "predictor_train.", "shared_trunk", cfg.shared_trunk);
    if (cfg.predictor_train.steps < 1 || cfg.predictor_train.batch < 1)
        throw ConfigError("config: predictor_train steps and batch must be >= 1");

    const nlohmann::json gen = j.value("generate", nlohmann::json::object());
    require_keys(gen, "generate.", {"batch_size", "per_phase", "max_guidance_step"});
    cfg.generate.batch_size =
        get_or<std::size_t>(gen, "generate.", "batch_size", cfg.generate.batch_size);
    cfg.generate.per_phase =
        get_or<std::size_t>(gen, "generate.", "per_phase", cfg.generate.per_phase);
    cfg.generate.max_guidance_step = get_or<double>(gen, "generate.", "max_guidance_step",
                                                    cfg.generate.max_guidance_step);
    if (cfg.generate.batch_size < 1 || cfg.generate.per_phase < 1)
        throw ConfigError("config: generate batch_size and per_phase must be >= 1");
    detail::check_positive(cfg.generate.max_guidance_step, "generate.max_guidance_step");

    const nlohmann::json tn = j.value("tune", nlohmann::json::object());
    require_keys(tn, "tune.",
                 {"budget", "rung0_chains", "rung0_steps", "rung1_chains", "rung1_steps"});
    cfg.tune.budget = get_or<std::size_t>(tn, "tune.", "budget", cfg.tune.budget);
    cfg.tune.rung0_chains =
        get_or<std::size_t>(tn, "tune.", "rung0_chains", cfg.tune.rung0_chains);
    cfg.tune.rung0_steps = get_or<int>(tn, "tune.", "rung0_steps", cfg.tune.rung0_steps);
    cfg.tune.rung1_chains =
        get_or<std::size_t>(tn, "tune.", "rung1_chains", cfg.tune.rung1_chains);
    cfg.tune.rung1_steps = get_or<int>(tn, "tune.", "rung1_steps", cfg.tune.rung1_steps);
    cfg.tune.seed = cfg.seed;
    cfg.tune.max_guidance_step = cfg.generate.max_guidance_step;
    if (cfg.tune.budget < 1) throw ConfigError("config: \"tune.budget\" must be >= 1");

    return cfg;
}

// Normalized image of the config: every field present, keys sorted by the
// JSON object representation. Hashing this makes spelled-out defaults and
// omitted defaults identical runs.
inline nlohmann::json config_to_json(const RunConfig& cfg) {
    return nlohmann::json{
        {"space", space_name(cfg.space)},
        {"seed", cfg.seed},
        {"artifacts_root", cfg.artifacts_root},
        {"sde",
         {{"sigma_min", cfg.sde.sigma_min},
          {"sigma_max", cfg.sde.sigma_max},
          {"T", cfg.sde.T},
          {"steps", cfg.sde.steps}}},
        {"meta",
         {{"n", cfg.meta.n},
          {"oracle_seed", cfg.meta.oracle_seed},
          {"bias", cfg.meta.bias},
          {"top_k", cfg.meta.top_k},
          {"probe_tasks", cfg.meta.probe_tasks}}},
        {"score_train",
         {{"steps", cfg.score_train.steps},
          {"batch", cfg.score_train.batch},
          {"lr", cfg.score_train.lr},
          {"lr_min", cfg.score_train.lr_min},
          {"t_min", cfg.score_train.t_min}}},
        {"predictor_train",
         {{"steps", cfg.predictor_train.steps},
          {"batch", cfg.predictor_train.batch},
          {"lr", cfg.predictor_train.lr},
          {"lr_min", cfg.predictor_train.lr_min},
          {"weight_decay", cfg.predictor_train.weight_decay},
          {"t_min", cfg.predictor_train.t_min},
          {"holdout_every", cfg.predictor_train.holdout_every},
          {"shared_trunk", cfg.shared_trunk}}},
        {"generate",
         {{"batch_size", cfg.generate.batch_size},
          {"per_phase", cfg.generate.per_phase},
          {"max_guidance_step", cfg.generate.max_guidance_step}}},
        {"tune",
         {{"budget", cfg.tune.budget},
          {"rung0_chains", cfg.tune.rung0_chains},
          {"rung0_steps", cfg.tune.rung0_steps},
          {"rung1_chains", cfg.tune.rung1_chains},
          {"rung1_steps", cfg.tune.rung1_steps}}}};
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string config_hash(const RunConfig& cfg) {
    const std::uint64_t h = fnv1a64(config_to_json(cfg).dump());
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = hex[(h >> (4 * i)) & 0xF];
    return out;
}

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
}

inline RunConfig load_run_config(const std::string& path) {
    return run_config_from_json(load_json_file(path));
}

// One artifacts directory per run, named by the config hash.
inline std::string artifacts_dir(const RunConfig& cfg) {
    return cfg.artifacts_root + "/" + config_hash(cfg);
}

inline std::string ensure_artifacts_dir(const RunConfig& cfg) {
    const std::string dir = artifacts_dir(cfg);
    std::filesystem::create_directories(dir);
    return dir;
}

// Provenance fields stamped into every JSON artifact.
inline void stamp_provenance(nlohmann::json& j, const RunConfig& cfg) {
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.seed;
}

// Checkpoint meta holds doubles only; the 64-bit hash is split into two
// exactly-representable 32-bit halves.
inline void stamp_checkpoint(TensorMap& m, const RunConfig& cfg) {
    const std::uint64_t h = fnv1a64(config_to_json(cfg).dump());
    put_meta(m, "run.seed", static_cast<double>(cfg.seed));
    put_meta(m, "run.config_hash_hi", static_cast<double>(h >> 32));
    put_meta(m, "run.config_hash_lo", static_cast<double>(h & 0xFFFFFFFFULL));
}

} // namespace mogen
