#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mogen/config.hpp"
#include "mogen/pareto_select.hpp"
#include "mogen/task_oracle.hpp"

namespace mogen {
namespace cli {

inline std::string usage() {
    return "usage: mogen <subcommand> [flags]\n"
           "\n"
           "subcommands:\n"
           "  metadataset       sample architectures, query the oracle, write meta.jsonl\n"
           "  train-score       train the diffusion score network on the meta dataset\n"
           "  train-predictors  train the five guidance predictor heads\n"
           "  tune              search guidance scales (random search + successive halving)\n"
           "  generate          run reverse chains and write a batch of architectures\n"
           "  select            Pareto fronts, picks, and generation metrics for a batch\n"
           "  evaluate          regenerate, pick, and compare oracle accuracy vs baseline\n"
           "  report            per-metric front CSVs for a batch\n"
           "\n"
           "common flags:\n"
           "  --config FILE     JSON run configuration (defaults apply when omitted)\n"
           "  --space NAME      nb201 | mbv3 (required here or in the config)\n"
           "  --seed N          master seed override (for `generate`: batch noise seed)\n"
           "  --artifacts DIR   artifacts root override\n"
           "\n"
           "run `mogen <subcommand>` with a bad flag to see its full flag list.\n";
}

using FlagMap = std::map<std::string, std::string>;

// --name value and --name=value; every flag takes exactly one value
inline FlagMap parse_flags(int argc, const char* const* argv, const std::string& sub,
                           const std::set<std::string>& allowed) {
    FlagMap out;
    auto complain = [&](const std::string& what) {
        std::string msg = "mogen " + sub + ": " + what + "; valid flags:";
        for (const std::string& f : allowed) msg += " --" + f;
        throw ConfigError(msg);
    };
    for (int i = 2; i < argc; ++i) {
        std::string tok = argv[i];
        if (tok.rfind("--", 0) != 0) complain("unexpected argument \"" + tok + "\"");
        tok = tok.substr(2);
        std::string value;
        const std::size_t eq = tok.find('=');
        if (eq != std::string::npos) {
            value = tok.substr(eq + 1);
            tok = tok.substr(0, eq);
        } else {
            if (i + 1 >= argc) complain("flag --" + tok + " expects a value");
            value = argv[++i];
        }
        if (allowed.find(tok) == allowed.end()) complain("unknown flag --" + tok);
        if (!out.emplace(tok, value).second) complain("flag --" + tok + " given twice");
    }
    return out;
}

inline std::string require_flag(const FlagMap& flags, const std::string& sub,
                                const std::string& name) {
    auto it = flags.find(name);
    if (it == flags.end())
        throw ConfigError("mogen " + sub + ": flag --" + name + " is required");
    return it->second;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + " must be a non-negative integer, got \"" + s + "\"");
    }
}

// Start from --config (or an empty object), overlay the shared flag
// overrides, and hand the result to the schema parser.
inline RunConfig resolve_config(const FlagMap& flags) {
    nlohmann::json j = nlohmann::json::object();
    auto it = flags.find("config");
    if (it != flags.end()) {
        j = load_json_file(it->second);
        if (!j.is_object()) throw ConfigError(it->second + ": config must be a JSON object");
    }
    if (flags.count("space")) j["space"] = flags.at("space");
    if (flags.count("seed")) j["seed"] = parse_u64(flags.at("seed"), "--seed");
    if (flags.count("artifacts")) j["artifacts_root"] = flags.at("artifacts");
    if (flags.count("n")) j["meta"]["n"] = parse_u64(flags.at("n"), "--n");
    if (flags.count("budget")) j["tune"]["budget"] = parse_u64(flags.at("budget"), "--budget");
    return run_config_from_json(j);
}

inline std::string require_artifact(const std::string& dir, const std::string& name,
                                    const std::string& producer) {
    const std::string path = dir + "/" + name;
    if (!std::filesystem::exists(path))
        throw std::runtime_error("missing artifact " + path + "; run `mogen " + producer +
                                 "` with the same config first");
    return path;
}

inline void stamp_checkpoint_file(const std::string& path, const RunConfig& cfg) {
    TensorMap m = load_checkpoint(path);
    stamp_checkpoint(m, cfg);
    save_checkpoint(path, m);
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << text;
    if (!os) throw std::runtime_error("write failed for " + path);
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

// CSV artifacts carry provenance as a leading comment line.
inline std::string csv_provenance(const RunConfig& cfg) {
    return "# config_hash=" + config_hash(cfg) + " seed=" + std::to_string(cfg.seed) + "\n";
}

inline void update_manifest(const RunConfig& cfg, const std::string& command,
                            const std::vector<std::string>& produced) {
    const std::string path = artifacts_dir(cfg) + "/manifest.json";
    nlohmann::json m = nlohmann::json::object();
    if (std::filesystem::exists(path)) {
        try {
            m = load_json_file(path);
        } catch (const std::exception&) {
            m = nlohmann::json::object();  // corrupt manifest: rebuild
        }
    }
    m["config_hash"] = config_hash(cfg);
    m["seed"] = cfg.seed;
    m["config"] = config_to_json(cfg);
    if (!m.contains("artifacts") || !m["artifacts"].is_object())
        m["artifacts"] = nlohmann::json::object();
    for (const std::string& name : produced) m["artifacts"][name] = command;
    write_json_file(path, m);
}

// ---- scales files ----

inline nlohmann::json scales_to_json(const GuidanceScales& s) {
    return {{"k_acc", s.k_acc}, {"k_params", s.k_params}, {"k_macs", s.k_macs},
            {"k_lat", s.k_lat}};
}

inline GuidanceScales scales_from_json(const nlohmann::json& j, const std::string& scope) {
    detail::require_keys(j, scope, {"k_acc", "k_params", "k_macs", "k_lat"});
    GuidanceScales s;
    s.k_acc = detail::get_or<double>(j, scope, "k_acc", 0.0);
    s.k_params = detail::get_or<double>(j, scope, "k_params", 0.0);
    s.k_macs = detail::get_or<double>(j, scope, "k_macs", 0.0);
    s.k_lat = detail::get_or<double>(j, scope, "k_lat", 0.0);
    return s;
}

struct ScalesOverride {
    std::optional<GuidanceScales> efficient, accurate, baseline;
};

// Accepts both hand-written override files ({"efficient": {...}, ...}) and
// `mogen tune` output ({"regime": ..., "best": {...}, ...}).
inline ScalesOverride read_scales_file(const std::string& path) {
    const nlohmann::json j = load_json_file(path);
    if (!j.is_object()) throw ConfigError(path + ": scales file must be a JSON object");
    ScalesOverride out;
    if (j.contains("best")) {
        if (!j.contains("regime"))
            throw ConfigError(path + ": tuned scales need a \"regime\" field");
        const Regime r = [&] {
            try {
                return regime_from_name(j.at("regime").get<std::string>());
            } catch (const std::exception&) {
                throw ConfigError(path + ": \"regime\" must be \"efficient\" or \"accurate\"");
            }
        }();
        const GuidanceScales s = scales_from_json(j.at("best"), path + ": best.");
        (r == Regime::kEfficient ? out.efficient : out.accurate) = s;
        return out;
    }
    bool any = false;
    for (const std::string key : {"efficient", "accurate", "baseline"}) {
        if (!j.contains(key)) continue;
        any = true;
        const GuidanceScales s = scales_from_json(j.at(key), path + ": " + key + ".");
        if (key == "efficient") out.efficient = s;
        else if (key == "accurate") out.accurate = s;
        else out.baseline = s;
    }
    if (!any)
        throw ConfigError(path +
                          ": scales file needs \"efficient\", \"accurate\", \"baseline\", or "
                          "tuned {\"regime\", \"best\"} content");
    return out;
}

// ---- batch files ----

struct BatchFile {
    Space space = Space::NB201;
    std::string mode;
    std::uint64_t task_seed = 0;
    std::uint64_t generate_seed = 0;
    std::vector<GeneratedSample> samples;
};

inline void write_batch(const std::string& path, const RunConfig& cfg, const std::string& mode,
                        std::uint64_t task_seed, std::uint64_t generate_seed,
                        const std::vector<GeneratedSample>& samples) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    const nlohmann::json header{{"version", 1},
                                {"config_hash", config_hash(cfg)},
                                {"seed", cfg.seed},
                                {"space", space_name(cfg.space)},
                                {"mode", mode},
                                {"task_seed", task_seed},
                                {"generate_seed", generate_seed},
                                {"count", samples.size()}};
    os << header.dump() << "\n";
    for (const GeneratedSample& s : samples) {
        const nlohmann::json line{{"stream_id", s.stream_id},
                                  {"phase", s.phase},
                                  {"strict", s.strict},
                                  {"arch", arch_to_json(s.arch)}};
        os << line.dump() << "\n";
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

inline BatchFile read_batch(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("batch: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("batch: " + path + ": missing header");
    BatchFile out;
    try {
        const nlohmann::json header = nlohmann::json::parse(line);
        if (header.at("version").get<int>() != 1)
            throw std::runtime_error("unsupported version");
        out.space = space_from_name(header.at("space").get<std::string>());
        out.mode = header.at("mode").get<std::string>();
        out.task_seed = header.at("task_seed").get<std::uint64_t>();
        out.generate_seed = header.at("generate_seed").get<std::uint64_t>();
        std::size_t lineno = 1;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            const nlohmann::json j = nlohmann::json::parse(line);
            GeneratedSample s;
            s.stream_id = j.at("stream_id").get<std::uint64_t>();
            s.phase = j.at("phase").get<int>();
            s.strict = j.at("strict").get<bool>();
            s.arch = arch_from_json(j.at("arch"));
            out.samples.push_back(std::move(s));
        }
        if (out.samples.size() != header.at("count").get<std::size_t>())
            throw std::runtime_error("sample count does not match header");
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("batch: " + path + ": " + e.what());
    }
    return out;
}

// ---- shared run pieces ----

inline ScoreNet load_score(const std::string& dir) {
    return ScoreNet::load(require_artifact(dir, "score.bin", "train-score"));
}

inline PredictorSet load_predictors(const std::string& dir) {
    require_artifact(dir, "pred_acc.bin", "train-predictors");
    return PredictorSet::load(dir + "/pred_");
}

inline std::vector<TaskDescriptor> read_tasks_file(const std::string& path) {
    const nlohmann::json j = load_json_file(path);
    if (!j.is_object() || !j.contains("task_seeds") || !j.at("task_seeds").is_array() ||
        j.at("task_seeds").empty())
        throw ConfigError(path + ": expected {\"task_seeds\": [..]} with at least one seed");
    std::vector<TaskDescriptor> tasks;
    for (const auto& v : j.at("task_seeds")) {
        if (!v.is_number_unsigned())
            throw ConfigError(path + ": task seeds must be non-negative integers");
        tasks.push_back(task_from_seed(v.get<std::uint64_t>()));
    }
    return tasks;
}

inline std::uint64_t read_task_file(const std::string& path) {
    const nlohmann::json j = load_json_file(path);
    if (!j.is_object() || !j.contains("task_seed") || !j.at("task_seed").is_number_unsigned())
        throw ConfigError(path + ": expected {\"task_seed\": N}");
    return j.at("task_seed").get<std::uint64_t>();
}

inline nlohmann::json scored_row(const ScoredArch& s) {
    return {{"arch_hash", s.hash},     {"predicted_acc", s.predicted_acc},
            {"params", s.params},      {"macs", s.macs},
            {"latency_ms", s.latency_ms}, {"phase", s.phase}};
}

// ---- subcommands ----

inline int cmd_metadataset(const FlagMap& flags) {
    const RunConfig cfg = resolve_config(flags);
    const std::string dir = ensure_artifacts_dir(cfg);
    const MetaDataset ds = build_meta_dataset(cfg.meta);
    const std::string path = dir + "/meta.jsonl";
    write_meta(ds, path, {{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}});
    update_manifest(cfg, "metadataset", {"meta.jsonl"});
    std::cout << "wrote " << path << " (" << ds.records.size() << " records)\n";
    return 0;
}

inline int cmd_train_score(const FlagMap& flags) {
    const RunConfig cfg = resolve_config(flags);
    const std::string dir = ensure_artifacts_dir(cfg);
    const MetaDataset meta = read_meta(require_artifact(dir, "meta.jsonl", "metadataset"));
    const ScoreNet net = train_score_from_meta(meta, cfg.sde, cfg.score_train);
    const std::string path = dir + "/score.bin";
    net.save(path);
    stamp_checkpoint_file(path, cfg);
    update_manifest(cfg, "train-score", {"score.bin"});
    std::cout << "wrote " << path << " (final loss " << net.loss_trace().back() << " after "
              << net.loss_trace().size() << " steps)\n";
    return 0;
}

inline int cmd_train_predictors(const FlagMap& flags) {
    const RunConfig cfg = resolve_config(flags);
    const std::string dir = ensure_artifacts_dir(cfg);
    const MetaDataset meta = read_meta(require_artifact(dir, "meta.jsonl", "metadataset"));
    const PredictorSet set =
        train_predictors(meta, cfg.sde, cfg.predictor_train, cfg.shared_trunk);
    set.save(dir + "/pred_");
    std::vector<std::string> produced;
    for (PredHead h : kAllHeads) {
        const std::string name = "pred_" + head_name(h) + ".bin";
        stamp_checkpoint_file(dir + "/" + name, cfg);
        produced.push_back(name);
    }
    nlohmann::json rep = nlohmann::json::object();
    for (const auto& [head, rho] : set.spearman_report()) rep[head] = rho;
    nlohmann::json sj{{"spearman", rep}};
    stamp_provenance(sj, cfg);
    write_json_file(dir + "/spearman.json", sj);
    produced.push_back("spearman.json");
    update_manifest(cfg, "train-predictors", produced);
    std::cout << "wrote " << dir << "/pred_*.bin";
    for (const auto& [head, rho] : set.spearman_report())
        std::cout << "  " << head << "=" << rho;
    std::cout << "\n";
    return 0;
}

inline int cmd_tune(const FlagMap& flags) {
    const std::string regime_str = require_flag(flags, "tune", "regime");
    const Regime regime = [&] {
        try {
            return regime_from_name(regime_str);
        } catch (const std::exception&) {
            throw ConfigError("mogen tune: --regime must be \"efficient\" or \"accurate\"");
        }
    }();
    const std::vector<TaskDescriptor> tasks =
        read_tasks_file(require_flag(flags, "tune", "tasks"));
    const RunConfig cfg = resolve_config(flags);
    const std::string dir = ensure_artifacts_dir(cfg);
    const ScoreNet net = load_score(dir);
    const PredictorSet preds = load_predictors(dir);
    const TuneResult result =
        tune_scales(net, preds, tasks, ScaleBounds::for_regime(regime), cfg.tune);

    nlohmann::json log = nlohmann::json::array();
    for (const TuneTrial& t : result.log)
        log.push_back({{"trial_id", t.trial_id},
                       {"rung", t.rung},
                       {"scales", scales_to_json(t.scales)},
                       {"objective", t.objective},
                       {"chains", t.chains},
                       {"steps", t.steps}});
    nlohmann::json out{{"space", space_name(cfg.space)},
                       {"regime", regime_name(regime)},
                       {"budget", cfg.tune.budget},
                       {"best", scales_to_json(result.best)},
                       {"best_objective", result.best_objective},
                       {"log", log}};
    stamp_provenance(out, cfg);

    const std::string default_name = "scales_" + regime_name(regime) + ".json";
    const std::string path =
        flags.count("out") ? flags.at("out") : dir + "/" + default_name;
    write_json_file(path, out);
    if (!flags.count("out")) update_manifest(cfg, "tune", {default_name});
    std::cout << "wrote " << path << " (best objective " << result.best_objective << ")\n";
    return 0;
}

inline int cmd_generate(const FlagMap& flags) {
    const std::string mode = require_flag(flags, "generate", "mode");
    if (mode != "diffusionnag" && mode != "stretched")
        throw ConfigError("mogen generate: --mode must be \"diffusionnag\" or \"stretched\"");
    const std::uint64_t task_seed = read_task_file(require_flag(flags, "generate", "task"));
    ScalesOverride tuned;
    if (flags.count("scales")) tuned = read_scales_file(flags.at("scales"));

    // --seed names the noise streams of this batch, not the run identity
    FlagMap cfg_flags = flags;
    cfg_flags.erase("seed");
    const RunConfig cfg = resolve_config(cfg_flags);
    const std::string dir = ensure_artifacts_dir(cfg);
    const ScoreNet net = load_score(dir);
    const PredictorSet preds = load_predictors(dir);
    const Tensor demb = encode_dataset(task_from_seed(task_seed));
    const std::uint64_t gen_seed =
        flags.count("seed") ? parse_u64(flags.at("seed"), "--seed") : cfg.seed;

    std::vector<GeneratedSample> batch;
    if (mode == "stretched") {
        PhasePreset eff = efficient_preset(cfg.space);
        PhasePreset acc = accurate_preset(cfg.space);
        if (tuned.efficient) eff.scales = *tuned.efficient;
        if (tuned.accurate) acc.scales = *tuned.accurate;
        batch = generate_stretched(net, preds, demb, eff, acc, Rng(gen_seed),
                                   cfg.generate.per_phase, nullptr,
                                   cfg.generate.max_guidance_step);
    } else {
        const GuidanceScales scales = tuned.baseline ? *tuned.baseline : baseline_scales();
        batch = generate_batch(net, &preds, &demb, scales, cfg.generate.batch_size,
                               Rng(gen_seed), nullptr, 0, cfg.generate.max_guidance_step);
    }

    const std::string path = flags.count("out") ? flags.at("out") : dir + "/batch.jsonl";
    write_batch(path, cfg, mode, task_seed, gen_seed, batch);
    if (!flags.count("out")) update_manifest(cfg, "generate", {"batch.jsonl"});
    std::size_t strict = 0;
    for (const GeneratedSample& s : batch) strict += s.strict ? 1 : 0;
    std::cout << "wrote " << path << " (" << batch.size() << " samples, " << strict
              << " strictly valid)\n";
    return 0;
}

inline int cmd_select(const FlagMap& flags) {
    const RunConfig cfg = resolve_config(flags);
    const std::string dir = ensure_artifacts_dir(cfg);
    const std::string batch_path =
        flags.count("batch") ? flags.at("batch") : require_artifact(dir, "batch.jsonl",
                                                                    "generate");
    const BatchFile batch = read_batch(batch_path);
    if (batch.space != cfg.space)
        throw std::runtime_error(batch_path + " was generated for space " +
                                 space_name(batch.space) + ", config says " +
                                 space_name(cfg.space));
    const PredictorSet preds = load_predictors(dir);
    const MetaDataset meta = read_meta(require_artifact(dir, "meta.jsonl", "metadataset"));
    std::set<std::string> training_hashes;
    for (const MetaRecord& r : meta.records) training_hashes.insert(arch_hash(r.arch));

    const Tensor demb = encode_dataset(task_from_seed(batch.task_seed));
    const std::vector<ScoredArch> scored = score_batch(preds, demb, batch.samples);
    const GenerationMetrics gm = generation_metrics(batch.samples, training_hashes);

    nlohmann::json selections = nlohmann::json::object();
    for (SecondaryMetric m : kAllMetrics) {
        const FrontSelection sel = build_front_selection(scored, m);
        nlohmann::json front = nlohmann::json::array();
        for (const ScoredArch& s : sel.front) front.push_back(scored_row(s));
        selections[metric_name(m)] = {{"front", front},
                                      {"picks",
                                       {{"acc", scored_row(sel.picks.acc)},
                                        {"bal", scored_row(sel.picks.bal)},
                                        {"eff", scored_row(sel.picks.eff)}}}};
    }
    nlohmann::json out{{"space", space_name(cfg.space)},
                       {"mode", batch.mode},
                       {"task_seed", batch.task_seed},
                       {"batch_size", batch.samples.size()},
                       {"generation_metrics",
                        {{"validity", gm.validity},
                         {"uniqueness", gm.uniqueness},
                         {"novelty", gm.novelty}}},
                       {"selections", selections}};
    stamp_provenance(out, cfg);

    const std::string path = flags.count("out") ? flags.at("out") : dir + "/selection.json";
    write_json_file(path, out);
    if (!flags.count("out")) update_manifest(cfg, "select", {"selection.json"});
    std::cout << "wrote " << path << " (validity " << gm.validity << "%, uniqueness "
              << gm.uniqueness << "%, novelty " << gm.novelty << "%)\n";
    return 0;
}

inline int cmd_report(const FlagMap& flags) {
    const RunConfig cfg = resolve_config(flags);
    const std::string dir = ensure_artifacts_dir(cfg);
    const std::string batch_path =
        flags.count("batch") ? flags.at("batch") : require_artifact(dir, "batch.jsonl",
                                                                    "generate");
    const BatchFile batch = read_batch(batch_path);
    if (batch.space != cfg.space)
        throw std::runtime_error(batch_path + " was generated for space " +
                                 space_name(batch.space) + ", config says " +
                                 space_name(cfg.space));
    const PredictorSet preds = load_predictors(dir);
    const Tensor demb = encode_dataset(task_from_seed(batch.task_seed));
    const std::vector<ScoredArch> scored = score_batch(preds, demb, batch.samples);

    std::vector<std::string> produced;
    for (SecondaryMetric m : kAllMetrics) {
        const FrontSelection sel = build_front_selection(scored, m);
        const std::string name = "front_" + metric_name(m) + ".csv";
        write_text_file(dir + "/" + name, csv_provenance(cfg) + front_csv(scored, sel));
        produced.push_back(name);
        std::cout << "wrote " << dir << "/" << name << " (front size " << sel.front.size()
                  << ")\n";
    }
    update_manifest(cfg, "report", produced);
    return 0;
}

inline int cmd_evaluate(const FlagMap& flags) {
    const std::uint64_t task_seed = read_task_file(require_flag(flags, "evaluate", "task"));
    const RunConfig cfg = resolve_config(flags);
    const std::string dir = ensure_artifacts_dir(cfg);
    const ScoreNet net = load_score(dir);
    const PredictorSet preds = load_predictors(dir);
    const TaskDescriptor task = task_from_seed(task_seed);
    const Tensor demb = encode_dataset(task);
    const TaskOracle oracle(cfg.meta.oracle_seed);

    const std::vector<GeneratedSample> stretched = generate_stretched(
        net, preds, demb, efficient_preset(cfg.space), accurate_preset(cfg.space),
        Rng(splitmix64(cfg.seed ^ 0x57E7C8EDULL)), cfg.generate.per_phase, nullptr,
        cfg.generate.max_guidance_step);
    const std::vector<GeneratedSample> base = generate_batch(
        net, &preds, &demb, baseline_scales(), cfg.generate.batch_size,
        Rng(splitmix64(cfg.seed ^ 0xBA5E11E0ULL)), nullptr, 0,
        cfg.generate.max_guidance_step);

    const std::vector<ScoredArch> scored = score_batch(preds, demb, stretched);
    const std::vector<ScoredArch> scored_base = score_batch(preds, demb, base);

    std::ostringstream csv;
    csv << csv_provenance(cfg);
    csv << "mode,metric,pick,arch_hash,predicted_acc,oracle_acc,params,macs,latency_ms\n";
    csv.precision(10);
    const auto row = [&](const std::string& mode, const std::string& metric,
                         const std::string& pick, const ScoredArch& s) {
        csv << mode << ',' << metric << ',' << pick << ',' << s.hash << ','
            << s.predicted_acc << ',' << oracle.accuracy(s.arch, task) << ',' << s.params
            << ',' << s.macs << ',' << s.latency_ms << '\n';
    };
    for (SecondaryMetric m : kAllMetrics) {
        const FrontSelection sel = build_front_selection(scored, m);
        row("stretched", metric_name(m), "Acc", sel.picks.acc);
        row("stretched", metric_name(m), "Bal", sel.picks.bal);
        row("stretched", metric_name(m), "Eff", sel.picks.eff);
    }
    const ScoredArch* best = &scored_base.front();
    for (const ScoredArch& s : scored_base)
        if (s.predicted_acc > best->predicted_acc ||
            (s.predicted_acc == best->predicted_acc && s.hash < best->hash))
            best = &s;
    row("baseline", "", "Best", *best);

    const std::string path = flags.count("out") ? flags.at("out") : dir + "/evaluate.csv";
    write_text_file(path, csv.str());
    if (!flags.count("out")) update_manifest(cfg, "evaluate", {"evaluate.csv"});
    std::cout << "wrote " << path << " (task " << task_seed << ", baseline oracle acc "
              << oracle.accuracy(best->arch, task) << ")\n";
    return 0;
}

} // namespace cli

// Library entry point for the `mogen` binary; exit codes: 0 success,
// 2 configuration error, 3 runtime failure.
inline int cli_main(int argc, const char* const* argv) {
    using namespace cli;
    try {
        if (argc < 2) {
            std::cerr << usage();
            return 2;
        }
        const std::string sub = argv[1];
        if (sub == "help" || sub == "--help" || sub == "-h") {
            std::cout << usage();
            return 0;
        }
        const std::set<std::string> common = {"config", "space", "seed", "artifacts"};
        auto with = [&](std::initializer_list<std::string> extra) {
            std::set<std::string> s = common;
            for (const std::string& e : extra) s.insert(e);
            return s;
        };
        if (sub == "metadataset")
            return cmd_metadataset(parse_flags(argc, argv, sub, with({"n"})));
        if (sub == "train-score")
            return cmd_train_score(parse_flags(argc, argv, sub, with({})));
        if (sub == "train-predictors")
            return cmd_train_predictors(parse_flags(argc, argv, sub, with({})));
        if (sub == "tune")
            return cmd_tune(parse_flags(argc, argv, sub,
                                        with({"regime", "budget", "tasks", "out"})));
        if (sub == "generate")
            return cmd_generate(parse_flags(argc, argv, sub,
                                            with({"task", "mode", "scales", "out"})));
        if (sub == "select")
            return cmd_select(parse_flags(argc, argv, sub, with({"batch", "out"})));
        if (sub == "evaluate")
            return cmd_evaluate(parse_flags(argc, argv, sub, with({"task", "out"})));
        if (sub == "report")
            return cmd_report(parse_flags(argc, argv, sub, with({"batch"})));
        throw ConfigError("unknown subcommand \"" + sub +
                          "\"; expected one of: metadataset train-score train-predictors "
                          "tune generate select evaluate report");
    } catch (const ConfigError& e) {
        std::cerr << "mogen: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "mogen: " << e.what() << "\n";
        return 3;
    }
}

} // namespace mogen
