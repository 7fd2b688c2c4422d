#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mogen/cost_model.hpp"
#include "mogen/rng.hpp"
#include "mogen/search_space.hpp"
#include "mogen/stats.hpp"
#include "mogen/task_oracle.hpp"

namespace mogen {

// The triplet corpus: (task, architecture, objectives) records, persisted as
// JSON-Lines with a header line carrying everything needed to reproduce or
// consume the file (seeds, space, normalization grids). Tasks are stored as
// seed references; task_from_seed(seed) reconstructs the full descriptor.

struct MetaObjectives {
    double y = 0.0;  // oracle accuracy, (0,1)
    double p = 0.0;  // parameter count
    double m = 0.0;  // MACs
    double l = 0.0;  // latency, ms
    bool operator==(const MetaObjectives&) const = default;
};

struct MetaRecord {
    std::uint64_t task_seed = 0;
    Architecture arch;
    MetaObjectives obj;
    bool operator==(const MetaRecord&) const = default;
};

// Sorted quantile grids (at most 1001 points each) used to rank-normalize
// metrics identically at train and inference time.
struct NormStats {
    std::vector<double> acc, params, macs, latency;
    bool operator==(const NormStats&) const = default;
};

struct MetaDataset {
    Space space = Space::NB201;
    std::uint64_t oracle_seed = 0;
    std::uint64_t build_seed = 0;
    NormStats norm;
    std::vector<MetaRecord> records;
};

inline std::size_t default_meta_n(Space s) { return s == Space::NB201 ? 10000 : 20000; }

struct MetaBuildParams {
    Space space = Space::NB201;
    std::size_t n = 0;  // 0 means the space default
    std::uint64_t build_seed = 0;
    std::uint64_t oracle_seed = 1;
    double bias = 0.95;          // NB201 curated-sampling probability
    std::size_t top_k = 250;
    std::size_t probe_tasks = 8; // tasks averaged when ranking the top set
    LatencyModel latency;
};

// Rank the full NB201 space by mean oracle accuracy over a fixed probe-task
// panel (derived from the oracle seed) and keep the best k. Stands in for
// "most performant architectures" without benchmark lookup tables.
inline std::vector<Architecture> nb201_top_set(const TaskOracle& oracle, std::size_t k,
                                               std::size_t probe_tasks) {
    Rng probe_rng = Rng(oracle.seed()).fork(0x70505EULL);
    std::vector<TaskDescriptor> tasks;
    for (std::size_t j = 0; j < probe_tasks; ++j)
        tasks.push_back(task_from_seed(probe_rng.next_u64(), oracle.d_task()));
    std::vector<double> score(kNb201Count, 0.0);
    for (std::size_t i = 0; i < kNb201Count; ++i) {
        const Architecture a = nb201_from_index(i);
        for (const auto& t : tasks) score[i] += oracle.accuracy(a, t);
    }
    std::vector<std::size_t> order(kNb201Count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    std::vector<Architecture> top;
    for (std::size_t i = 0; i < k && i < order.size(); ++i)
        top.push_back(nb201_from_index(order[i]));
    return top;
}

namespace detail {

inline std::vector<double> quantile_grid(std::vector<double> values, std::size_t max_pts = 1001) {
    std::sort(values.begin(), values.end());
    if (values.size() <= max_pts) return values;
    std::vector<double> grid(max_pts);
    for (std::size_t i = 0; i < max_pts; ++i)
        grid[i] = quantile_sorted(values, static_cast<double>(i) /
                                              static_cast<double>(max_pts - 1));
    return grid;
}

inline std::uint64_t latency_noise_seed(std::uint64_t build_seed) {
    return splitmix64(build_seed ^ 0x1A7E9C5ULL);
}

} // namespace detail

inline MetaDataset build_meta_dataset(const MetaBuildParams& params) {
    const std::size_t n = params.n == 0 ? default_meta_n(params.space) : params.n;
    const TaskOracle oracle(params.oracle_seed);
    std::vector<Architecture> top;
    if (params.space == Space::NB201 && params.bias > 0.0)
        top = nb201_top_set(oracle, params.top_k, params.probe_tasks);

    LatencyProtocol proto;
    proto.noise_seed = detail::latency_noise_seed(params.build_seed);

    MetaDataset ds;
    ds.space = params.space;
    ds.oracle_seed = params.oracle_seed;
    ds.build_seed = params.build_seed;
    ds.records.resize(n);
    const Rng base(params.build_seed);
    // records depend only on (build_seed, index): parallel and serial builds
    // produce identical bytes
    for (std::size_t i = 0; i < n; ++i) {
        Rng ri = base.fork(i);
        MetaRecord& rec = ds.records[i];
        rec.task_seed = ri.next_u64();
        const TaskDescriptor task = task_from_seed(rec.task_seed, oracle.d_task());
        rec.arch = params.space == Space::NB201 ? sample_nb201(ri, top, params.bias)
                                                : sample_mbv3(ri);
        rec.obj.y = oracle.accuracy(rec.arch, task);
        rec.obj.p = count_params(rec.arch);
        rec.obj.m = count_macs(rec.arch);
        rec.obj.l = measure_latency(rec.arch, proto, params.latency);
    }

    std::vector<double> ys, ps, ms, ls;
    for (const auto& r : ds.records) {
        ys.push_back(r.obj.y);
        ps.push_back(r.obj.p);
        ms.push_back(r.obj.m);
        ls.push_back(r.obj.l);
    }
    ds.norm.acc = detail::quantile_grid(std::move(ys));
    ds.norm.params = detail::quantile_grid(std::move(ps));
    ds.norm.macs = detail::quantile_grid(std::move(ms));
    ds.norm.latency = detail::quantile_grid(std::move(ls));
    return ds;
}

// ---- persistence ----

inline void write_meta(const MetaDataset& ds, const std::string& path,
                       const nlohmann::json& extra_header = nlohmann::json::object()) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("meta: cannot open " + path + " for writing");
    nlohmann::json header{{"version", 1},
                          {"space", space_name(ds.space)},
                          {"oracle_seed", ds.oracle_seed},
                          {"build_seed", ds.build_seed},
                          {"n", ds.records.size()},
                          {"norm_stats",
                           {{"acc", ds.norm.acc},
                            {"params", ds.norm.params},
                            {"macs", ds.norm.macs},
                            {"latency", ds.norm.latency}}}};
    for (const auto& [key, value] : extra_header.items()) header[key] = value;
    os << header.dump() << "\n";
    for (const auto& r : ds.records) {
        nlohmann::json line{{"task_seed", r.task_seed},
                            {"arch", arch_to_json(r.arch)},
                            {"y", r.obj.y},
                            {"p", r.obj.p},
                            {"m", r.obj.m},
                            {"l", r.obj.l}};
        os << line.dump() << "\n";
    }
    if (!os) throw std::runtime_error("meta: write failed for " + path);
}

inline MetaDataset read_meta(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("meta: cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) {
        throw std::runtime_error("meta: " + path + ": line " + std::to_string(lineno) + ": " + why);
    };
    if (!std::getline(is, line)) {
        lineno = 1;
        fail("missing header");
    }
    lineno = 1;
    MetaDataset ds;
    std::size_t declared = 0;
    try {
        const auto header = nlohmann::json::parse(line);
        if (header.at("version").get<int>() != 1) fail("unsupported version");
        ds.space = space_from_name(header.at("space").get<std::string>());
        ds.oracle_seed = header.at("oracle_seed").get<std::uint64_t>();
        ds.build_seed = header.at("build_seed").get<std::uint64_t>();
        declared = header.at("n").get<std::size_t>();
        const auto& norm = header.at("norm_stats");
        ds.norm.acc = norm.at("acc").get<std::vector<double>>();
        ds.norm.params = norm.at("params").get<std::vector<double>>();
        ds.norm.macs = norm.at("macs").get<std::vector<double>>();
        ds.norm.latency = norm.at("latency").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        fail(e.what());
    }
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            MetaRecord r;
            r.task_seed = j.at("task_seed").get<std::uint64_t>();
            r.arch = arch_from_json(j.at("arch"));
            r.obj.y = j.at("y").get<double>();
            r.obj.p = j.at("p").get<double>();
            r.obj.m = j.at("m").get<double>();
            r.obj.l = j.at("l").get<double>();
            if (r.arch.space != ds.space) fail("record space disagrees with header");
            ds.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            fail(e.what());
        }
    }
    if (ds.records.size() != declared) {
        throw std::runtime_error("meta: " + path + ": header declares " +
                                 std::to_string(declared) + " records, found " +
                                 std::to_string(ds.records.size()));
    }
    return ds;
}

// ---- summaries ----

struct ObjectiveSummary {
    double min = 0.0, max = 0.0, mean = 0.0, std = 0.0;
    std::array<double, 9> deciles{};  // q = 0.1 .. 0.9
};

struct SummaryStats {
    ObjectiveSummary acc, params, macs, latency;
};

namespace detail {

inline ObjectiveSummary summarize(std::vector<double> v) {
    ObjectiveSummary s;
    std::sort(v.begin(), v.end());
    s.min = v.front();
    s.max = v.back();
    s.mean = mean_of(v);
    s.std = sample_std(v);
    for (int i = 1; i <= 9; ++i)
        s.deciles[static_cast<std::size_t>(i - 1)] = quantile_sorted(v, i / 10.0);
    return s;
}

} // namespace detail

inline SummaryStats summary_stats(const MetaDataset& ds) {
    if (ds.records.empty()) throw std::invalid_argument("summary_stats: empty dataset");
    std::vector<double> ys, ps, ms, ls;
    for (const auto& r : ds.records) {
        ys.push_back(r.obj.y);
        ps.push_back(r.obj.p);
        ms.push_back(r.obj.m);
        ls.push_back(r.obj.l);
    }
    return SummaryStats{detail::summarize(std::move(ys)), detail::summarize(std::move(ps)),
                        detail::summarize(std::move(ms)), detail::summarize(std::move(ls))};
}

inline nlohmann::json summary_to_json(const SummaryStats& s) {
    auto one = [](const ObjectiveSummary& o) {
        return nlohmann::json{{"min", o.min},   {"max", o.max},        {"mean", o.mean},
                              {"std", o.std},   {"deciles", o.deciles}};
    };
    return nlohmann::json{{"accuracy", one(s.acc)},
                          {"params", one(s.params)},
                          {"macs", one(s.macs)},
                          {"latency_ms", one(s.latency)}};
}

} // namespace mogen
