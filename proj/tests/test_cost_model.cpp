#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mogen/cost_model.hpp"
#include "mogen/rng.hpp"
#include "mogen/search_space.hpp"

using namespace mogen;

namespace {

Architecture uniform_cell(int op) {
    Architecture a;
    a.space = Space::NB201;
    for (auto& e : a.nb201.edge_ops) e = op;
    return a;
}

// independent straight-line oracle for the weight-free skeleton
double nb201_skeleton_params() {
    const double stem = 3 * 16 * 9 + 2 * 16;
    const double red1 = (16 * 32 * 9 + 2 * 32) + (32 * 32 * 9 + 2 * 32) + 16 * 32;
    const double red2 = (32 * 64 * 9 + 2 * 64) + (64 * 64 * 9 + 2 * 64) + 32 * 64;
    const double lastact = 2 * 64;
    const double classifier = 64 * 20 + 20;
    return stem + red1 + red2 + lastact + classifier;
}

} // namespace

TEST_CASE("weight-free cells contribute zero parameters and macs") {
    const double skeleton = nb201_skeleton_params();
    REQUIRE(count_params(uniform_cell(kZeroise)) == skeleton);
    REQUIRE(count_params(uniform_cell(kSkip)) == skeleton);
    REQUIRE(count_params(uniform_cell(kAvgPool3x3)) == skeleton);

    const double mz = count_macs(uniform_cell(kZeroise), 32);
    const double ms = count_macs(uniform_cell(kSkip), 32);
    REQUIRE(mz == ms);  // zeroise and skip cells cost the same: nothing
    // avgpool cells do add macs
    REQUIRE(count_macs(uniform_cell(kAvgPool3x3), 32) > mz);
}

TEST_CASE("per-edge closed forms") {
    REQUIRE(nb201_edge_params(kConv1x1, 16) == 16 * 16 * 1 + 2 * 16);  // 288
    REQUIRE(nb201_edge_params(kConv3x3, 16) == 16 * 16 * 9 + 2 * 16);
    REQUIRE(nb201_edge_params(kAvgPool3x3, 16) == 0.0);

    for (double c : {16.0, 32.0, 64.0}) {
        for (double h : {8.0, 16.0, 32.0}) {
            // conv3x3 is exactly 9x conv1x1 in MACs (same channels/resolution)
            REQUIRE(nb201_edge_macs(kConv3x3, c, h) == 9.0 * nb201_edge_macs(kConv1x1, c, h));
            // halving the resolution quarters a conv edge's MACs
            REQUIRE(nb201_edge_macs(kConv3x3, c, h / 2) ==
                    nb201_edge_macs(kConv3x3, c, h) / 4.0);
        }
    }

    // whole-network difference decomposes by stage: one conv1x1 edge adds
    // 5 cells x (C^2 + 2C) at each of C = 16, 32, 64
    Architecture one = uniform_cell(kZeroise);
    one.nb201.edge_ops[0] = kConv1x1;
    const double diff = count_params(one) - count_params(uniform_cell(kZeroise));
    const double want = 5.0 * ((16.0 * 16 + 32) + (32.0 * 32 + 64) + (64.0 * 64 + 128));
    REQUIRE(diff == want);
}

TEST_CASE("zeroise -> conv3x3 swaps never decrease cost") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        Architecture a = sample_nb201(rng, {}, 0.0);
        const std::size_t e = rng.uniform_index(kNb201Edges);
        a.nb201.edge_ops[e] = kZeroise;
        Architecture b = a;
        b.nb201.edge_ops[e] = kConv3x3;
        REQUIRE(count_params(b) > count_params(a));
        REQUIRE(count_macs(b, 32) > count_macs(a, 32));
    }
}

TEST_CASE("width 1.2 dominates width 1.0 on the same mbv3 architecture") {
    Rng rng(88);
    for (int trial = 0; trial < 100; ++trial) {
        Architecture a = sample_mbv3(rng);
        a.mbv3.width_mult = 1.0;
        Architecture b = a;
        b.mbv3.width_mult = 1.2;
        REQUIRE(count_params(b) > count_params(a));
        REQUIRE(count_macs(b, 224) > count_macs(a, 224));
    }
}

TEST_CASE("make_divisible follows the reference rounding") {
    REQUIRE(make_divisible(16) == 16);
    REQUIRE(make_divisible(18) == 24);  // nearest-8 gives 16, <90% of 18, bump
    REQUIRE(make_divisible(30) == 32);
    REQUIRE(make_divisible(100) == 104);
    REQUIRE(make_divisible(4) == 8);
}

TEST_CASE("active depth tracks compute edges and block counts") {
    REQUIRE(active_depth(uniform_cell(kZeroise)) == 4);       // no path
    REQUIRE(active_depth(uniform_cell(kSkip)) == 4);          // path, zero compute
    REQUIRE(active_depth(uniform_cell(kConv3x3)) == 4 + 45);  // 3-deep path per cell

    // handcrafted mixed cell: deepest compute path is 0->2->3 (conv1, avgpool)
    Architecture m;
    m.space = Space::NB201;
    m.nb201.edge_ops = {kSkip, kConv1x1, kZeroise, kZeroise, kConv3x3, kAvgPool3x3};
    REQUIRE(nb201_cell_depth(m.nb201) == 2);

    Rng rng(3);
    Architecture net = sample_mbv3(rng);
    int want = 4;
    for (int d : net.mbv3.depth) want += d;
    REQUIRE(active_depth(net) == want);
}

TEST_CASE("latency protocol defaults and determinism") {
    const LatencyProtocol proto;
    REQUIRE(proto.repetitions == 100);
    REQUIRE(proto.ci_level == 0.90);

    const Architecture a = nb201_from_index(321);
    REQUIRE(measure_latency(a, proto) == measure_latency(a, proto));
    LatencyProtocol other = proto;
    other.noise_seed = 1;
    REQUIRE(measure_latency(a, proto) != measure_latency(a, other));

    LatencyProtocol bad = proto;
    bad.repetitions = 1;
    REQUIRE_THROWS_AS(measure_latency(a, bad), std::invalid_argument);
    bad = proto;
    bad.ci_level = 1.0;
    REQUIRE_THROWS_AS(measure_latency(a, bad), std::invalid_argument);
}

TEST_CASE("zero noise returns the exact base value") {
    const Architecture a = nb201_from_index(10101);
    LatencyModel lm;
    lm.noise_sigma = 0.0;
    REQUIRE(measure_latency(a, LatencyProtocol{}, lm) == latency_base_ms(a, lm));
}

TEST_CASE("trimming discards an injected outlier") {
    Rng rng(9);
    const double base = 10.0;
    std::vector<double> samples;
    for (int i = 0; i < 99; ++i) samples.push_back(base * std::exp(0.01 * rng.normal()));
    samples.push_back(10.0 * base);  // one 10x outlier

    double untrimmed = 0.0;
    for (double x : samples) untrimmed += x;
    untrimmed /= static_cast<double>(samples.size());

    const double trimmed = trimmed_mean(samples, 0.90);
    REQUIRE(std::abs(trimmed - base) < std::abs(untrimmed - base));
    REQUIRE(std::abs(trimmed - base) < 0.05);

    // identical samples all survive the zero-width interval
    REQUIRE(trimmed_mean({5.0, 5.0, 5.0}, 0.90) == 5.0);
}

TEST_CASE("metric normalization endpoints and median") {
    std::vector<double> pop;
    for (int i = 0; i < 101; ++i) pop.push_back(std::pow(1.1, i));
    REQUIRE(normalize_metric(pop.front(), pop) == 0.0);
    REQUIRE(normalize_metric(pop.back(), pop) == 1.0);
    REQUIRE(normalize_metric(pop[50], pop) == Catch::Approx(0.5));
    REQUIRE_THROWS_AS(normalize_metric(1.0, {}), std::invalid_argument);
}

TEST_CASE("display units divide raw counts by 1e6 exactly") {
    const Architecture a = nb201_from_index(5555);
    const CostReport r = cost_report(a, LatencyProtocol{});
    REQUIRE(r.params_m() == r.params / 1e6);
    REQUIRE(r.macs_m() == r.macs / 1e6);
    REQUIRE(r.params > 0.0);
    REQUIRE(r.macs > 0.0);
    REQUIRE(r.latency_ms > 0.0);
}
