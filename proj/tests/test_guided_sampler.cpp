#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "mogen/guided_sampler.hpp"

using namespace mogen;

TEST_CASE("guidance scales validate and report activity") {
    GuidanceScales s;
    CHECK_FALSE(s.any());
    CHECK_NOTHROW(s.check());
    s.k_macs = 2.0;
    CHECK(s.any());
    s.k_acc = -1.0;
    CHECK_THROWS_AS(s.check(), std::invalid_argument);
}

TEST_CASE("regime names round-trip") {
    CHECK(regime_name(Regime::kEfficient) == "efficient");
    CHECK(regime_name(Regime::kAccurate) == "accurate");
    CHECK(regime_from_name("efficient") == Regime::kEfficient);
    CHECK(regime_from_name("accurate") == Regime::kAccurate);
    CHECK_THROWS_AS(regime_from_name("balanced"), std::invalid_argument);
}

TEST_CASE("published presets carry the expected scales") {
    const PhasePreset ne = efficient_preset(Space::NB201);
    CHECK(ne.regime == Regime::kEfficient);
    CHECK(ne.scales.k_acc == 4732.0);
    CHECK(ne.scales.k_params == 482.0);
    CHECK(ne.scales.k_macs == 421.0);
    CHECK(ne.scales.k_lat == 368.0);
    const PhasePreset na = accurate_preset(Space::NB201);
    CHECK(na.scales.k_acc == 24943.0);
    CHECK(na.scales.k_params == 12.0);
    CHECK(na.scales.k_macs == 26.0);
    CHECK(na.scales.k_lat == 13.0);
    const PhasePreset me = efficient_preset(Space::MBV3);
    CHECK(me.scales.k_acc == 4987.0);
    CHECK(me.scales.k_params == 494.0);
    CHECK(me.scales.k_macs == 478.0);
    CHECK(me.scales.k_lat == 481.0);
    const PhasePreset ma = accurate_preset(Space::MBV3);
    CHECK(ma.scales.k_acc == 48321.0);
    CHECK(ma.scales.k_params == 21.0);
    CHECK(ma.scales.k_macs == 16.0);
    CHECK(ma.scales.k_lat == 39.0);
    const GuidanceScales base = baseline_scales();
    CHECK(base.k_acc == 10000.0);
    CHECK_FALSE((base.k_params > 0.0 || base.k_macs > 0.0 || base.k_lat > 0.0));
}

TEST_CASE("initial chains start at N(0, sigma_max^2) with the right shape") {
    SdeSchedule sde;
    const ScoreNet net(Space::NB201, sde, 3);
    const ChainStepper stepper(net, sde, nullptr, nullptr, {});
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::uint64_t c = 0; c < 300; ++c) {
        const ReverseChainState st = stepper.init_chain(Rng(77).fork(c), c);
        REQUIRE(st.x.values.rows() == 8);
        REQUIRE(st.x.values.cols() == 7);
        CHECK(st.t == sde.T);
        CHECK(st.stream_id == c);
        for (double v : st.x.values.data()) {
            sum += v;
            sq += v * v;
            ++n;
        }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    CHECK(std::abs(mean) < 0.2);
    CHECK(var == Catch::Approx(sde.sigma_max * sde.sigma_max).epsilon(0.05));
}

TEST_CASE("time decreases monotonically to zero across steps") {
    SdeSchedule sde;
    sde.steps = 10;
    const ScoreNet net(Space::NB201, sde, 5);
    ChainStepper stepper(net, sde, nullptr, nullptr, {});
    ReverseChainState st = stepper.init_chain(Rng(1), 0);
    double prev = st.t;
    int steps = 0;
    while (st.t > 0.0) {
        stepper.step(st);
        CHECK(st.t < prev);
        prev = st.t;
        ++steps;
    }
    CHECK(steps == 10);
    CHECK(st.t == 0.0);
    CHECK_THROWS_AS(stepper.step(st), std::invalid_argument);
}

TEST_CASE("zero guidance leaves trajectories bitwise identical to unguided") {
    SdeSchedule sde;
    sde.steps = 20;
    const ScoreNet net(Space::NB201, sde, 9);
    const PredictorSet preds(Space::NB201, sde, 9);
    const Tensor demb = encode_dataset(task_from_seed(1));

    ChainStepper unguided(net, sde, nullptr, nullptr, {});
    ChainStepper zero_scaled(net, sde, &preds, &demb, {});
    const ReverseChainState start = unguided.init_chain(Rng(31), 4);
    const ContinuousArch a = unguided.run_chain(start);
    const ContinuousArch b = zero_scaled.run_chain(start);
    CHECK(tensors_equal(a.values, b.values));

    // and through the single-step entry point
    const ReverseChainState sa = guided_reverse_step(start, net, nullptr, nullptr, {}, sde);
    const ReverseChainState sb = guided_reverse_step(start, net, &preds, &demb, {}, sde);
    CHECK(tensors_equal(sa.x.values, sb.x.values));
    CHECK(sa.t == sb.t);
}

TEST_CASE("doubling a guidance scale doubles its drift contribution") {
    SdeSchedule sde;
    const ScoreNet net(Space::NB201, sde, 2);
    const PredictorSet preds(Space::NB201, sde, 2);
    const Tensor demb = encode_dataset(task_from_seed(5));

    ChainStepper plain(net, sde, nullptr, nullptr, {});
    ReverseChainState start = plain.init_chain(Rng(8), 0);
    start.t = 0.7;

    const auto step_with = [&](double k_macs) {
        GuidanceScales s;
        s.k_macs = k_macs;
        return guided_reverse_step(start, net, &preds, &demb, s, sde).x.values;
    };
    const Tensor x0 = step_with(0.0);
    const Tensor x1 = step_with(0.25);
    const Tensor x2 = step_with(0.5);
    for (std::size_t i = 0; i < x0.numel(); ++i) {
        const double d1 = x1.data()[i] - x0.data()[i];
        const double d2 = x2.data()[i] - x0.data()[i];
        CHECK(d2 == Catch::Approx(2.0 * d1).margin(1e-12).epsilon(1e-6));
    }
}

TEST_CASE("mock quadratic guidance pulls chains toward its peak on every seed") {
    SdeSchedule sde;  // default 200 steps
    const ScoreNet net(Space::NB201, sde, 11);
    Rng arng(21);
    const Tensor target = ops_matrix(sample_nb201(arng, {}, 0.0));

    // f(x) = exp(-||x - x*||^2), so k grad log f = -2k (x - x*)
    const double k = 1.0;
    const GuidanceFn pull = [&](const Tensor& x, double) {
        std::vector<double> g(x.numel());
        for (std::size_t i = 0; i < x.numel(); ++i)
            g[i] = -2.0 * k * (x.data()[i] - target.data()[i]);
        return Tensor(x.shape(), std::move(g));
    };

    ChainStepper guided(net, sde, pull);
    ChainStepper unguided(net, sde, nullptr, nullptr, {});
    const auto dist = [&](const Tensor& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double d = x.data()[i] - target.data()[i];
            s += d * d;
        }
        return std::sqrt(s);
    };
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ReverseChainState start = guided.init_chain(Rng(500).fork(seed), seed);
        const double dg = dist(guided.run_chain(start).values);
        const double du = dist(unguided.run_chain(start).values);
        if (dg < du) ++wins;
    }
    CHECK(wins == 10);
}

TEST_CASE("chain stepper validates its inputs") {
    SdeSchedule sde;
    const ScoreNet net(Space::NB201, sde, 1);
    const PredictorSet wrong_space(Space::MBV3, sde, 1);
    const Tensor demb = encode_dataset(task_from_seed(2));
    GuidanceScales s;
    s.k_acc = 5.0;
    CHECK_THROWS_AS(ChainStepper(net, sde, nullptr, nullptr, s), std::invalid_argument);
    CHECK_THROWS_AS(ChainStepper(net, sde, &wrong_space, &demb, s), std::invalid_argument);

    ChainStepper stepper(net, sde, nullptr, nullptr, {});
    ReverseChainState st = stepper.init_chain(Rng(3), 0);
    st.x.space = Space::MBV3;
    CHECK_THROWS_AS(stepper.step(st), std::invalid_argument);
}

TEST_CASE("non-finite guidance aborts the chain with a stream diagnostic") {
    SdeSchedule sde;
    sde.steps = 5;
    const ScoreNet net(Space::NB201, sde, 4);
    const GuidanceFn poison = [](const Tensor& x, double) {
        return Tensor::full(x.shape(), std::numeric_limits<double>::infinity());
    };
    ChainStepper stepper(net, sde, poison, /*max_guidance_step=*/1e308);
    ReverseChainState st = stepper.init_chain(Rng(6), 42);
    try {
        stepper.step(st);
        FAIL("expected abort");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("stream 42") != std::string::npos);
        CHECK(msg.find("non-finite") != std::string::npos);
    }

    const GuidanceFn misshapen = [](const Tensor&, double) { return Tensor::zeros({1, 1}); };
    ChainStepper bad(net, sde, misshapen);
    ReverseChainState st2 = bad.init_chain(Rng(6), 0);
    try {
        bad.step(st2);
        FAIL("expected abort");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("wrong shape") != std::string::npos);
    }
}

TEST_CASE("generated batches are deterministic and order-independent") {
    SdeSchedule sde;
    sde.steps = 8;
    const ScoreNet net(Space::NB201, sde, 7);
    const Rng rng(123);
    const auto a = generate_batch(net, nullptr, nullptr, {}, 6, rng, &sde);
    const auto b = generate_batch(net, nullptr, nullptr, {}, 6, rng, &sde);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(tensors_equal(a[i].raw.values, b[i].raw.values));
        CHECK(a[i].stream_id == i);
        CHECK(a[i].phase == 0);
        CHECK(arch_hash(a[i].arch) == arch_hash(b[i].arch));
        CHECK(a[i].strict == strict_valid(a[i].raw));
        CHECK(validate(a[i].arch).empty());
    }
    // chain c depends only on its stream, not on the batch size
    const auto c = generate_batch(net, nullptr, nullptr, {}, 3, rng, &sde);
    for (std::size_t i = 0; i < c.size(); ++i)
        CHECK(tensors_equal(c[i].raw.values, a[i].raw.values));
    CHECK_THROWS_AS(generate_batch(net, nullptr, nullptr, {}, 0, rng, &sde),
                    std::invalid_argument);
}

TEST_CASE("stretched generation unions two tagged phases") {
    SdeSchedule sde;
    sde.steps = 6;
    const ScoreNet net(Space::NB201, sde, 12);
    const PredictorSet preds(Space::NB201, sde, 12);
    const Tensor demb = encode_dataset(task_from_seed(9));
    const auto batch = generate_stretched(net, preds, demb, efficient_preset(Space::NB201),
                                          accurate_preset(Space::NB201), Rng(55), 3, &sde);
    REQUIRE(batch.size() == 6);
    for (std::size_t i = 0; i < 3; ++i) CHECK(batch[i].phase == 1);
    for (std::size_t i = 3; i < 6; ++i) CHECK(batch[i].phase == 2);
    // deterministic under the same root stream
    const auto again = generate_stretched(net, preds, demb, efficient_preset(Space::NB201),
                                          accurate_preset(Space::NB201), Rng(55), 3, &sde);
    for (std::size_t i = 0; i < batch.size(); ++i)
        CHECK(tensors_equal(batch[i].raw.values, again[i].raw.values));
    CHECK_THROWS_AS(
        generate_stretched(net, preds, demb, efficient_preset(Space::NB201),
                           efficient_preset(Space::NB201), Rng(55), 3, &sde),
        std::invalid_argument);
}

// Long-running: trains the score net at full desk defaults. Hidden behind the
// [desk] tag and run as its own ctest entry.
TEST_CASE("desk-config training reaches the sampling quality floors", "[.][desk]") {
    Rng arng(42);
    std::vector<Architecture> archs;
    archs.reserve(1000);
    for (int i = 0; i < 1000; ++i) archs.push_back(sample_nb201(arng, {}, 0.0));
    std::set<std::string> training;
    for (const Architecture& a : archs) training.insert(arch_hash(a));

    SdeSchedule sde;
    ScoreTrainConfig cfg;  // desk defaults
    cfg.seed = 0;
    const ScoreNet net = train_score(archs, Space::NB201, sde, cfg);
    const auto batch = generate_batch(net, nullptr, nullptr, {}, 256, Rng(99));

    std::size_t strict = 0;
    std::set<std::string> distinct;
    for (const GeneratedSample& s : batch) {
        if (s.strict) ++strict;
        distinct.insert(arch_hash(s.arch));
        CHECK(validate(s.arch).empty());  // quantize is total
    }
    const double strict_rate = static_cast<double>(strict) / static_cast<double>(batch.size());
    INFO("strict rate " << strict_rate << ", distinct " << distinct.size());
    CHECK(strict_rate >= 0.90);
    CHECK(distinct.size() >= 50);
}

TEST_CASE("guidance with nonzero scales changes the trajectory") {
    SdeSchedule sde;
    sde.steps = 12;
    const ScoreNet net(Space::MBV3, sde, 14);
    const PredictorSet preds(Space::MBV3, sde, 14);
    const Tensor demb = encode_dataset(task_from_seed(4));
    ChainStepper unguided(net, sde, nullptr, nullptr, {});
    GuidanceScales s;
    s.k_acc = 5000.0;
    ChainStepper guided(net, sde, &preds, &demb, s);
    const ReverseChainState start = unguided.init_chain(Rng(91), 0);
    const ContinuousArch a = unguided.run_chain(start);
    const ContinuousArch b = guided.run_chain(start);
    CHECK_FALSE(tensors_equal(a.values, b.values));
}
