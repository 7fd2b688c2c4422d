#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "mogen/grad_check.hpp"
#include "mogen/predictors.hpp"

using namespace mogen;

namespace {

MetaDataset small_meta(std::size_t n, std::uint64_t build_seed) {
    MetaBuildParams p;
    p.space = Space::NB201;
    p.n = n;
    p.build_seed = build_seed;
    p.oracle_seed = 21;
    return build_meta_dataset(p);
}

} // namespace

TEST_CASE("dataset embedding is permutation invariant with the right width") {
    const TaskDescriptor task = task_from_seed(77);
    const Tensor d1 = encode_dataset(task);
    REQUIRE(d1.rows() == 1);
    REQUIRE(d1.cols() == 64);

    // reverse the prototype rows
    TaskDescriptor shuffled = task;
    const std::size_t R = task.prototypes.rows(), C = task.prototypes.cols();
    std::vector<double> rev(R * C);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) rev[r * C + c] = task.prototypes.at(R - 1 - r, c);
    shuffled.prototypes = Tensor({R, C}, std::move(rev));
    const Tensor d2 = encode_dataset(shuffled);
    for (std::size_t c = 0; c < d1.cols(); ++c)
        CHECK(d1.at(0, c) == Catch::Approx(d2.at(0, c)).margin(1e-12));
}

TEST_CASE("dataset embeddings are distinct across a 10,000-task scan") {
    std::set<std::vector<double>> seen;
    for (std::uint64_t seed = 1; seed <= 10000; ++seed) {
        const Tensor d = encode_dataset(task_from_seed(seed));
        seen.insert(d.data());
    }
    CHECK(seen.size() == 10000);
}

TEST_CASE("head names round-trip and unknown heads error") {
    for (PredHead h : kAllHeads) CHECK(head_from_name(head_name(h)) == h);
    CHECK_THROWS_AS(head_from_name("accuracy"), std::invalid_argument);
    CHECK_THROWS_AS(head_from_name(""), std::invalid_argument);
}

TEST_CASE("satisfaction targets invert cost ranks and pass accuracy through") {
    const std::vector<double> pop = {12.0, 3.0, 7.0, 30.0, 18.0};
    CHECK(satisfaction_target(PredHead::kMacs, 3.0, pop) == Catch::Approx(1.0));
    CHECK(satisfaction_target(PredHead::kLatency, 30.0, pop) == Catch::Approx(0.0));
    CHECK(satisfaction_target(PredHead::kAcc, 0.73, pop) == Catch::Approx(0.73));
    // antitone in the metric
    double prev = 2.0;
    for (double v : {3.0, 7.0, 12.0, 18.0, 30.0}) {
        const double s = satisfaction_target(PredHead::kParams, v, pop);
        CHECK(s < prev);
        prev = s;
    }
}

TEST_CASE("predictions live strictly inside (0,1) and are deterministic") {
    for (Space space : {Space::NB201, Space::MBV3}) {
        PredictorSet set(space, SdeSchedule{}, 5);
        Rng rng(9);
        const ContinuousArch x = space == Space::NB201 ? to_continuous(sample_nb201(rng, {}, 0.0))
                                                       : to_continuous(sample_mbv3(rng));
        const Tensor demb = encode_dataset(task_from_seed(3));
        for (PredHead h : kAllHeads) {
            const double v = set.predict(h, x, 0.4, demb);
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            CHECK(set.predict(h, x, 0.4, demb) == v);
        }
    }
}

TEST_CASE("noisy heads validate t while the denoised head ignores it") {
    PredictorSet set(Space::NB201, SdeSchedule{}, 5);
    Rng rng(10);
    const ContinuousArch x = to_continuous(sample_nb201(rng, {}, 0.0));
    const Tensor demb = encode_dataset(task_from_seed(8));
    CHECK_THROWS_AS(set.predict(PredHead::kAcc, x, -0.1, demb), std::invalid_argument);
    CHECK_THROWS_AS(set.predict(PredHead::kMacs, x, 1.2, demb), std::invalid_argument);
    CHECK(set.predict(PredHead::kAccDenoised, x, 0.9, demb) ==
          set.predict(PredHead::kAccDenoised, x, 0.1, demb));
    const Tensor bad = Tensor::zeros({1, 32});
    CHECK_THROWS_AS(set.predict(PredHead::kAcc, x, 0.5, bad), std::invalid_argument);
}

TEST_CASE("every head's input gradient matches finite differences") {
    Rng rng(31);
    SdeSchedule sde;
    const Architecture a = sample_nb201(rng, {}, 0.0);
    const Tensor x = perturb(a, 0.5, rng, sde).x_t;
    const Tensor demb = encode_dataset(task_from_seed(4));
    for (const bool shared : {true, false}) {
        PredictorSet set(Space::NB201, SdeSchedule{}, 13, shared);
        for (PredHead h : kAllHeads) {
            const GraphBuilder build = [&](Tape& tape, const std::vector<Var>& leaves) {
                const PredictorSet::HeadBinding b = set.bind_head(tape, h, false);
                return set.forward_tape(tape, b, h, leaves[0], 0.5, demb);
            };
            const GradCheckReport rep = check_gradients(build, {x});
            INFO((shared ? "shared " : "separate ") << head_name(h) << " max rel err "
                                                    << rep.max_rel_err);
            CHECK(rep.within(1e-4));
        }
    }
}

TEST_CASE("input-grad helper agrees with plain prediction") {
    PredictorSet set(Space::NB201, SdeSchedule{}, 13);
    Rng rng(77);
    const ContinuousArch x = to_continuous(sample_nb201(rng, {}, 0.0));
    const Tensor demb = encode_dataset(task_from_seed(4));
    const auto eval = set.predict_with_input_grad(PredHead::kLatency, x, 0.3, demb);
    CHECK(eval.value == set.predict(PredHead::kLatency, x, 0.3, demb));
    REQUIRE(eval.input_grad.same_shape(x.values));
    double mag = 0.0;
    for (double v : eval.input_grad.data()) mag += std::abs(v);
    CHECK(mag > 0.0);
}

TEST_CASE("denoised head is a fixed point across quantize round-trips") {
    PredictorSet set(Space::NB201, SdeSchedule{}, 19);
    Rng rng(3);
    const Architecture a = sample_nb201(rng, {}, 0.0);
    const ContinuousArch x = to_continuous(a);
    const Architecture back = quantize(x);
    CHECK(back == a);
    const Tensor demb = encode_dataset(task_from_seed(12));
    CHECK(set.predict(PredHead::kAccDenoised, x, 0.0, demb) ==
          set.predict(PredHead::kAccDenoised, to_continuous(back), 0.0, demb));
}

TEST_CASE("spearman matches the d-squared oracle and rejects degenerate input") {
    CHECK(spearman({1, 2, 3, 4}, {1, 2, 4, 3}) == Catch::Approx(0.8).margin(1e-12));
    CHECK(spearman({1, 2, 3}, {10, 20, 30}) == Catch::Approx(1.0));
    CHECK(spearman({1, 2, 3}, {5, 1, -2}) == Catch::Approx(-1.0));
    CHECK_THROWS_AS(spearman({1, 2, 3}, {1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(spearman({2, 2, 2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(spearman({1, 2, 3}, {7, 7, 7}), std::invalid_argument);
    CHECK_THROWS_AS(spearman({1}, {2}), std::invalid_argument);
}

TEST_CASE("predictor training is seed deterministic in both trunk modes") {
    const MetaDataset meta = small_meta(40, 6);
    PredictorTrainConfig cfg;
    cfg.steps = 4;
    cfg.batch = 4;
    cfg.seed = 11;
    for (const bool shared : {true, false}) {
        const PredictorSet a = train_predictors(meta, SdeSchedule{}, cfg, shared);
        const PredictorSet b = train_predictors(meta, SdeSchedule{}, cfg, shared);
        CHECK(a.shared_trunk() == shared);
        for (PredHead h : kAllHeads) {
            for (const auto& [name, t] : a.trunk_params_of(h))
                CHECK(tensors_equal(t, b.trunk_params_of(h).at(name)));
            for (const auto& [name, t] : a.out_params_of(h))
                CHECK(tensors_equal(t, b.out_params_of(h).at(name)));
        }
        CHECK(a.spearman_report() == b.spearman_report());
        REQUIRE(a.spearman_report().size() == 5);
    }
}

TEST_CASE("short predictor training attains positive held-out rank correlation") {
    const MetaDataset meta = small_meta(300, 8);
    PredictorTrainConfig cfg;
    cfg.steps = 150;
    cfg.batch = 16;
    cfg.seed = 1;
    const PredictorSet set = train_predictors(meta, SdeSchedule{}, cfg);
    const auto& rep = set.spearman_report();
    for (const auto& [head, rho] : rep) INFO(head << " spearman " << rho);
    CHECK(rep.at("acc_denoised") > 0.35);
    CHECK(rep.at("params") > 0.2);
}

TEST_CASE("predictor checkpoints round-trip weights and report") {
    const MetaDataset meta = small_meta(40, 9);
    PredictorTrainConfig cfg;
    cfg.steps = 3;
    cfg.batch = 4;
    cfg.seed = 2;
    const PredictorSet set = train_predictors(meta, SdeSchedule{}, cfg);
    const std::string prefix = "pred_ckpt_test_";
    set.save(prefix);
    const PredictorSet loaded = PredictorSet::load(prefix);
    Rng rng(5);
    const ContinuousArch x = to_continuous(sample_nb201(rng, {}, 0.0));
    const Tensor demb = encode_dataset(task_from_seed(2));
    for (PredHead h : kAllHeads) {
        CHECK(loaded.predict(h, x, 0.2, demb) == set.predict(h, x, 0.2, demb));
        std::remove((prefix + head_name(h) + ".bin").c_str());
    }
    CHECK(loaded.spearman_report() == set.spearman_report());
    const std::string json = spearman_report_json(set.spearman_report());
    CHECK(json.find("acc_denoised") != std::string::npos);
}

TEST_CASE("separate-trunk checkpoints restore the mode and the weights") {
    const PredictorSet set(Space::MBV3, SdeSchedule{}, 7, /*shared_trunk=*/false);
    const std::string prefix = "pred_ckpt_sep_";
    set.save(prefix);
    const PredictorSet loaded = PredictorSet::load(prefix);
    CHECK_FALSE(loaded.shared_trunk());
    Rng rng(6);
    const ContinuousArch x = to_continuous(sample_mbv3(rng));
    const Tensor demb = encode_dataset(task_from_seed(12));
    for (PredHead h : kAllHeads) {
        CHECK(loaded.predict(h, x, 0.3, demb) == set.predict(h, x, 0.3, demb));
        std::remove((prefix + head_name(h) + ".bin").c_str());
    }
}
