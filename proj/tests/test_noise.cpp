#include <doctest.h>

#include <filesystem>

#include "megu/noise.hpp"
#include "megu/stats.hpp"
#include "megu/unlearn.hpp"

using namespace megu;

namespace {

struct Fixture {
    SyntheticData data;
    Mlp model;
};

Fixture trained_fixture(std::uint64_t seed = 201) {
    SyntheticSpec spec;
    spec.overlap_plan = SyntheticSpec::default_plan_k8();
    SyntheticData data = gen_synthetic(spec, seed);
    std::vector<std::size_t> all(data.train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 3e-3;
    cfg.seed = seed;
    Mlp model = train_classifier(data.train, all, {64, 64}, cfg);
    return {std::move(data), std::move(model)};
}

double mean_of(const std::vector<double>& xs) { return mean(xs); }

NoiseConfig quick_noise(std::uint64_t seed) {
    NoiseConfig cfg;
    cfg.steps = 60;
    cfg.batch = 8;
    cfg.seed = seed;
    return cfg;
}

PerturbMap tiny_map(std::initializer_list<std::pair<int, int>> keys) {
    PerturbMap map;
    map.tau = 0.3;
    map.label_histogram.assign(8, 0);
    std::size_t index = 0;
    for (const auto& [label, perturb] : keys) {
        PerturbEntry e;
        e.sample_index = index++;
        e.label = label;
        e.perturb_label = perturb;
        map.entries.push_back(e);
        ++map.label_histogram[static_cast<std::size_t>(perturb)];
    }
    return map;
}

} // namespace

TEST_SUITE_BEGIN("noise");

TEST_CASE("train_noise: toward lowers and away raises the target cross-entropy") {
    const Fixture fx = trained_fixture();
    NoiseConfig cfg = quick_noise(11);
    cfg.lambda_reg = 0.0;

    Rng rng(mix_seed(cfg.seed, 0x401c3));
    const Tensor init = Tensor::randn({cfg.batch, fx.model.input_dim()}, rng);

    const Tensor toward = train_noise(fx.model, 3, NoiseDirection::Toward, cfg);
    const double ce_init =
        mean_of(noise_objective(fx.model, init, 3, NoiseDirection::Toward, 0.0));
    const double ce_toward =
        mean_of(noise_objective(fx.model, toward, 3, NoiseDirection::Toward, 0.0));
    CHECK(ce_toward < ce_init);

    const Tensor away = train_noise(fx.model, 3, NoiseDirection::Away, cfg);
    // The away objective is -CE; CE itself must have gone up.
    const double ce_away =
        mean_of(noise_objective(fx.model, away, 3, NoiseDirection::Toward, 0.0));
    CHECK(ce_away > ce_init);
}

TEST_CASE("train_noise: default config drives the argmax onto the target") {
    const Fixture fx = trained_fixture();
    NoiseConfig cfg; // defaults: 200 steps, lr 0.1, lambda 0.1, batch 32
    cfg.seed = 21;
    const Tensor noise = train_noise(fx.model, 5, NoiseDirection::Toward, cfg);
    const std::vector<int> preds = argmax_rows(fx.model.forward(noise));
    std::size_t hits = 0;
    for (int p : preds) hits += p == 5 ? 1 : 0;
    CHECK(static_cast<double>(hits) >= 0.9 * static_cast<double>(cfg.batch));
}

TEST_CASE("train_noise: model parameters identical before and after") {
    const Fixture fx = trained_fixture();
    const auto before = model_hash(fx.model);
    (void)train_noise(fx.model, 2, NoiseDirection::Away, quick_noise(31));
    CHECK(model_hash(fx.model) == before);
}

TEST_CASE("train_noise: final objective strictly below the initial one") {
    const Fixture fx = trained_fixture();
    for (const NoiseDirection dir : {NoiseDirection::Toward, NoiseDirection::Away}) {
        NoiseConfig cfg = quick_noise(41);
        Rng rng(mix_seed(cfg.seed, 0x401c3));
        const Tensor init = Tensor::randn({cfg.batch, fx.model.input_dim()}, rng);
        const Tensor out = train_noise(fx.model, 1, dir, cfg);
        const double before =
            mean_of(noise_objective(fx.model, init, 1, dir, cfg.lambda_reg));
        const double after = mean_of(noise_objective(fx.model, out, 1, dir, cfg.lambda_reg));
        CHECK(after < before);
    }
}

TEST_CASE("train_noise: one away step negates one toward step at lambda zero") {
    const Fixture fx = trained_fixture();
    NoiseConfig cfg = quick_noise(51);
    cfg.steps = 1;
    cfg.lambda_reg = 0.0;
    const Tensor toward = train_noise(fx.model, 4, NoiseDirection::Toward, cfg);
    const Tensor away = train_noise(fx.model, 4, NoiseDirection::Away, cfg);
    Rng rng(mix_seed(cfg.seed, 0x401c3));
    const Tensor init = Tensor::randn({cfg.batch, fx.model.input_dim()}, rng);
    for (std::size_t i = 0; i < init.size(); ++i) {
        const double step_toward = toward[i] - init[i];
        const double step_away = away[i] - init[i];
        CHECK(step_toward == doctest::Approx(-step_away).epsilon(1e-12));
    }
}

TEST_CASE("train_noise: config validation") {
    const Fixture fx = trained_fixture();
    NoiseConfig cfg = quick_noise(1);
    cfg.steps = 0;
    CHECK_THROWS_AS((void)train_noise(fx.model, 0, NoiseDirection::Toward, cfg), ConfigError);
    cfg = quick_noise(1);
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS((void)train_noise(fx.model, 0, NoiseDirection::Toward, cfg), ConfigError);
    CHECK_THROWS_AS((void)train_noise(fx.model, 99, NoiseDirection::Toward, quick_noise(1)),
                    DomainError);
}

TEST_CASE("combine: endpoints exact, scalar case") {
    const Tensor pos({2, 2}, {1.0, 1.0, 1.0, 1.0});
    const Tensor neg({2, 2}, {0.0, 0.0, 0.0, 0.0});
    CHECK(combine(pos, neg, 1.0) == pos);
    CHECK(combine(pos, neg, 0.0) == neg);
    const Tensor blend = combine(pos, neg, 0.7);
    for (double v : blend.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
    CHECK_THROWS_AS((void)combine(pos, neg, 1.2), ConfigError);
    CHECK_THROWS_AS((void)combine(pos, neg, -0.1), ConfigError);
}

TEST_CASE("forge_pairs: one pair per distinct key") {
    const Fixture fx = trained_fixture();
    const NoiseConfig cfg = quick_noise(61);

    SUBCASE("single key") {
        const NoiseSet set = forge_pairs(fx.model, tiny_map({{2, 5}}), cfg);
        CHECK(set.pairs.size() == 1);
        CHECK(set.find({2, 5}) != nullptr);
        CHECK(set.find({5, 2}) == nullptr);
    }

    SUBCASE("hundred samples sharing one key dedup to one pair") {
        PerturbMap map;
        map.tau = 0.3;
        map.label_histogram.assign(8, 0);
        for (std::size_t i = 0; i < 100; ++i) {
            PerturbEntry e;
            e.sample_index = i;
            e.label = 2;
            e.perturb_label = 5;
            map.entries.push_back(e);
        }
        map.label_histogram[5] = 100;
        const NoiseSet set = forge_pairs(fx.model, map, cfg);
        CHECK(set.pairs.size() == 1);
    }

    SUBCASE("three distinct keys give three audited pairs") {
        const NoiseSet set = forge_pairs(fx.model, tiny_map({{2, 5}, {2, 1}, {7, 0}}), cfg);
        CHECK(set.pairs.size() == 3);
        for (const NoisePair& pair : set.pairs) {
            // pos trained toward the perturbing label, neg away from the
            // original: audit both loss directions against fresh noise.
            Rng rng(999);
            const Tensor fresh = Tensor::randn({cfg.batch, fx.model.input_dim()}, rng);
            const double pos_ce = mean_of(noise_objective(
                fx.model, pair.pos, pair.key.perturb_label, NoiseDirection::Toward, 0.0));
            const double fresh_pos_ce = mean_of(noise_objective(
                fx.model, fresh, pair.key.perturb_label, NoiseDirection::Toward, 0.0));
            CHECK(pos_ce < fresh_pos_ce);
            const double neg_ce = mean_of(noise_objective(
                fx.model, pair.neg, pair.key.label, NoiseDirection::Toward, 0.0));
            const double fresh_neg_ce = mean_of(noise_objective(
                fx.model, fresh, pair.key.label, NoiseDirection::Toward, 0.0));
            CHECK(neg_ce > fresh_neg_ce);
        }
    }
}

TEST_CASE("cache: bit-exact round trip through disk") {
    const Fixture fx = trained_fixture();
    const NoiseSet set = forge_pairs(fx.model, tiny_map({{2, 5}, {3, 6}}), quick_noise(71));
    const std::filesystem::path path = "test_noise_cache.bin";
    cache_store(set, path);
    const LoadedNoise back = cache_load(path, model_hash(fx.model));
    CHECK_FALSE(back.provenance_override);
    CHECK(back.set.pairs.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.set.pairs[i].pos == set.pairs[i].pos);
        CHECK(back.set.pairs[i].neg == set.pairs[i].neg);
    }
    CHECK(serialize_noise_set(back.set) == serialize_noise_set(set));
    std::filesystem::remove(path);
}

TEST_CASE("cache: provenance guard and override") {
    const Fixture fx = trained_fixture();
    const NoiseSet set = forge_pairs(fx.model, tiny_map({{1, 4}}), quick_noise(81));
    const std::filesystem::path path = "test_noise_guard.bin";
    cache_store(set, path);

    const Mlp other({fx.model.input_dim(), 8, fx.model.num_classes()}, 999);
    CHECK_THROWS_AS((void)cache_load(path, model_hash(other)), CacheError);
    const LoadedNoise forced = cache_load(path, model_hash(other), true);
    CHECK(forced.provenance_override);
    std::filesystem::remove(path);
}

TEST_CASE("cache: corrupt payload rejected") {
    const Fixture fx = trained_fixture();
    const NoiseSet set = forge_pairs(fx.model, tiny_map({{1, 4}}), quick_noise(91));
    auto bytes = serialize_noise_set(set);
    bytes.resize(bytes.size() - 16);
    CHECK_THROWS_AS((void)deserialize_noise_set(bytes), CacheError);
}

TEST_SUITE_END();
