#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "megu/guidance.hpp"
#include "megu/stats.hpp"
#include "megu/unlearn.hpp"
#include "scripted_oracle.hpp"

using namespace megu;
using megu::testing::ScriptedOracle;

namespace {

SyntheticData default_bundle(std::uint64_t seed = 101) {
    SyntheticSpec spec;
    spec.overlap_plan = SyntheticSpec::default_plan_k8();
    return gen_synthetic(spec, seed);
}

TransitionMatrix matrix_from_columns(const std::vector<std::vector<double>>& columns) {
    const std::size_t k = columns.size();
    TransitionMatrix tm;
    tm.t = Tensor({k, k});
    tm.exemplars_per_class = 1;
    tm.oracle_kind = "scripted";
    for (std::size_t col = 0; col < k; ++col)
        for (std::size_t row = 0; row < k; ++row) tm.t.at(row, col) = columns[col][row];
    tm.validate();
    return tm;
}

// Exhaustive reference for rank selection: sort all non-k indices by value
// (descending, index ascending) and take the rank-th.
int brute_force_rank_pick(const std::vector<double>& r, double tau, int k) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(r.size()); ++i)
        if (i != k) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (r[a] != r[b]) return r[a] > r[b];
        return a < b;
    });
    const auto rank = static_cast<std::size_t>(std::floor(r.size() * tau));
    return idx.at(rank - 1);
}

} // namespace

TEST_SUITE_BEGIN("guidance");

TEST_CASE("estimate_concept_similarity: mean of constant and of a table") {
    const SyntheticData data = default_bundle();
    const auto exemplars = select_exemplars(data.train, 3, 1);

    const ScriptedOracle half = ScriptedOracle::constant(0.5);
    CHECK(estimate_concept_similarity(half, data.train, exemplars[0], 0, 4) == 0.5);

    std::map<std::pair<std::int64_t, int>, double> table;
    table[{static_cast<std::int64_t>(exemplars[2][0]), 5}] = 0.2;
    table[{static_cast<std::int64_t>(exemplars[2][1]), 5}] = 0.4;
    table[{static_cast<std::int64_t>(exemplars[2][2]), 5}] = 0.6;
    const ScriptedOracle scripted = ScriptedOracle::from_table(std::move(table));
    CHECK(estimate_concept_similarity(scripted, data.train, exemplars[2], 2, 5) ==
          doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("estimate_concept_similarity: matches a replay of the call log") {
    const SyntheticData data = default_bundle();
    const auto exemplars = select_exemplars(data.train, 10, 7);
    const PrototypeOracle proto = PrototypeOracle::from_class_means(data.train);
    const ScriptedOracle recording(
        [&](std::int64_t id, int concept_index) {
            return proto.query(Tensor({data.train.dim()},
                                      std::vector<double>(
                                          data.train.inputs.row(static_cast<std::size_t>(id)).begin(),
                                          data.train.inputs.row(static_cast<std::size_t>(id)).end())),
                               id, concept_index);
        },
        "prototype");
    const double estimate =
        estimate_concept_similarity(recording, data.train, exemplars[3], 3, 6);
    double replayed = 0.0;
    for (const auto& call : recording.call_log()) replayed += call.returned;
    replayed /= static_cast<double>(recording.call_log().size());
    CHECK(estimate == doctest::Approx(replayed).epsilon(1e-15));
    CHECK(recording.call_log().size() == 10);
}

TEST_CASE("estimate_concept_similarity: wrong-label exemplar rejected") {
    const SyntheticData data = default_bundle();
    const auto exemplars = select_exemplars(data.train, 2, 1);
    CHECK_THROWS_AS((void)estimate_concept_similarity(
                        ScriptedOracle::constant(0.5), data.train, exemplars[0], 1, 0),
                    DomainError);
}

TEST_CASE("build_transition_matrix: constant oracle gives uniform columns") {
    const SyntheticData data = default_bundle();
    const ScriptedOracle oracle = ScriptedOracle::constant(0.37);
    const TransitionMatrix tm = build_transition_matrix(oracle, data.train, 4, 3);
    for (std::size_t col = 0; col < 8; ++col)
        for (std::size_t row = 0; row < 8; ++row)
            CHECK(tm.t.at(row, col) == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("build_transition_matrix: unit-sum column passes through unchanged") {
    // K=3 dataset, oracle scores already summing to 1 per class.
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.dim = 8;
    spec.per_class = 4;
    spec.per_class_test = 2;
    spec.unique_patterns = 1;
    spec.overlap_plan = {};
    const SyntheticData data = gen_synthetic(spec, 9);
    const std::vector<double> scores = {0.5, 0.3, 0.2};
    const ScriptedOracle oracle(
        [&](std::int64_t, int concept_index) { return scores[concept_index]; });
    const TransitionMatrix tm = build_transition_matrix(oracle, data.train, 2, 3);
    for (std::size_t col = 0; col < 3; ++col)
        for (std::size_t row = 0; row < 3; ++row)
            CHECK(tm.t.at(row, col) == doctest::Approx(scores[row]).epsilon(1e-12));
}

TEST_CASE("build_transition_matrix: zero similarity mass cannot normalize") {
    const SyntheticData data = default_bundle();
    const ScriptedOracle oracle = ScriptedOracle::constant(0.0);
    CHECK_THROWS_AS((void)build_transition_matrix(oracle, data.train, 2, 3), DomainError);
}

TEST_CASE("build_transition_matrix: class with too few samples rejected") {
    const SyntheticData data = default_bundle();
    const ScriptedOracle oracle = ScriptedOracle::constant(0.5);
    CHECK_THROWS_AS((void)build_transition_matrix(oracle, data.train, 1000, 3),
                    ConfigError);
}

TEST_CASE("build_transition_matrix: columns sum to one over random oracle tables") {
    const SyntheticData data = default_bundle();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const ScriptedOracle oracle([&rng](std::int64_t id, int concept_index) {
            return 0.05 + 0.9 * Rng(mix_seed(static_cast<std::uint64_t>(id) * 131 +
                                                 static_cast<std::uint64_t>(concept_index),
                                             rng.next_u64() & 0xff))
                              .uniform();
        });
        const TransitionMatrix tm = build_transition_matrix(oracle, data.train, 3, seed);
        for (std::size_t col = 0; col < 8; ++col) {
            double sum = 0.0;
            for (std::size_t row = 0; row < 8; ++row) sum += tm.t.at(row, col);
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("build_transition_matrix: prototype oracle recovers overlap ranks") {
    const SyntheticData data = default_bundle();
    const PrototypeOracle oracle = PrototypeOracle::from_class_means(data.train);
    const TransitionMatrix tm = build_transition_matrix(oracle, data.train, 10, 5);
    const Tensor& truth = *data.train.overlap_truth;
    for (std::size_t row_class = 0; row_class < 8; ++row_class) {
        // Class k's similarity profile is column k of the matrix.
        std::vector<double> estimated(8), expected(8);
        for (std::size_t l = 0; l < 8; ++l) {
            estimated[l] = tm.t.at(l, row_class);
            expected[l] = truth.at(row_class, l);
        }
        CHECK(spearman(estimated, expected) >= 0.8);
    }
}

TEST_CASE("relevance_vector: identity transition just masks") {
    const TransitionMatrix tm = matrix_from_columns({{1, 0, 0, 0},
                                                     {0, 1, 0, 0},
                                                     {0, 0, 1, 0},
                                                     {0, 0, 0, 1}});
    const std::vector<double> probs = {0.1, 0.2, 0.6, 0.1};
    const std::vector<double> r = relevance_vector(tm, probs, 2);
    CHECK(r[0] == doctest::Approx(0.1));
    CHECK(r[1] == doctest::Approx(0.2));
    CHECK(r[2] == doctest::Approx(0.0));
    CHECK(r[3] == doctest::Approx(0.1));
}

TEST_CASE("relevance_vector: uniform transition spreads the masked mass") {
    const std::vector<double> uniform(4, 0.25);
    const TransitionMatrix tm =
        matrix_from_columns({uniform, uniform, uniform, uniform});
    const std::vector<double> probs = {0.3, 0.3, 0.2, 0.2};
    const std::vector<double> r = relevance_vector(tm, probs, 1);
    const double mass = 0.3 + 0.2 + 0.2;
    for (double v : r) CHECK(v == doctest::Approx(mass / 4.0).epsilon(1e-12));
}

TEST_CASE("relevance_vector: explicit 4x4 product against a hand-rolled matvec") {
    const std::vector<std::vector<double>> columns = {{.4, .3, .2, .1},
                                                      {.1, .4, .3, .2},
                                                      {.2, .1, .4, .3},
                                                      {.3, .2, .1, .4}};
    const TransitionMatrix tm = matrix_from_columns(columns);
    const std::vector<double> probs = {0.7, 0.1, 0.1, 0.1};
    const std::vector<double> r = relevance_vector(tm, probs, 0);

    std::vector<double> masked = probs;
    masked[0] = 0.0;
    for (std::size_t row = 0; row < 4; ++row) {
        double expect = 0.0;
        for (std::size_t col = 0; col < 4; ++col) expect += columns[col][row] * masked[col];
        CHECK(r[row] == doctest::Approx(expect).epsilon(1e-14));
    }
    // Hand-computed: each row of T sums the three masked 0.1 entries.
    CHECK(r[0] == doctest::Approx(0.06));
    CHECK(r[1] == doctest::Approx(0.07));
    CHECK(r[2] == doctest::Approx(0.08));
    CHECK(r[3] == doctest::Approx(0.09));
}

TEST_CASE("relevance_vector: independent of the masked component's mass") {
    const std::vector<std::vector<double>> columns = {{.4, .3, .2, .1},
                                                      {.1, .4, .3, .2},
                                                      {.2, .1, .4, .3},
                                                      {.3, .2, .1, .4}};
    const TransitionMatrix tm = matrix_from_columns(columns);
    // Identical non-k entries; the k entry differs within the unit-sum
    // tolerance. The masked vectors coincide, so R must be bit-identical.
    const std::vector<double> pa = {0.7, 0.1, 0.1, 0.1};
    const std::vector<double> pb = {0.7 + 9e-7, 0.1, 0.1, 0.1};
    CHECK(relevance_vector(tm, pa, 0) == relevance_vector(tm, pb, 0));
    CHECK(relevance_vector(tm, pa, 0) != relevance_vector(tm, pa, 1));
}

TEST_CASE("assign_perturbing_label: worked K=10 example") {
    const std::vector<double> r = {.05, .20, .15, .10, .08, .12, .06, .09, .07, .08};
    CHECK(assign_perturbing_label(r, 0.3, 0) == 5);
    CHECK(assign_perturbing_label(r, 0.3, 0) == brute_force_rank_pick(r, 0.3, 0));
}

TEST_CASE("assign_perturbing_label: tau=0.1 selects the argmax of the candidates") {
    const std::vector<double> r = {.05, .20, .15, .10, .08, .12, .06, .09, .07, .08};
    CHECK(assign_perturbing_label(r, 0.1, 0) == 1);
    CHECK(assign_perturbing_label(r, 0.1, 1) == 2);
}

TEST_CASE("assign_perturbing_label: all-equal entries tie-break to index 3") {
    const std::vector<double> r(10, 0.1);
    CHECK(assign_perturbing_label(r, 0.3, 0) == 3);
}

TEST_CASE("assign_perturbing_label: agrees with brute force on random triples") {
    Rng rng(71);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t k = 3 + rng.uniform_int(12);
        std::vector<double> r(k);
        // Coarse quantization forces plenty of ties.
        for (double& v : r) v = static_cast<double>(rng.uniform_int(6)) / 5.0;
        const int original = static_cast<int>(rng.uniform_int(k));
        const double tau =
            (1.0 + static_cast<double>(rng.uniform_int(k - 1))) / static_cast<double>(k);
        const int got = assign_perturbing_label(r, tau, original);
        CHECK(got == brute_force_rank_pick(r, tau, original));
        CHECK(got != original);
    }
}

TEST_CASE("assign_perturbing_label: scale invariance of the selection") {
    Rng rng(73);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> r(8);
        for (double& v : r) v = rng.uniform();
        const int original = static_cast<int>(rng.uniform_int(8));
        const int base = assign_perturbing_label(r, 0.3, original);
        for (double scale : {0.001, 3.7, 1e6}) {
            std::vector<double> scaled = r;
            for (double& v : scaled) v *= scale;
            CHECK(assign_perturbing_label(scaled, 0.3, original) == base);
        }
    }
}

TEST_CASE("assign_perturbing_label: rank bounds validated") {
    const std::vector<double> r(8, 0.1);
    CHECK_THROWS_AS((void)assign_perturbing_label(r, 0.05, 0), ConfigError); // rank 0
    CHECK(assign_perturbing_label(r, 0.95, 0) == 7);  // rank 7 = K-1 allowed
    CHECK(assign_perturbing_label(r, 0.99, 0) == 7);  // still rank 7
    CHECK_THROWS_AS((void)perturb_rank(8, 1.0), ConfigError);
    CHECK_THROWS_AS((void)perturb_rank(8, 0.0), ConfigError);
}

TEST_CASE("assign_all: map size, determinism, and label balance") {
    const SyntheticData data = default_bundle();
    std::vector<std::size_t> all(data.train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    TrainConfig tcfg;
    tcfg.epochs = 12;
    tcfg.learning_rate = 3e-3;
    tcfg.seed = 2;
    const Mlp model = train_classifier(data.train, all, {32, 32}, tcfg);
    const PrototypeOracle oracle = PrototypeOracle::from_class_means(data.train);
    const TransitionMatrix tm = build_transition_matrix(oracle, data.train, 10, 5);

    TaskSpec task;
    task.kind = TaskKind::ClassWise;
    task.target = 2;
    const SplitResult split = split_task(data.train, task);

    SUBCASE("single sample gives a map of one") {
        const std::vector<std::size_t> one = {split.forget_set[0]};
        const PerturbMap map = assign_all(model, tm, data.train, one, 0.3);
        CHECK(map.entries.size() == 1);
        CHECK(map.entries[0].perturb_label != map.entries[0].label);
    }

    SUBCASE("identical inputs get identical assignments") {
        const PerturbMap a = assign_all(model, tm, data.train, split.forget_set, 0.3);
        const PerturbMap b = assign_all(model, tm, data.train, split.forget_set, 0.3);
        REQUIRE(a.entries.size() == b.entries.size());
        for (std::size_t i = 0; i < a.entries.size(); ++i)
            CHECK(a.entries[i].perturb_label == b.entries[i].perturb_label);
    }

    SUBCASE("class-wise assignment covers more than one perturbing label") {
        const PerturbMap map = assign_all(model, tm, data.train, split.forget_set, 0.3);
        CHECK(map.entries.size() == split.forget_set.size());
        std::size_t distinct = 0;
        for (std::size_t count : map.label_histogram) distinct += count > 0 ? 1 : 0;
        CHECK(distinct > 1);
        CHECK(map.label_histogram[2] == 0); // never the original class
    }
}

TEST_CASE("randomize_labels: never self, seeded, histogram consistent") {
    PerturbMap map;
    map.tau = 0.3;
    map.label_histogram.assign(8, 0);
    for (std::size_t i = 0; i < 64; ++i) {
        PerturbEntry e;
        e.sample_index = i;
        e.label = static_cast<int>(i % 8);
        e.perturb_label = static_cast<int>((i + 1) % 8);
        map.entries.push_back(e);
        ++map.label_histogram[static_cast<std::size_t>(e.perturb_label)];
    }
    const PerturbMap a = randomize_labels(map, 8, 9);
    const PerturbMap b = randomize_labels(map, 8, 9);
    const PerturbMap c = randomize_labels(map, 8, 10);
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].perturb_label != a.entries[i].label);
        CHECK(a.entries[i].perturb_label == b.entries[i].perturb_label);
        same += a.entries[i].perturb_label == c.entries[i].perturb_label ? 1 : 0;
    }
    CHECK(same < a.entries.size());
    std::size_t total = std::accumulate(a.label_histogram.begin(), a.label_histogram.end(),
                                        std::size_t{0});
    CHECK(total == a.entries.size());
}

TEST_CASE("transition matrix JSON: round trip preserves full precision") {
    const SyntheticData data = default_bundle();
    const PrototypeOracle oracle = PrototypeOracle::from_class_means(data.train);
    const TransitionMatrix tm = build_transition_matrix(oracle, data.train, 5, 5);
    const std::string text = transition_matrix_to_json(tm);
    const TransitionMatrix back = transition_matrix_from_json(text);
    CHECK(back.t == tm.t);
    CHECK(back.exemplars_per_class == tm.exemplars_per_class);
    CHECK(back.oracle_kind == tm.oracle_kind);
    CHECK(transition_matrix_to_json(back) == text);
}

TEST_CASE("perturb map JSON: round trip") {
    const SyntheticData data = default_bundle();
    std::vector<std::size_t> all(data.train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    TrainConfig tcfg;
    tcfg.epochs = 4;
    tcfg.learning_rate = 3e-3;
    tcfg.seed = 3;
    const Mlp model = train_classifier(data.train, all, {16}, tcfg);
    const ScriptedOracle oracle = ScriptedOracle::constant(0.4);
    const TransitionMatrix tm = build_transition_matrix(oracle, data.train, 3, 4);
    TaskSpec task;
    task.kind = TaskKind::ClassWise;
    task.target = 1;
    const SplitResult split = split_task(data.train, task);
    const PerturbMap map = assign_all(model, tm, data.train, split.forget_set, 0.3);
    const std::string text = perturb_map_to_json(map);
    const PerturbMap back = perturb_map_from_json(text);
    CHECK(back.entries.size() == map.entries.size());
    CHECK(back.label_histogram == map.label_histogram);
    CHECK(perturb_map_to_json(back) == text);
}

TEST_SUITE_END();
