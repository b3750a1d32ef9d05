#include <doctest.h>

#include <algorithm>
#include <set>

#include "megu/dataset.hpp"
#include "megu/eval.hpp"
#include "megu/unlearn.hpp"

using namespace megu;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.dim = 16;
    spec.per_class = 30;
    spec.per_class_test = 10;
    spec.unique_patterns = 2;
    spec.overlap_plan = {{0, 1, 2}, {2, 3, 1}};
    spec.noise_std = 0.25;
    return spec;
}

} // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("gen_synthetic: zero sharing gives the identity overlap matrix") {
    SyntheticSpec spec = small_spec();
    spec.overlap_plan.clear();
    const SyntheticData data = gen_synthetic(spec, 3);
    const Tensor& o = *data.train.overlap_truth;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(o.at(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("gen_synthetic: full sharing gives off-diagonal 1") {
    SyntheticSpec spec = small_spec();
    spec.num_classes = 2;
    spec.unique_patterns = 0;
    spec.overlap_plan = {{0, 1, 4}};
    const SyntheticData data = gen_synthetic(spec, 5);
    CHECK(data.train.overlap_truth->at(0, 1) == 1.0);
    CHECK(data.train.overlap_truth->at(1, 0) == 1.0);
}

TEST_CASE("gen_synthetic: 3 shared of 6 patterns each gives overlap 0.5") {
    SyntheticSpec spec;
    spec.num_classes = 8;
    spec.dim = 32;
    spec.per_class = 5;
    spec.per_class_test = 2;
    spec.unique_patterns = 3;
    spec.overlap_plan = {{0, 1, 3}};
    const SyntheticData data = gen_synthetic(spec, 11);
    // Both classes hold 6 patterns, 3 of them shared.
    CHECK(data.class_patterns[0].size() == 6);
    CHECK(data.class_patterns[1].size() == 6);
    std::set<std::size_t> a(data.class_patterns[0].begin(), data.class_patterns[0].end());
    std::size_t shared = 0;
    for (std::size_t p : data.class_patterns[1]) shared += a.count(p);
    CHECK(shared == 3);
    CHECK(data.train.overlap_truth->at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gen_synthetic: infeasible plan rejected") {
    SyntheticSpec spec = small_spec();
    spec.dim = 6; // needs 4*2 + 3 = 11 basis vectors
    CHECK_THROWS_AS((void)gen_synthetic(spec, 1), ConfigError);
}

TEST_CASE("gen_synthetic: deterministic per seed") {
    const SyntheticData a = gen_synthetic(small_spec(), 7);
    const SyntheticData b = gen_synthetic(small_spec(), 7);
    CHECK(a.train.inputs == b.train.inputs);
    CHECK(a.test.inputs == b.test.inputs);
    const SyntheticData c = gen_synthetic(small_spec(), 8);
    CHECK_FALSE(a.train.inputs == c.train.inputs);
}

TEST_CASE("gen_synthetic: basis rows are orthonormal") {
    const SyntheticData data = gen_synthetic(small_spec(), 13);
    const Tensor& basis = data.basis;
    for (std::size_t i = 0; i < basis.dim(0); ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            const double d = dot(basis.row(i), basis.row(j));
            CHECK(d == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
        }
}

TEST_CASE("dataset file: save/load round trip") {
    SyntheticSpec spec = small_spec();
    spec.coarse_groups = 2;
    const SyntheticData data = gen_synthetic(spec, 17);
    const auto bytes = serialize_dataset(data.train);
    const Dataset back = deserialize_dataset(bytes);
    CHECK(back.inputs == data.train.inputs);
    CHECK(back.labels == data.train.labels);
    CHECK(back.coarse_labels == data.train.coarse_labels);
    CHECK(back.class_names == data.train.class_names);
    CHECK(*back.overlap_truth == *data.train.overlap_truth);
    CHECK(serialize_dataset(back) == bytes);
}

TEST_CASE("dataset file: out-of-range label rejected") {
    const SyntheticData data = gen_synthetic(small_spec(), 19);
    auto bytes = serialize_dataset(data.train);
    // Labels sit between the inputs block and the overlap matrix.
    const std::size_t label_offset = bytes.size() -
                                     data.train.size() * 2 -
                                     data.train.num_classes() * data.train.num_classes() * 8;
    bytes[label_offset] = 0xff;
    bytes[label_offset + 1] = 0xff;
    CHECK_THROWS_AS((void)deserialize_dataset(bytes), ParseError);
}

TEST_CASE("dataset file: truncated payload names expected and actual length") {
    const SyntheticData data = gen_synthetic(small_spec(), 23);
    auto bytes = serialize_dataset(data.train);
    bytes.resize(bytes.size() / 2);
    try {
        (void)deserialize_dataset(bytes);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("expected") != std::string::npos);
        CHECK(msg.find("remain") != std::string::npos);
    }
}

TEST_CASE("split_task: class-wise counts on a balanced dataset") {
    SyntheticSpec spec = small_spec();
    spec.per_class = 100;
    const SyntheticData data = gen_synthetic(spec, 29);
    TaskSpec task;
    task.kind = TaskKind::ClassWise;
    task.target = 2;
    const SplitResult split = split_task(data.train, task);
    CHECK(split.forget_set.size() == 100);
    CHECK(split.retain_set.size() == 300);
    for (std::size_t i : split.forget_set) CHECK(data.train.labels[i] == 2);
}

TEST_CASE("split_task: random split deterministic per seed") {
    const SyntheticData data = gen_synthetic(small_spec(), 31);
    TaskSpec task;
    task.kind = TaskKind::Random;
    task.count = 25;
    task.seed = 5;
    const SplitResult a = split_task(data.train, task);
    const SplitResult b = split_task(data.train, task);
    CHECK(a.forget_set == b.forget_set);
    CHECK(a.forget_set.size() == 25);
    task.seed = 6;
    const SplitResult c = split_task(data.train, task);
    CHECK_FALSE(a.forget_set == c.forget_set);
}

TEST_CASE("split_task: sub-class forget samples share the target's coarse label") {
    SyntheticSpec spec = small_spec();
    spec.coarse_groups = 2;
    const SyntheticData data = gen_synthetic(spec, 37);
    TaskSpec task;
    task.kind = TaskKind::SubClass;
    task.target = 1;
    const SplitResult split = split_task(data.train, task);
    const std::vector<int> map = data.train.fine_to_coarse();
    for (std::size_t i : split.forget_set) {
        CHECK(data.train.labels[i] == 1);
        CHECK(data.train.coarse_labels[i] == map[1]);
    }
}

TEST_CASE("split_task: sub-class without coarse labels is a task error") {
    const SyntheticData data = gen_synthetic(small_spec(), 41);
    TaskSpec task;
    task.kind = TaskKind::SubClass;
    task.target = 1;
    CHECK_THROWS_AS((void)split_task(data.train, task), TaskError);
}

TEST_CASE("split_task: partition property across task kinds") {
    SyntheticSpec spec = small_spec();
    spec.coarse_groups = 2;
    const SyntheticData data = gen_synthetic(spec, 43);
    std::vector<TaskSpec> tasks;
    for (int target = 0; target < 4; ++target) {
        tasks.push_back({TaskKind::ClassWise, target, 0, 0});
        tasks.push_back({TaskKind::SubClass, target, 0, 0});
    }
    for (std::uint64_t s = 0; s < 4; ++s) tasks.push_back({TaskKind::Random, 0, 17, s});

    for (const TaskSpec& task : tasks) {
        const SplitResult split = split_task(data.train, task);
        CHECK_FALSE(split.forget_set.empty());
        std::vector<std::size_t> all = split.forget_set;
        all.insert(all.end(), split.retain_set.begin(), split.retain_set.end());
        std::sort(all.begin(), all.end());
        CHECK(all.size() == data.train.size());
        for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    }
}

TEST_CASE("sample_finetune_retain: full draw permutes, n=0 empty, seeded") {
    const std::vector<std::size_t> retain = {3, 5, 8, 13, 21};
    const auto full = sample_finetune_retain(retain, retain.size(), 9);
    std::vector<std::size_t> sorted = full;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == retain);
    CHECK(sample_finetune_retain(retain, 0, 9).empty());
    CHECK(sample_finetune_retain(retain, 3, 9) == sample_finetune_retain(retain, 3, 9));
    CHECK_THROWS_AS((void)sample_finetune_retain(retain, 6, 9), ConfigError);
}

TEST_CASE("entanglement: zeroing a pair's shared directions hurts both classes") {
    // Train to convergence, then project the (0,1) pair's shared subspace
    // out of the test inputs; accuracy on both classes must drop. The pair
    // carries most of its signal in associated features (4 shared vs 1
    // unique pattern), so the classifier has to rely on them.
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.dim = 16;
    spec.unique_patterns = 1;
    spec.overlap_plan = {{0, 1, 4}, {2, 3, 1}};
    spec.noise_std = 0.45;
    spec.per_class = 80;
    spec.per_class_test = 40;
    const SyntheticData data = gen_synthetic(spec, 47);

    std::vector<std::size_t> all(data.train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.learning_rate = 3e-3;
    cfg.seed = 1;
    const Mlp model = train_classifier(data.train, all, {32, 32}, cfg);

    std::set<std::size_t> shared;
    {
        std::set<std::size_t> a(data.class_patterns[0].begin(), data.class_patterns[0].end());
        for (std::size_t p : data.class_patterns[1])
            if (a.count(p)) shared.insert(p);
    }
    REQUIRE_FALSE(shared.empty());

    Tensor projected = data.test.inputs;
    for (std::size_t i = 0; i < projected.dim(0); ++i) {
        auto row = projected.row(i);
        for (std::size_t p : shared) {
            const auto dir = data.basis.row(p);
            const double coeff = dot(row, dir);
            for (std::size_t d = 0; d < row.size(); ++d) row[d] -= coeff * dir[d];
        }
    }

    const auto class_accuracy = [&](const Tensor& inputs, int cls) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < data.test.size(); ++i)
            if (data.test.labels[i] == cls) rows.push_back(i);
        Tensor x({rows.size(), data.test.dim()});
        std::vector<int> y(rows.size(), cls);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto src = inputs.row(rows[i]);
            std::copy(src.begin(), src.end(), x.row(i).begin());
        }
        return accuracy(model, x, y);
    };

    for (int cls : {0, 1}) {
        const double before = class_accuracy(data.test.inputs, cls);
        const double after = class_accuracy(projected, cls);
        CHECK(before > 80.0);
        CHECK(after < before - 10.0);
    }
}

TEST_SUITE_END();
