#include <doctest.h>

#include <filesystem>

#include "megu/guidance.hpp"
#include "scripted_oracle.hpp"

using namespace megu;
using megu::testing::FaultInjectingOracle;
using megu::testing::FaultPlan;
using megu::testing::ScriptedOracle;

namespace {

SyntheticData tiny_bundle() {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.dim = 8;
    spec.per_class = 6;
    spec.per_class_test = 2;
    spec.unique_patterns = 1;
    spec.overlap_plan = {{0, 1, 1}};
    return gen_synthetic(spec, 7);
}

} // namespace

TEST_SUITE_BEGIN("fixtures");

TEST_CASE("scripted: call log records sequence, args, and returns") {
    const ScriptedOracle oracle([](std::int64_t id, int concept_index) {
        return 0.1 * static_cast<double>(concept_index) +
               0.01 * static_cast<double>(id % 10);
    });
    const Tensor x({2});
    (void)oracle.query(x, 3, 2);
    (void)oracle.query(x, 4, 1);
    const auto log = oracle.call_log();
    REQUIRE(log.size() == 2);
    CHECK(log[0].sequence == 1);
    CHECK(log[0].instance_id == 3);
    CHECK(log[0].concept_index == 2);
    CHECK(log[0].returned == doctest::Approx(0.23));
    CHECK(log[1].sequence == 2);
}

TEST_CASE("scripted: out-of-range responses are refused") {
    const ScriptedOracle oracle([](std::int64_t, int) { return 1.5; });
    CHECK_THROWS_AS((void)oracle.query(Tensor({1}), 0, 0), DomainError);
}

TEST_CASE("fault wrapper: empty plan is transparent") {
    const ScriptedOracle inner = ScriptedOracle::constant(0.4);
    const FaultInjectingOracle wrapped(inner, FaultPlan{});
    const SyntheticData data = tiny_bundle();
    const TransitionMatrix via_wrapper = build_transition_matrix(wrapped, data.train, 2, 1);

    const ScriptedOracle inner2 = ScriptedOracle::constant(0.4);
    const TransitionMatrix direct = build_transition_matrix(inner2, data.train, 2, 1);
    CHECK(via_wrapper.t == direct.t);

    // The wrapped oracle's log must be what the bare oracle would log.
    const auto log_a = inner.call_log();
    const auto log_b = inner2.call_log();
    REQUIRE(log_a.size() == log_b.size());
    for (std::size_t i = 0; i < log_a.size(); ++i) {
        CHECK(log_a[i].instance_id == log_b[i].instance_id);
        CHECK(log_a[i].concept_index == log_b[i].concept_index);
        CHECK(log_a[i].returned == log_b[i].returned);
    }
}

TEST_CASE("fault wrapper: failing call #1 surfaces with exemplar context") {
    const ScriptedOracle inner = ScriptedOracle::constant(0.4);
    FaultPlan plan;
    plan.fail_on_calls = {1};
    const FaultInjectingOracle wrapped(inner, plan);
    const SyntheticData data = tiny_bundle();
    try {
        (void)build_transition_matrix(wrapped, data.train, 2, 1);
        FAIL("expected TransportError");
    } catch (const TransportError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("call #1") != std::string::npos);
        CHECK(msg.find("exemplar") != std::string::npos);
        CHECK(msg.find("class 0") != std::string::npos);
    }
    CHECK(inner.call_count() == 0);
}

TEST_CASE("fault wrapper: fail-everything plan leaves no partial artifact") {
    const ScriptedOracle inner = ScriptedOracle::constant(0.4);
    FaultPlan plan;
    for (std::size_t call = 1; call <= 100; ++call) plan.fail_on_calls.insert(call);
    const FaultInjectingOracle wrapped(inner, plan);
    const SyntheticData data = tiny_bundle();

    const std::filesystem::path path = "test_fault_matrix.json";
    std::filesystem::remove(path);
    try {
        const TransitionMatrix tm = build_transition_matrix(wrapped, data.train, 2, 1);
        save_transition_matrix(tm, path);
        FAIL("expected TransportError");
    } catch (const TransportError&) {
    }
    CHECK_FALSE(std::filesystem::exists(path));
}

TEST_SUITE_END();
