#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "megu/oracle.hpp"

namespace megu::testing {

// Oracle with programmable responses and an append-only call log, for
// validating estimation code against replayed query traces.
class ScriptedOracle : public Oracle {
public:
    using ResponseFn = std::function<double(std::int64_t instance_id, int concept_index)>;

    explicit ScriptedOracle(ResponseFn fn, std::string kind_tag = "scripted");

    static ScriptedOracle constant(double value);
    static ScriptedOracle from_table(std::map<std::pair<std::int64_t, int>, double> table);

    double query(const Tensor& instance, std::int64_t instance_id,
                 int concept_index) const override;
    std::string kind() const override { return kind_tag_; }

    struct Call {
        std::int64_t instance_id;
        int concept_index;
        double returned;
        std::size_t sequence; // 1-based
    };

    std::vector<Call> call_log() const;
    std::size_t call_count() const;

private:
    ResponseFn fn_;
    std::string kind_tag_;
    mutable std::mutex mu_;
    mutable std::vector<Call> log_;
};

struct FaultPlan {
    std::set<std::size_t> fail_on_calls; // 1-based call numbers
    std::chrono::milliseconds latency{0};
};

// Wraps any oracle; the planned call numbers raise TransportError, all
// other calls pass through unchanged.
class FaultInjectingOracle : public Oracle {
public:
    FaultInjectingOracle(const Oracle& inner, FaultPlan plan);

    double query(const Tensor& instance, std::int64_t instance_id,
                 int concept_index) const override;
    std::string kind() const override { return inner_.kind(); }

    std::size_t call_count() const;

private:
    const Oracle& inner_;
    FaultPlan plan_;
    mutable std::mutex mu_;
    mutable std::size_t calls_ = 0;
};

} // namespace megu::testing
