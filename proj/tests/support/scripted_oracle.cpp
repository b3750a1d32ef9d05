#include "scripted_oracle.hpp"

#include <thread>

namespace megu::testing {

ScriptedOracle::ScriptedOracle(ResponseFn fn, std::string kind_tag)
    : fn_(std::move(fn)), kind_tag_(std::move(kind_tag)) {}

ScriptedOracle ScriptedOracle::constant(double value) {
    return ScriptedOracle([value](std::int64_t, int) { return value; });
}

ScriptedOracle ScriptedOracle::from_table(
    std::map<std::pair<std::int64_t, int>, double> table) {
    return ScriptedOracle([table = std::move(table)](std::int64_t id, int concept_index) {
        const auto it = table.find({id, concept_index});
        if (it == table.end())
            throw LookupError("scripted oracle has no entry for (" + std::to_string(id) +
                              ", " + std::to_string(concept_index) + ")");
        return it->second;
    });
}

double ScriptedOracle::query(const Tensor&, std::int64_t instance_id,
                             int concept_index) const {
    const double value = fn_(instance_id, concept_index);
    if (!(value >= 0.0 && value <= 1.0))
        throw DomainError("scripted response " + std::to_string(value) + " outside [0,1]");
    std::lock_guard lock(mu_);
    log_.push_back({instance_id, concept_index, value, log_.size() + 1});
    return value;
}

std::vector<ScriptedOracle::Call> ScriptedOracle::call_log() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::size_t ScriptedOracle::call_count() const {
    std::lock_guard lock(mu_);
    return log_.size();
}

FaultInjectingOracle::FaultInjectingOracle(const Oracle& inner, FaultPlan plan)
    : inner_(inner), plan_(std::move(plan)) {}

double FaultInjectingOracle::query(const Tensor& instance, std::int64_t instance_id,
                                   int concept_index) const {
    std::size_t call;
    {
        std::lock_guard lock(mu_);
        call = ++calls_;
    }
    if (plan_.latency.count() > 0) std::this_thread::sleep_for(plan_.latency);
    if (plan_.fail_on_calls.count(call))
        throw TransportError("injected fault on call #" + std::to_string(call) +
                             " (instance " + std::to_string(instance_id) + ", concept " +
                             std::to_string(concept_index) + ")");
    return inner_.query(instance, instance_id, concept_index);
}

std::size_t FaultInjectingOracle::call_count() const {
    std::lock_guard lock(mu_);
    return calls_;
}

} // namespace megu::testing
