#pragma once

#include <cstdint>
#include <vector>

#include "megu/tensor.hpp"

namespace megu {

enum class OptimizerKind { Sgd, Adam };

// First-order optimizer over a fixed ordered set of parameter tensors.
// Sgd applies p -= lr * g exactly; Adam keeps bias-corrected moments.
// Moment buffers are allocated on first step and must keep matching the
// parameter shapes afterwards. A non-finite gradient rejects the whole
// update, leaving every parameter untouched.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate);

    OptimizerKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }
    std::uint64_t step_count() const { return step_; }

    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);
    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

private:
    OptimizerKind kind_;
    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    std::uint64_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

} // namespace megu
