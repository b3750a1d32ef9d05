#include "megu/optim.hpp"

#include <cmath>

#include "megu/error.hpp"

namespace megu {

Optimizer::Optimizer(OptimizerKind kind, double learning_rate)
    : kind_(kind), lr_(learning_rate) {
    if (!(learning_rate > 0.0))
        throw ConfigError("learning rate must be positive, got " +
                          std::to_string(learning_rate));
}

void Optimizer::step(const std::vector<Tensor*>& params,
                     const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size())
        throw ShapeError("optimizer: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(*grads[i]))
            throw ShapeError("optimizer: gradient shape mismatch at tensor " +
                             std::to_string(i));
        if (!grads[i]->all_finite())
            throw NumericError("optimizer: non-finite gradient at tensor " +
                               std::to_string(i) + ", update rejected");
    }

    if (kind_ == OptimizerKind::Sgd) {
        ++step_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = *grads[i];
            for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
        }
        return;
    }

    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.push_back(Tensor::zeros(p->shape()));
            v_.push_back(Tensor::zeros(p->shape()));
        }
    }
    if (m_.size() != params.size())
        throw ShapeError("optimizer: moment buffer count mismatch");

    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        if (!m.same_shape(p))
            throw ShapeError("optimizer: moment buffer shape drifted at tensor " +
                             std::to_string(i));
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Optimizer::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(grads.size());
    for (const Tensor& g : grads) ptrs.push_back(&g);
    step(params, ptrs);
}

} // namespace megu
