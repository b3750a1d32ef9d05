#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "megu/tensor.hpp"

namespace megu {

enum class Activation : std::uint8_t { Tanh = 0 };

// Gradients w.r.t. every parameter tensor, in the same order the model
// declares them (per layer: weight then bias).
struct Gradients {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
};

enum class GradSign { Descent, Ascent };

// Fixed feed-forward classifier: input d, hidden layers with a smooth
// nonlinearity, linear output of K logits. Gradients are analytic
// (hand-derived backprop), both w.r.t. parameters and w.r.t. inputs.
class Mlp {
public:
    // layer_dims = {input, hidden..., K}. Weights are seeded normal with
    // 1/sqrt(fan_in) scale, biases zero.
    Mlp(std::vector<std::size_t> layer_dims, std::uint64_t seed,
        Activation activation = Activation::Tanh);

    std::size_t input_dim() const { return layer_dims_.front(); }
    std::size_t num_classes() const { return layer_dims_.back(); }
    const std::vector<std::size_t>& layer_dims() const { return layer_dims_; }
    std::size_t num_layers() const { return weights_.size(); }
    std::uint64_t seed() const { return seed_; }
    Activation activation() const { return activation_; }

    const std::vector<Tensor>& weights() const { return weights_; }
    const std::vector<Tensor>& biases() const { return biases_; }
    std::vector<Tensor>& weights() { return weights_; }
    std::vector<Tensor>& biases() { return biases_; }

    std::size_t parameter_count() const;
    bool parameters_finite() const;

    // Pointers to every parameter tensor in declared order (for optimizers).
    std::vector<Tensor*> parameter_tensors();
    std::vector<const Tensor*> parameter_tensors() const;

    // batch [B, d] -> logits [B, K]. A single input of shape [d] is treated
    // as a batch of one.
    Tensor forward(const Tensor& batch) const;

    // Mean softmax cross-entropy gradient w.r.t. every parameter.
    Gradients grad_params(const Tensor& batch, std::span<const int> labels) const;

    // Per-sample gradient of softmax cross-entropy w.r.t. the inputs, the
    // model treated as constant. Ascent returns the negated descent
    // gradient. Output shape matches the batch.
    Tensor grad_input(const Tensor& batch, std::span<const int> labels,
                      GradSign sign = GradSign::Descent) const;
    Tensor grad_input(const Tensor& batch, int label,
                      GradSign sign = GradSign::Descent) const;

private:
    Tensor batch_view(const Tensor& input) const;

    std::vector<std::size_t> layer_dims_;
    std::vector<Tensor> weights_; // [out, in] per layer
    std::vector<Tensor> biases_;  // [out] per layer
    Activation activation_;
    std::uint64_t seed_;
};

// Numerically stable softmax of one logits row.
std::vector<double> softmax(std::span<const double> logits);

// Mean negative log softmax probability of the true labels.
double softmax_ce_loss(const Tensor& logits, std::span<const int> labels);

// Per-sample losses (used by the membership attacker).
std::vector<double> per_sample_ce(const Tensor& logits, std::span<const int> labels);

std::vector<int> argmax_rows(const Tensor& logits);

// Checkpoint: "MEGU-CKPT" magic, version, layer dims, then parameter
// tensors in declared order as 64-bit little-endian.
std::vector<std::uint8_t> serialize_checkpoint(const Mlp& model);
Mlp deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                           Activation activation = Activation::Tanh);
void save_checkpoint(const Mlp& model, const std::filesystem::path& path);
Mlp load_checkpoint(const std::filesystem::path& path,
                    Activation activation = Activation::Tanh);

// SHA-256 of the serialized checkpoint; the provenance key for noise caches.
std::array<std::uint8_t, 32> model_hash(const Mlp& model);

} // namespace megu
