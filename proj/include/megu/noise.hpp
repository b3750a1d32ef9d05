#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "megu/guidance.hpp"
#include "megu/mlp.hpp"
#include "megu/tensor.hpp"

namespace megu {

struct NoiseConfig {
    std::size_t steps = 200;
    double learning_rate = 0.1;
    double lambda_reg = 0.1; // weight of the L2-norm penalty
    std::size_t batch = 32;  // noise variants trained jointly per key
    std::uint64_t seed = 0;

    void validate() const;
};

enum class NoiseDirection { Toward, Away };

// Gradient descent on  CE(f(N), target) + lambda*||N||   (toward), or
// -CE(f(N), target) + lambda*||N||   (away), each batch member optimized
// independently against the frozen model. Returns the [batch, d] result.
Tensor train_noise(const Mlp& model, int target_label, NoiseDirection direction,
                   const NoiseConfig& cfg);

// Per-batch-member objective values at the current noise; used by tests to
// audit the descent/ascent claims.
std::vector<double> noise_objective(const Mlp& model, const Tensor& noise,
                                    int target_label, NoiseDirection direction,
                                    double lambda_reg);

// Exact convex blend alpha*pos + (1-alpha)*neg.
Tensor combine(const Tensor& pos, const Tensor& neg, double alpha);

struct NoiseKey {
    int label = 0;
    int perturb_label = 0;
    auto operator<=>(const NoiseKey&) const = default;
};

struct NoisePair {
    NoiseKey key;
    Tensor pos; // [batch, d], trained toward key.perturb_label
    Tensor neg; // [batch, d], trained away from key.label
};

// All pairs forged against one model, keyed by (label, perturbing label),
// with the provenance needed to validate reuse.
struct NoiseSet {
    std::array<std::uint8_t, 32> model_digest{};
    NoiseConfig config;
    std::vector<NoisePair> pairs; // sorted by key

    const NoisePair* find(NoiseKey key) const;
};

// One pair per distinct (label, perturbing label) key in the map. Each
// key's training seed is derived from cfg.seed and the key, so adding a
// key never changes the others.
NoiseSet forge_pairs(const Mlp& model, const PerturbMap& map, const NoiseConfig& cfg);

std::vector<std::uint8_t> serialize_noise_set(const NoiseSet& set);
NoiseSet deserialize_noise_set(std::span<const std::uint8_t> bytes);

void cache_store(const NoiseSet& set, const std::filesystem::path& path);

struct LoadedNoise {
    NoiseSet set;
    bool provenance_override = false; // hash mismatch accepted via override
};

// Loads a cache and checks its provenance hash against the expected model.
// A mismatch is an error unless allow_mismatch is set, in which case the
// override is recorded on the result.
LoadedNoise cache_load(const std::filesystem::path& path,
                       const std::array<std::uint8_t, 32>& expected_model_digest,
                       bool allow_mismatch = false);

} // namespace megu
