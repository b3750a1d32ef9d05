#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "megu/dataset.hpp"
#include "megu/guidance.hpp"
#include "megu/mlp.hpp"
#include "megu/noise.hpp"
#include "megu/optim.hpp"

namespace megu {

enum class UnlearnMethod { Megu, Unsir, Ft, Retrain };

std::string method_name(UnlearnMethod method);
UnlearnMethod parse_method(const std::string& name);

// Pretraining / gold retraining settings.
struct TrainConfig {
    std::size_t epochs = 40;
    double learning_rate = 3e-3;
    std::size_t batch_size = 32;
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::uint64_t seed = 0;
};

Mlp train_classifier(const Dataset& ds, const std::vector<std::size_t>& indices,
                     const std::vector<std::size_t>& hidden_dims, const TrainConfig& cfg,
                     std::vector<double>* epoch_losses = nullptr);

struct UnlearnConfig {
    UnlearnMethod method = UnlearnMethod::Megu;
    std::size_t epochs = 3;            // megu / ft
    double learning_rate = 3e-4;       // zero means evaluate-only (no updates)
    std::size_t batch_size = 32;
    double alpha = 0.7;                // megu noise blend
    double tau = 0.3;                  // megu rank constant (informational here)
    std::size_t finetune_retain_count = 600;
    std::size_t impair_epochs = 1;     // unsir
    std::size_t repair_epochs = 1;     // unsir
    bool random_labels = false;        // ablation: RND
    bool no_feature_noise = false;     // ablation: w.o.F.N
    std::uint64_t seed = 0;

    void validate() const;
};

struct LossTraceRow {
    std::size_t epoch;
    std::string stream;
    double mean_loss;
};

struct UnlearnRun {
    std::array<std::uint8_t, 32> initial_digest{};
    Mlp model;
    std::vector<LossTraceRow> traces;
    std::vector<std::pair<std::string, double>> phase_seconds;
    UnlearnMethod method = UnlearnMethod::Megu;
};

// Forget inputs with their blended noise and perturbing labels:
// D_f^p = {(x_i + alpha*pos[m_i] + (1-alpha)*neg[m_i], y_p_i)}.
struct PerturbedForgetSet {
    Tensor inputs;
    std::vector<int> labels;
    std::vector<std::size_t> members; // chosen noise batch member per sample
};

// The assignment actually used by megu_unlearn: the map as given, or its
// seeded randomization when cfg.random_labels is set. Shared with the
// ablation driver so both sides agree on the noise keys to forge.
PerturbMap effective_perturb_map(const PerturbMap& map, std::size_t num_classes,
                                 const UnlearnConfig& cfg);

PerturbedForgetSet build_perturbed_forget_set(const Dataset& ds, const PerturbMap& map,
                                              const NoiseSet& pairs,
                                              const UnlearnConfig& cfg);

// Realignment fine-tuning: alternates one perturbed-forget mini-batch with
// one retain mini-batch per step, the forget stream cycling when shorter.
// No un-perturbed forget sample ever enters a gradient with its original
// label.
UnlearnRun megu_unlearn(const Mlp& model, const Dataset& ds, const SplitResult& split,
                        const PerturbMap& map, const NoiseSet& pairs,
                        const UnlearnConfig& cfg);

// Impair/repair: impair trains on retain inputs shifted by away-trained
// noise for the forget classes, repair on clean retain data.
UnlearnRun unsir_unlearn(const Mlp& model, const Dataset& ds, const SplitResult& split,
                         const UnlearnConfig& cfg, const NoiseConfig& noise_cfg);

// Fine-tunes on the retain subsample only.
UnlearnRun ft_baseline(const Mlp& model, const Dataset& ds, const SplitResult& split,
                       const UnlearnConfig& cfg);

// Fresh seeded model trained on retain data with the baseline's budget.
Mlp retrain_gold(const Dataset& ds, const SplitResult& split,
                 const std::vector<std::size_t>& hidden_dims, const TrainConfig& cfg);

std::string loss_traces_csv(const UnlearnRun& run);
std::string timings_json(const UnlearnRun& run);
void write_run_artifacts(const UnlearnRun& run, const std::filesystem::path& dir,
                         const std::string& config_snapshot_json);

} // namespace megu
