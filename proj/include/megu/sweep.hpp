#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "megu/eval.hpp"
#include "megu/unlearn.hpp"

namespace megu {

struct SweepPlan {
    std::vector<double> taus;
    std::vector<double> alphas;
    std::size_t seeds_per_cell = 1;
    std::uint64_t base_seed = 0; // cell seeds are base_seed + j
    UnlearnConfig base;
    NoiseConfig noise;
    EvalOptions eval;
    std::size_t workers = 0;     // 0 = pick from hardware

    void validate(std::size_t num_classes) const;
};

struct SweepCell {
    double tau = 0.0;
    double alpha = 0.0;
    std::size_t seed_count = 0;
    double a_r_mean = 0.0, a_r_min = 0.0, a_r_max = 0.0;
    double a_f_mean = 0.0, a_f_min = 0.0, a_f_max = 0.0;
    double mia_mean = 0.0, mia_min = 0.0, mia_max = 0.0;
};

struct SweepResult {
    std::vector<SweepCell> cells;       // tau-major, then alpha
    std::vector<std::string> failures;  // one line per failed (tau, alpha, seed)
};

// Per cell: assignment at tau, noise forged per seed, realignment at alpha,
// metrics aggregated across seeds. Cells run in a bounded worker pool with
// isolated state; a failed cell is recorded and skipped.
SweepResult run_sweep(const SweepPlan& plan, const Mlp& baseline,
                      const TransitionMatrix& tm, const Dataset& train,
                      const Dataset& test, const SplitResult& split,
                      const TaskSpec& task);

std::string sweep_csv(const SweepResult& result);

struct AblationRow {
    std::string variant; // baseline | retrain | megu | rnd | wofn
    double a_r = 0.0;
    double a_f = 0.0;
    double mia = 0.0;
    std::string initial_hash; // empty for reference rows
};

// Full MeGU vs random-label and no-feature-noise ablations, all sharing the
// pretrained checkpoint, with baseline and gold reference rows.
std::vector<AblationRow> run_ablations(const UnlearnConfig& base, const NoiseConfig& noise,
                                       const EvalOptions& eval, const Mlp& baseline,
                                       const Mlp& gold, const TransitionMatrix& tm,
                                       const Dataset& train, const Dataset& test,
                                       const SplitResult& split, const TaskSpec& task);

std::string ablation_csv(const std::vector<AblationRow>& rows);

} // namespace megu
