#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "megu/tensor.hpp"

namespace megu {

// Labeled vectors with an optional fine/coarse hierarchy and, for synthetic
// data, the ground-truth shared-feature fraction per class pair.
struct Dataset {
    Tensor inputs;                       // [N, d]
    std::vector<int> labels;             // fine class per sample
    std::vector<int> coarse_labels;      // empty when absent
    std::vector<std::string> class_names;
    std::optional<Tensor> overlap_truth; // [K, K], symmetric, unit diagonal

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return inputs.rank() == 2 ? inputs.dim(1) : 0; }
    std::size_t num_classes() const { return class_names.size(); }
    bool has_coarse() const { return !coarse_labels.empty(); }

    // Number of coarse groups; 0 when no hierarchy is present.
    std::size_t num_coarse() const;
    // fine class -> coarse class; throws if the hierarchy is inconsistent.
    std::vector<int> fine_to_coarse() const;

    void validate() const;
};

// One pool of basis vectors shared between a pair of classes.
struct SharedGroup {
    std::size_t class_a;
    std::size_t class_b;
    std::size_t count;
};

struct SyntheticSpec {
    std::size_t num_classes = 8;
    std::size_t dim = 40;
    std::size_t per_class = 150;       // training samples per class
    std::size_t per_class_test = 50;   // held-out samples per class
    std::size_t unique_patterns = 2;   // private basis vectors per class
    std::vector<SharedGroup> overlap_plan;
    double noise_std = 0.3;
    std::size_t coarse_groups = 0;     // 0 = no hierarchy; else K % groups == 0

    // Ring-with-skips plan for K=8 giving every class several graded
    // overlap levels; the pairwise heaviest shares align with the default
    // coarse grouping (0,1)(2,3)(4,5)(6,7).
    static std::vector<SharedGroup> default_plan_k8();
};

// Generated data plus the generating geometry (basis kept for tests that
// probe feature entanglement; it is not part of the on-disk format).
struct SyntheticData {
    Dataset train;
    Dataset test;
    Tensor basis;                                 // [P, d] orthonormal rows
    std::vector<std::vector<std::size_t>> class_patterns; // basis rows per class
};

// Class prototypes are sums of orthonormal basis vectors: per-class private
// vectors plus pool vectors shared according to the overlap plan. Samples
// are prototype + isotropic Gaussian noise. overlap_truth[i][j] =
// |P_i ∩ P_j| / sqrt(|P_i|·|P_j|), exact by construction.
SyntheticData gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

enum class TaskKind { ClassWise, SubClass, Random };

struct TaskSpec {
    TaskKind kind = TaskKind::ClassWise;
    int target = 0;            // class index (class_wise) or fine class (sub_class)
    std::size_t count = 100;   // sample count (random)
    std::uint64_t seed = 0;    // sampling seed (random)
};

std::string task_kind_name(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

struct SplitResult {
    std::vector<std::size_t> forget_set;
    std::vector<std::size_t> retain_set;
};

// Partition of training indices per the task. class_wise/sub_class take every
// sample of the target class; random draws a seeded uniform subset.
SplitResult split_task(const Dataset& ds, const TaskSpec& task);

// Seeded uniform subsample of the retain set, without replacement.
std::vector<std::size_t> sample_finetune_retain(const std::vector<std::size_t>& retain_set,
                                                std::size_t n, std::uint64_t seed);

// Rows of ds.inputs selected by index, with their labels.
std::pair<Tensor, std::vector<int>> gather(const Dataset& ds,
                                           const std::vector<std::size_t>& indices);

} // namespace megu
