#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "megu/dataset.hpp"
#include "megu/mlp.hpp"
#include "megu/oracle.hpp"

namespace megu {

// Column-stochastic K x K matrix of oracle-estimated inter-concept feature
// similarity. Column k holds class k's transition possibilities.
struct TransitionMatrix {
    Tensor t; // [K, K]; t.at(row=l, col=k)
    std::size_t exemplars_per_class = 0;
    std::string oracle_kind;

    std::size_t num_classes() const { return t.rank() == 2 ? t.dim(0) : 0; }
    double column_entry(std::size_t row, std::size_t col) const { return t.at(row, col); }

    // Columns sum to 1 within 1e-9, all entries >= 0.
    void validate() const;
};

// Seeded choice of n exemplar indices per class.
std::vector<std::vector<std::size_t>> select_exemplars(const Dataset& ds,
                                                       std::size_t n_per_class,
                                                       std::uint64_t seed);

// Mean oracle similarity of class-k exemplars against one concept. All
// exemplars must carry label k.
double estimate_concept_similarity(const Oracle& oracle, const Dataset& ds,
                                   std::span<const std::size_t> exemplar_indices,
                                   int expected_label, int concept_index);

// Fills the similarity matrix from seeded exemplars and normalizes each
// class's similarity vector into a unit-sum column.
TransitionMatrix build_transition_matrix(const Oracle& oracle, const Dataset& ds,
                                         std::size_t n_per_class, std::uint64_t seed);

// Masks the original label's softmax mass to zero, then mixes through the
// transition matrix: R = T * (masked softmax).
std::vector<double> relevance_vector(const TransitionMatrix& tm,
                                     std::span<const double> softmax_probs,
                                     int original_label);

// Index of the floor(K*tau)-th largest relevance entry among the K-1
// candidates other than the original label; ties broken by lower index.
int assign_perturbing_label(std::span<const double> relevance, double tau,
                            int original_label);

// floor(K*tau), validated to lie in [1, K-1].
std::size_t perturb_rank(std::size_t num_classes, double tau);

struct PerturbEntry {
    std::size_t sample_index = 0;
    int label = 0;
    int perturb_label = 0;
    std::vector<double> relevance;
};

struct PerturbMap {
    double tau = 0.0;
    std::vector<PerturbEntry> entries;
    std::vector<std::size_t> label_histogram; // assigned-label counts, size K

    void validate(std::size_t num_classes) const;
};

// Relevance + assignment for every forget sample, plus the empirical
// distribution of assigned labels.
PerturbMap assign_all(const Mlp& model, const TransitionMatrix& tm, const Dataset& ds,
                      const std::vector<std::size_t>& forget_set, double tau);

// Ablation support: replaces every assignment with a seeded uniform label
// different from the sample's own. Relevance vectors are kept.
PerturbMap randomize_labels(const PerturbMap& map, std::size_t num_classes,
                            std::uint64_t seed);

std::string transition_matrix_to_json(const TransitionMatrix& tm);
TransitionMatrix transition_matrix_from_json(const std::string& text);
void save_transition_matrix(const TransitionMatrix& tm, const std::filesystem::path& path);
TransitionMatrix load_transition_matrix(const std::filesystem::path& path);

std::string perturb_map_to_json(const PerturbMap& map);
PerturbMap perturb_map_from_json(const std::string& text);
void save_perturb_map(const PerturbMap& map, const std::filesystem::path& path);
PerturbMap load_perturb_map(const std::filesystem::path& path);

} // namespace megu
