#include "megu/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "megu/serialize.hpp"

namespace megu {

namespace {

using nlohmann::json;

Tensor single_row(const Dataset& ds, std::size_t index) {
    const auto src = ds.inputs.row(index);
    return Tensor({src.size()}, std::vector<double>(src.begin(), src.end()));
}

} // namespace

void TransitionMatrix::validate() const {
    const std::size_t k = num_classes();
    if (k == 0 || t.dim(1) != k)
        throw DomainError("transition matrix is not square");
    for (std::size_t col = 0; col < k; ++col) {
        double sum = 0.0;
        for (std::size_t row = 0; row < k; ++row) {
            const double v = t.at(row, col);
            if (v < 0.0)
                throw DomainError("negative transition entry at (" + std::to_string(row) +
                                  "," + std::to_string(col) + ")");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw DomainError("column " + std::to_string(col) + " sums to " +
                              std::to_string(sum) + ", not 1");
    }
}

std::vector<std::vector<std::size_t>> select_exemplars(const Dataset& ds,
                                                       std::size_t n_per_class,
                                                       std::uint64_t seed) {
    if (n_per_class == 0)
        throw ConfigError("need at least one exemplar per class");
    const std::size_t k = ds.num_classes();
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    std::vector<std::vector<std::size_t>> exemplars(k);
    for (std::size_t c = 0; c < k; ++c) {
        if (by_class[c].size() < n_per_class)
            throw ConfigError("class " + std::to_string(c) + " has " +
                              std::to_string(by_class[c].size()) + " samples, need " +
                              std::to_string(n_per_class) + " exemplars");
        Rng rng(mix_seed(seed, 0xe8e0 + c));
        const auto picks = rng.sample_without_replacement(by_class[c].size(), n_per_class);
        for (std::size_t p : picks) exemplars[c].push_back(by_class[c][p]);
    }
    return exemplars;
}

double estimate_concept_similarity(const Oracle& oracle, const Dataset& ds,
                                   std::span<const std::size_t> exemplar_indices,
                                   int expected_label, int concept_index) {
    if (exemplar_indices.empty())
        throw ConfigError("concept similarity needs at least one exemplar");
    double sum = 0.0;
    for (std::size_t idx : exemplar_indices) {
        if (ds.labels[idx] != expected_label)
            throw DomainError("exemplar " + std::to_string(idx) + " has label " +
                              std::to_string(ds.labels[idx]) + ", expected " +
                              std::to_string(expected_label));
        double score = 0.0;
        try {
            score = oracle.query(single_row(ds, idx), static_cast<std::int64_t>(idx),
                                 concept_index);
        } catch (const TransportError& e) {
            throw TransportError(std::string(e.what()) + " [exemplar " + std::to_string(idx) +
                                 " of class " + std::to_string(expected_label) +
                                 ", concept " + std::to_string(concept_index) + "]");
        } catch (const LookupError& e) {
            throw LookupError(std::string(e.what()) + " [exemplar " + std::to_string(idx) +
                              " of class " + std::to_string(expected_label) + ", concept " +
                              std::to_string(concept_index) + "]");
        }
        if (!(score >= 0.0 && score <= 1.0))
            throw DomainError("oracle returned " + std::to_string(score) +
                              " outside [0,1]");
        sum += score;
    }
    return sum / static_cast<double>(exemplar_indices.size());
}

TransitionMatrix build_transition_matrix(const Oracle& oracle, const Dataset& ds,
                                         std::size_t n_per_class, std::uint64_t seed) {
    const std::size_t k = ds.num_classes();
    const auto exemplars = select_exemplars(ds, n_per_class, seed);

    // similarity[k][l] = mean oracle score of class-k exemplars vs concept l
    Tensor similarity({k, k});
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t l = 0; l < k; ++l)
            similarity.at(c, l) = estimate_concept_similarity(
                oracle, ds, exemplars[c], static_cast<int>(c), static_cast<int>(l));

    TransitionMatrix tm;
    tm.t = Tensor({k, k});
    tm.exemplars_per_class = n_per_class;
    tm.oracle_kind = oracle.kind();
    for (std::size_t c = 0; c < k; ++c) {
        double mass = 0.0;
        for (std::size_t l = 0; l < k; ++l) mass += similarity.at(c, l);
        if (!(mass > 0.0))
            throw DomainError("class " + std::to_string(c) +
                              " has zero total similarity mass, cannot normalize");
        for (std::size_t l = 0; l < k; ++l)
            tm.t.at(l, c) = similarity.at(c, l) / mass;
    }
    tm.validate();
    return tm;
}

std::vector<double> relevance_vector(const TransitionMatrix& tm,
                                     std::span<const double> softmax_probs,
                                     int original_label) {
    const std::size_t k = tm.num_classes();
    if (softmax_probs.size() != k)
        throw ShapeError("softmax vector length " + std::to_string(softmax_probs.size()) +
                         " does not match K=" + std::to_string(k));
    if (original_label < 0 || static_cast<std::size_t>(original_label) >= k)
        throw DomainError("original label " + std::to_string(original_label) +
                          " outside [0, " + std::to_string(k) + ")");
    double total = 0.0;
    for (double p : softmax_probs) total += p;
    if (std::abs(total - 1.0) > 1e-6)
        throw DomainError("softmax vector sums to " + std::to_string(total) + ", not 1");

    std::vector<double> masked(softmax_probs.begin(), softmax_probs.end());
    masked[static_cast<std::size_t>(original_label)] = 0.0;

    std::vector<double> relevance(k, 0.0);
    for (std::size_t row = 0; row < k; ++row) {
        double s = 0.0;
        for (std::size_t col = 0; col < k; ++col) s += tm.t.at(row, col) * masked[col];
        relevance[row] = s;
    }
    return relevance;
}

std::size_t perturb_rank(std::size_t num_classes, double tau) {
    if (!(tau > 0.0 && tau < 1.0))
        throw ConfigError("tau must lie in (0,1), got " + std::to_string(tau));
    const auto rank =
        static_cast<std::size_t>(std::floor(static_cast<double>(num_classes) * tau));
    if (rank < 1)
        throw ConfigError("floor(K*tau) = " + std::to_string(rank) + " for K=" +
                          std::to_string(num_classes) + ", tau=" + std::to_string(tau) +
                          "; need at least 1");
    if (rank > num_classes - 1)
        throw ConfigError("floor(K*tau) = " + std::to_string(rank) +
                          " exceeds the K-1 = " + std::to_string(num_classes - 1) +
                          " available candidates");
    return rank;
}

int assign_perturbing_label(std::span<const double> relevance, double tau,
                            int original_label) {
    const std::size_t k = relevance.size();
    if (original_label < 0 || static_cast<std::size_t>(original_label) >= k)
        throw DomainError("original label " + std::to_string(original_label) +
                          " outside [0, " + std::to_string(k) + ")");
    const std::size_t rank = perturb_rank(k, tau);

    std::vector<std::size_t> candidates;
    candidates.reserve(k - 1);
    for (std::size_t i = 0; i < k; ++i)
        if (i != static_cast<std::size_t>(original_label)) candidates.push_back(i);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) {
                         if (relevance[a] != relevance[b]) return relevance[a] > relevance[b];
                         return a < b;
                     });
    return static_cast<int>(candidates[rank - 1]);
}

void PerturbMap::validate(std::size_t num_classes) const {
    for (const PerturbEntry& e : entries) {
        if (e.perturb_label == e.label)
            throw DomainError("perturbing label equals original label for sample " +
                              std::to_string(e.sample_index));
        if (e.perturb_label < 0 ||
            static_cast<std::size_t>(e.perturb_label) >= num_classes)
            throw DomainError("perturbing label " + std::to_string(e.perturb_label) +
                              " outside [0, " + std::to_string(num_classes) + ")");
    }
}

PerturbMap assign_all(const Mlp& model, const TransitionMatrix& tm, const Dataset& ds,
                      const std::vector<std::size_t>& forget_set, double tau) {
    const std::size_t k = tm.num_classes();
    if (ds.num_classes() != k)
        throw ShapeError("dataset K does not match transition matrix K");
    perturb_rank(k, tau); // fail fast before touching the model

    PerturbMap map;
    map.tau = tau;
    map.label_histogram.assign(k, 0);
    if (forget_set.empty())
        throw TaskError("forget set is empty");

    auto [inputs, labels] = gather(ds, forget_set);
    const Tensor logits = model.forward(inputs);
    for (std::size_t i = 0; i < forget_set.size(); ++i) {
        const std::vector<double> probs = softmax(logits.row(i));
        PerturbEntry entry;
        entry.sample_index = forget_set[i];
        entry.label = labels[i];
        entry.relevance = relevance_vector(tm, probs, labels[i]);
        entry.perturb_label = assign_perturbing_label(entry.relevance, tau, labels[i]);
        ++map.label_histogram[static_cast<std::size_t>(entry.perturb_label)];
        map.entries.push_back(std::move(entry));
    }
    map.validate(k);
    return map;
}

PerturbMap randomize_labels(const PerturbMap& map, std::size_t num_classes,
                            std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xab1a));
    PerturbMap out = map;
    std::fill(out.label_histogram.begin(), out.label_histogram.end(), 0);
    out.label_histogram.resize(num_classes, 0);
    for (PerturbEntry& e : out.entries) {
        const auto draw = static_cast<int>(rng.uniform_int(num_classes - 1));
        e.perturb_label = draw >= e.label ? draw + 1 : draw;
        ++out.label_histogram[static_cast<std::size_t>(e.perturb_label)];
    }
    out.validate(num_classes);
    return out;
}

std::string transition_matrix_to_json(const TransitionMatrix& tm) {
    const std::size_t k = tm.num_classes();
    json body;
    body["k"] = k;
    json columns = json::array();
    for (std::size_t col = 0; col < k; ++col) {
        json column = json::array();
        for (std::size_t row = 0; row < k; ++row) column.push_back(tm.t.at(row, col));
        columns.push_back(std::move(column));
    }
    body["columns"] = std::move(columns);
    body["exemplars_per_class"] = tm.exemplars_per_class;
    body["oracle"] = tm.oracle_kind;
    return body.dump(2) + "\n";
}

TransitionMatrix transition_matrix_from_json(const std::string& text) {
    json body;
    try {
        body = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("transition matrix JSON: ") + e.what());
    }
    TransitionMatrix tm;
    const std::size_t k = body.at("k").get<std::size_t>();
    tm.t = Tensor({k, k});
    const auto& columns = body.at("columns");
    if (columns.size() != k)
        throw ParseError("expected " + std::to_string(k) + " columns, found " +
                         std::to_string(columns.size()));
    for (std::size_t col = 0; col < k; ++col) {
        const auto& column = columns[col];
        if (column.size() != k)
            throw ParseError("column " + std::to_string(col) + " has length " +
                             std::to_string(column.size()));
        for (std::size_t row = 0; row < k; ++row)
            tm.t.at(row, col) = column[row].get<double>();
    }
    tm.exemplars_per_class = body.at("exemplars_per_class").get<std::size_t>();
    tm.oracle_kind = body.at("oracle").get<std::string>();
    tm.validate();
    return tm;
}

void save_transition_matrix(const TransitionMatrix& tm, const std::filesystem::path& path) {
    write_text_atomic(path, transition_matrix_to_json(tm));
}

TransitionMatrix load_transition_matrix(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return transition_matrix_from_json(std::string(bytes.begin(), bytes.end()));
}

std::string perturb_map_to_json(const PerturbMap& map) {
    json body;
    body["tau"] = map.tau;
    body["histogram"] = map.label_histogram;
    json entries = json::array();
    for (const PerturbEntry& e : map.entries) {
        json entry;
        entry["index"] = e.sample_index;
        entry["label"] = e.label;
        entry["perturb_label"] = e.perturb_label;
        entry["relevance"] = e.relevance;
        entries.push_back(std::move(entry));
    }
    body["entries"] = std::move(entries);
    return body.dump(2) + "\n";
}

PerturbMap perturb_map_from_json(const std::string& text) {
    json body;
    try {
        body = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("perturb map JSON: ") + e.what());
    }
    PerturbMap map;
    map.tau = body.at("tau").get<double>();
    map.label_histogram = body.at("histogram").get<std::vector<std::size_t>>();
    for (const auto& entry : body.at("entries")) {
        PerturbEntry e;
        e.sample_index = entry.at("index").get<std::size_t>();
        e.label = entry.at("label").get<int>();
        e.perturb_label = entry.at("perturb_label").get<int>();
        e.relevance = entry.at("relevance").get<std::vector<double>>();
        map.entries.push_back(std::move(e));
    }
    map.validate(map.label_histogram.size());
    return map;
}

void save_perturb_map(const PerturbMap& map, const std::filesystem::path& path) {
    write_text_atomic(path, perturb_map_to_json(map));
}

PerturbMap load_perturb_map(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return perturb_map_from_json(std::string(bytes.begin(), bytes.end()));
}

} // namespace megu
