#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "megu/dataset.hpp"
#include "megu/tensor.hpp"

namespace megu {

// One question answered by the remote expert: "does this instance show
// concept X?". The confidence is the mass on the affirmative answer.
struct PromptRecord {
    std::int64_t query_image_id = 0;
    std::string concept_label_text;
    double answer_confidence = 0.0; // in [0, 1]
};

// Concept-similarity oracle q(x, l) in [0,1]. Prototype and file kinds are
// deterministic and read-only; query is safe to call concurrently.
class Oracle {
public:
    virtual ~Oracle() = default;
    virtual double query(const Tensor& instance, std::int64_t instance_id,
                         int concept_index) const = 0;
    virtual std::string kind() const = 0;
};

// Deterministic stand-in for the remote expert: a logistic of the scaled
// cosine between the instance and the concept's prototype vector,
// logistic(scale * cos(x, p_l) + bias). Defaults give ~0.12 for orthogonal
// inputs and ~0.88 for a perfect prototype match.
class PrototypeOracle : public Oracle {
public:
    PrototypeOracle(Tensor prototypes, double scale = 4.0, double bias = -2.0);

    // Prototypes as per-class input means.
    static PrototypeOracle from_class_means(const Dataset& ds, double scale = 4.0,
                                            double bias = -2.0);

    double query(const Tensor& instance, std::int64_t instance_id,
                 int concept_index) const override;
    std::string kind() const override { return "prototype"; }

    std::size_t num_concepts() const { return prototypes_.dim(0); }

private:
    Tensor prototypes_; // [K, d]
    double scale_;
    double bias_;
};

// Precomputed per-(instance, concept) scores, e.g. cached outputs of a real
// expert. A query without a table entry is an error, never a default.
class FileOracle : public Oracle {
public:
    using Key = std::pair<std::int64_t, int>;

    explicit FileOracle(std::map<Key, double> scores);

    double query(const Tensor& instance, std::int64_t instance_id,
                 int concept_index) const override;
    std::string kind() const override { return "file"; }

    const std::map<Key, double>& scores() const { return scores_; }

private:
    std::map<Key, double> scores_;
};

// Score file: one record per line, "instance_id<TAB>concept<TAB>confidence".
FileOracle load_score_file(const std::filesystem::path& path);
void save_score_file(const FileOracle& oracle, const std::filesystem::path& path);

struct HttpOracleConfig {
    std::string endpoint;             // e.g. "http://127.0.0.1:8080"
    std::string route = "/similarity";
    int timeout_ms = 2000;
    int retry_budget = 2;             // retries after the first attempt
    int backoff_base_ms = 100;        // doubled per retry
    int max_inflight = 4;             // concurrent request cap
};

// Client for an external similarity service. Failures (timeout, non-2xx,
// malformed body) raise TransportError after exponential-backoff retries.
class HttpOracle : public Oracle {
public:
    HttpOracle(HttpOracleConfig config, std::vector<std::string> concept_names);

    double query(const Tensor& instance, std::int64_t instance_id,
                 int concept_index) const override;
    std::string kind() const override { return "http"; }

private:
    HttpOracleConfig config_;
    std::vector<std::string> concept_names_;
};

// Wire format of the similarity protocol, exposed for tests and for
// services implementing the other side. The request carries the tensor as
// base64 of 64-bit little-endian values plus its shape and the concept
// label text; the response is {"confidence": <real in [0,1]>}.
std::string make_similarity_request(const Tensor& instance, std::int64_t instance_id,
                                    const std::string& concept_text);
PromptRecord parse_similarity_response(const std::string& body, std::int64_t instance_id,
                                       const std::string& concept_text);

} // namespace megu
