#include "megu/oracle.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "megu/serialize.hpp"

namespace megu {

namespace {

using nlohmann::json;

void require_confidence(double v, const std::string& where) {
    if (!(v >= 0.0 && v <= 1.0))
        throw DomainError("confidence " + std::to_string(v) + " outside [0,1] in " + where);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    const double num = dot(a, b);
    double na = 0.0, nb = 0.0;
    for (double v : a) na += v * v;
    for (double v : b) nb += v * v;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return num / std::sqrt(na * nb);
}

// Global in-flight cap for the http kind.
class InflightGuard {
public:
    InflightGuard(std::mutex& mu, std::condition_variable& cv, int& count, int limit)
        : mu_(mu), cv_(cv), count_(count) {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return count_ < limit; });
        ++count_;
    }
    ~InflightGuard() {
        {
            std::lock_guard lock(mu_);
            --count_;
        }
        cv_.notify_one();
    }

private:
    std::mutex& mu_;
    std::condition_variable& cv_;
    int& count_;
};

std::mutex g_inflight_mu;
std::condition_variable g_inflight_cv;
int g_inflight = 0;

} // namespace

PrototypeOracle::PrototypeOracle(Tensor prototypes, double scale, double bias)
    : prototypes_(std::move(prototypes)), scale_(scale), bias_(bias) {
    if (prototypes_.rank() != 2)
        throw ConfigError("prototype oracle expects a [K, d] prototype matrix");
}

PrototypeOracle PrototypeOracle::from_class_means(const Dataset& ds, double scale,
                                                  double bias) {
    const std::size_t k = ds.num_classes();
    Tensor protos({k, ds.dim()});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto src = ds.inputs.row(i);
        auto dst = protos.row(static_cast<std::size_t>(ds.labels[i]));
        for (std::size_t d = 0; d < src.size(); ++d) dst[d] += src[d];
        ++counts[static_cast<std::size_t>(ds.labels[i])];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0)
            throw DomainError("class " + std::to_string(c) + " has no samples");
        auto row = protos.row(c);
        for (double& v : row) v /= static_cast<double>(counts[c]);
    }
    return PrototypeOracle(std::move(protos), scale, bias);
}

double PrototypeOracle::query(const Tensor& instance, std::int64_t, int concept_index) const {
    if (concept_index < 0 || static_cast<std::size_t>(concept_index) >= num_concepts())
        throw DomainError("concept index " + std::to_string(concept_index) +
                          " outside [0, " + std::to_string(num_concepts()) + ")");
    const auto x = instance.data();
    const auto p = prototypes_.row(static_cast<std::size_t>(concept_index));
    if (x.size() != p.size())
        throw ShapeError("instance dim " + std::to_string(x.size()) +
                         " does not match prototype dim " + std::to_string(p.size()));
    const double z = scale_ * cosine(x, p) + bias_;
    return 1.0 / (1.0 + std::exp(-z));
}

FileOracle::FileOracle(std::map<Key, double> scores) : scores_(std::move(scores)) {
    for (const auto& [key, v] : scores_)
        require_confidence(v, "score table entry (" + std::to_string(key.first) + ", " +
                                  std::to_string(key.second) + ")");
}

double FileOracle::query(const Tensor&, std::int64_t instance_id, int concept_index) const {
    const auto it = scores_.find({instance_id, concept_index});
    if (it == scores_.end())
        throw LookupError("no score for instance " + std::to_string(instance_id) +
                          ", concept " + std::to_string(concept_index));
    return it->second;
}

FileOracle load_score_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingArtifactError("cannot open score file: " + path.string());
    std::map<FileOracle::Key, double> scores;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::int64_t id;
        int concept_index;
        double confidence;
        if (!(row >> id >> concept_index >> confidence))
            throw ParseError("malformed score record at line " + std::to_string(line_no) +
                             ": \"" + line + "\"");
        if (!(confidence >= 0.0 && confidence <= 1.0))
            throw ParseError("confidence " + std::to_string(confidence) +
                             " outside [0,1] at line " + std::to_string(line_no));
        const FileOracle::Key key{id, concept_index};
        if (scores.count(key))
            throw ParseError("duplicate key (" + std::to_string(id) + ", " +
                             std::to_string(concept_index) + ") at line " +
                             std::to_string(line_no));
        scores[key] = confidence;
    }
    return FileOracle(std::move(scores));
}

void save_score_file(const FileOracle& oracle, const std::filesystem::path& path) {
    std::ostringstream out;
    out.precision(17);
    for (const auto& [key, v] : oracle.scores())
        out << key.first << '\t' << key.second << '\t' << v << '\n';
    write_text_atomic(path, out.str());
}

std::string make_similarity_request(const Tensor& instance, std::int64_t instance_id,
                                    const std::string& concept_text) {
    ByteWriter w;
    w.write_f64_span(instance.data());
    json body;
    body["instance_id"] = instance_id;
    body["tensor_b64"] = base64_encode(w.bytes());
    body["shape"] = instance.shape();
    body["concept_text"] = concept_text;
    return body.dump();
}

PromptRecord parse_similarity_response(const std::string& body, std::int64_t instance_id,
                                       const std::string& concept_text) {
    json parsed;
    try {
        parsed = json::parse(body);
    } catch (const json::exception& e) {
        throw TransportError(std::string("malformed response body: ") + e.what());
    }
    if (!parsed.contains("confidence"))
        throw TransportError("response missing \"confidence\" field");
    if (!parsed["confidence"].is_number())
        throw TransportError("\"confidence\" is not a number: " + parsed["confidence"].dump());
    const double confidence = parsed["confidence"].get<double>();
    if (!(confidence >= 0.0 && confidence <= 1.0))
        throw TransportError("confidence " + std::to_string(confidence) + " outside [0,1]");
    return PromptRecord{instance_id, concept_text, confidence};
}

HttpOracle::HttpOracle(HttpOracleConfig config, std::vector<std::string> concept_names)
    : config_(std::move(config)), concept_names_(std::move(concept_names)) {
    if (config_.endpoint.empty())
        throw ConfigError("http oracle requires an endpoint");
    if (config_.retry_budget < 0)
        throw ConfigError("retry budget must be nonnegative");
}

double HttpOracle::query(const Tensor& instance, std::int64_t instance_id,
                         int concept_index) const {
    if (concept_index < 0 ||
        static_cast<std::size_t>(concept_index) >= concept_names_.size())
        throw DomainError("concept index " + std::to_string(concept_index) +
                          " outside [0, " + std::to_string(concept_names_.size()) + ")");
    const std::string& text = concept_names_[static_cast<std::size_t>(concept_index)];
    const std::string request = make_similarity_request(instance, instance_id, text);

    InflightGuard guard(g_inflight_mu, g_inflight_cv, g_inflight, config_.max_inflight);

    std::string last_failure = "no attempt made";
    for (int attempt = 0; attempt <= config_.retry_budget; ++attempt) {
        if (attempt > 0) {
            const auto delay = std::chrono::milliseconds(
                static_cast<long long>(config_.backoff_base_ms) << (attempt - 1));
            std::this_thread::sleep_for(delay);
        }
        httplib::Client client(config_.endpoint);
        client.set_connection_timeout(0, config_.timeout_ms * 1000);
        client.set_read_timeout(0, config_.timeout_ms * 1000);
        auto res = client.Post(config_.route, request, "application/json");
        if (!res) {
            last_failure = "connection failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            last_failure = "HTTP status " + std::to_string(res->status);
            continue;
        }
        // A 2xx with a malformed body is a protocol violation, not a
        // transient fault; surface it without burning retries.
        return parse_similarity_response(res->body, instance_id, text).answer_confidence;
    }
    throw TransportError("similarity request for instance " + std::to_string(instance_id) +
                         ", concept \"" + text + "\" failed after " +
                         std::to_string(config_.retry_budget) + " retries; last error: " +
                         last_failure);
}

} // namespace megu
