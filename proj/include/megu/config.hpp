#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "megu/dataset.hpp"
#include "megu/eval.hpp"
#include "megu/noise.hpp"
#include "megu/oracle.hpp"
#include "megu/unlearn.hpp"

namespace megu {

struct DatasetSource {
    std::string kind = "synthetic"; // synthetic | file
    SyntheticSpec synthetic;
    std::filesystem::path train_path;
    std::filesystem::path test_path;
};

struct OracleSpec {
    std::string kind = "prototype"; // prototype | file | http
    double scale = 4.0;
    double bias = -2.0;
    std::filesystem::path score_path;
    HttpOracleConfig http;
};

struct GuidanceSpec {
    double tau = 0.3;
    std::size_t exemplars_per_class = 10;
};

struct SweepSpec {
    std::vector<double> taus = {0.2, 0.3, 0.5};
    std::vector<double> alphas = {0.3, 0.7, 0.9};
    std::size_t seeds = 3;
    std::size_t workers = 0;
};

// Everything a command needs: dataset source, model, oracle, guidance,
// noise, unlearning, eval and sweep settings, the master seed, and the
// output directory. One stage's inputs are exactly this plus the named
// artifact files.
struct RunConfig {
    std::uint64_t seed = 0;
    bool seed_set = false; // wall-clock seeding is not a thing here
    std::filesystem::path out;

    DatasetSource dataset;
    std::vector<std::size_t> hidden_dims = {64, 64};
    TrainConfig pretrain;
    OracleSpec oracle;
    GuidanceSpec guidance;
    NoiseConfig noise;
    TaskSpec task;
    bool task_seed_set = false;
    UnlearnConfig unlearn;
    std::size_t mia_members = 400;
    SweepSpec sweep;

    // Collects every violation; throws one ConfigError listing them all.
    void validate() const;

    // Canonical JSON snapshot of the resolved configuration.
    std::string to_json() const;
};

// Parse a config document. `overrides` are dotted-path key=value pairs
// ("guidance.tau=0.5"); a handful of bare aliases (tau, alpha, method,
// target, seed, out) resolve to their canonical paths.
RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

// Built-in defaults (synthetic K=8 task), usable without a config file.
std::string default_config_json();

std::unique_ptr<Oracle> make_oracle(const RunConfig& cfg, const Dataset& train);

} // namespace megu
