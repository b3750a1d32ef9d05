#pragma once

#include <filesystem>
#include <string>

#include "megu/config.hpp"

namespace megu::pipeline {

// Artifact layout under the run's output directory.
struct Paths {
    std::filesystem::path out;

    std::filesystem::path data_train() const { return out / "data_train.bin"; }
    std::filesystem::path data_test() const { return out / "data_test.bin"; }
    std::filesystem::path baseline() const { return out / "baseline.ckpt"; }
    std::filesystem::path matrix() const { return out / "matrix.json"; }
    std::filesystem::path perturb_map() const { return out / "perturb_map.json"; }
    std::filesystem::path noise_cache() const { return out / "noise.cache"; }
    std::filesystem::path model(const std::string& method) const {
        return out / ("model_" + method + ".ckpt");
    }
    std::filesystem::path run_dir(const std::string& method) const {
        return out / ("run_" + method);
    }
    std::filesystem::path report_json() const { return out / "report.json"; }
    std::filesystem::path report_txt() const { return out / "report.txt"; }
    std::filesystem::path predictions(const std::string& name) const {
        return out / ("preds_" + name + ".csv");
    }
    std::filesystem::path sweep_csv() const { return out / "sweep.csv"; }
    std::filesystem::path ablate_csv() const { return out / "ablate.csv"; }
    std::filesystem::path lock() const { return out / ".megu.lock"; }
};

// Held for the duration of one command; refuses to start while another
// writer owns the output directory.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& lock_path);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path path_;
};

struct DataBundle {
    Dataset train;
    Dataset test;
};

DataBundle load_data(const RunConfig& cfg, const Paths& paths);

// Stage entry points. Each validates its upstream artifacts, writes its
// outputs atomically, and prints a one-line summary to stdout.
void stage_pretrain(const RunConfig& cfg);
void stage_build_matrix(const RunConfig& cfg);
void stage_assign_labels(const RunConfig& cfg);
void stage_forge_noise(const RunConfig& cfg);
void stage_unlearn(const RunConfig& cfg, UnlearnMethod method);
void stage_evaluate(const RunConfig& cfg);
void stage_export_preds(const RunConfig& cfg);
bool stage_sweep(const RunConfig& cfg); // false when any cell failed
void stage_ablate(const RunConfig& cfg);
void stage_pipeline(const RunConfig& cfg);

} // namespace megu::pipeline
