#include "megu/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "megu/serialize.hpp"
#include "megu/sweep.hpp"

namespace megu::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

void require_artifact(const std::filesystem::path& path, const std::string& producer) {
    if (!std::filesystem::exists(path))
        throw MissingArtifactError("missing artifact " + path.string() + "; run `megu " +
                                   producer + "` first");
}

// Read a run's timing.json into a report's timings, if present.
std::map<std::string, double> read_timings(const std::filesystem::path& path) {
    std::map<std::string, double> out;
    if (!std::filesystem::exists(path)) return out;
    try {
        const auto bytes = read_file(path);
        const auto body = nlohmann::json::parse(std::string(bytes.begin(), bytes.end()));
        for (const auto& [phase, secs] : body.items()) out[phase] = secs.get<double>();
    } catch (...) {
        // Timing files are informational; a damaged one never fails a stage.
    }
    return out;
}

} // namespace

DirectoryLock::DirectoryLock(const std::filesystem::path& lock_path) : path_(lock_path) {
    if (path_.has_parent_path())
        std::filesystem::create_directories(path_.parent_path());
    std::ofstream probe(path_, std::ios::out | std::ios::app);
    // std::ofstream cannot express O_EXCL; test-and-create is enough for the
    // single-host, non-adversarial writers this guards against.
    if (std::filesystem::exists(path_) && std::filesystem::file_size(path_) > 0)
        throw Error("output directory is locked by another command (" + path_.string() +
                    "); remove the lock file if that command is gone");
    probe << "locked\n";
}

DirectoryLock::~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
}

DataBundle load_data(const RunConfig& cfg, const Paths& paths) {
    if (cfg.dataset.kind == "file")
        return {load_dataset(cfg.dataset.train_path), load_dataset(cfg.dataset.test_path)};
    require_artifact(paths.data_train(), "pretrain");
    require_artifact(paths.data_test(), "pretrain");
    return {load_dataset(paths.data_train()), load_dataset(paths.data_test())};
}

void stage_pretrain(const RunConfig& cfg) {
    const Paths paths{cfg.out};
    const auto start = Clock::now();

    DataBundle data = [&] {
        if (cfg.dataset.kind == "file")
            return DataBundle{load_dataset(cfg.dataset.train_path),
                              load_dataset(cfg.dataset.test_path)};
        SyntheticData gen = gen_synthetic(cfg.dataset.synthetic, cfg.seed);
        save_dataset(gen.train, paths.data_train());
        save_dataset(gen.test, paths.data_test());
        return DataBundle{std::move(gen.train), std::move(gen.test)};
    }();

    std::vector<std::size_t> all(data.train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const Mlp model = train_classifier(data.train, all, cfg.hidden_dims, cfg.pretrain);
    save_checkpoint(model, paths.baseline());

    std::vector<int> test_labels = data.test.labels;
    const double test_acc = accuracy(model, data.test.inputs, test_labels);
    const double secs =
        std::chrono::duration<double>(Clock::now() - start).count();
    write_text_atomic(paths.run_dir("pretrain") / "timing.json",
                      "{\"train\": " + std::to_string(secs) + "}\n");
    std::cout << "pretrain: wrote " << paths.baseline().string() << " (test accuracy "
              << test_acc << "%)\n";
}

void stage_build_matrix(const RunConfig& cfg) {
    const Paths paths{cfg.out};
    const DataBundle data = load_data(cfg, paths);
    const auto oracle = make_oracle(cfg, data.train);
    const TransitionMatrix tm = build_transition_matrix(
        *oracle, data.train, cfg.guidance.exemplars_per_class, cfg.seed);
    save_transition_matrix(tm, paths.matrix());
    std::cout << "build-matrix: wrote " << paths.matrix().string() << " (K="
              << tm.num_classes() << ", oracle=" << tm.oracle_kind << ")\n";
}

void stage_assign_labels(const RunConfig& cfg) {
    const Paths paths{cfg.out};
    require_artifact(paths.baseline(), "pretrain");
    require_artifact(paths.matrix(), "build-matrix");
    const DataBundle data = load_data(cfg, paths);
    const Mlp model = load_checkpoint(paths.baseline());
    const TransitionMatrix tm = load_transition_matrix(paths.matrix());
    const SplitResult split = split_task(data.train, cfg.task);
    const PerturbMap map =
        assign_all(model, tm, data.train, split.forget_set, cfg.guidance.tau);
    save_perturb_map(map, paths.perturb_map());
    std::size_t distinct = 0;
    for (std::size_t c : map.label_histogram) distinct += c > 0 ? 1 : 0;
    std::cout << "assign-labels: wrote " << paths.perturb_map().string() << " ("
              << map.entries.size() << " samples, " << distinct
              << " distinct perturbing labels)\n";
}

void stage_forge_noise(const RunConfig& cfg) {
    const Paths paths{cfg.out};
    require_artifact(paths.baseline(), "pretrain");
    require_artifact(paths.perturb_map(), "assign-labels");
    const Mlp model = load_checkpoint(paths.baseline());
    const PerturbMap map = load_perturb_map(paths.perturb_map());
    // Forge for the assignment the unlearning run will actually use.
    const PerturbMap effective = effective_perturb_map(
        map, map.label_histogram.size(), cfg.unlearn);
    const NoiseSet set = forge_pairs(model, effective, cfg.noise);
    cache_store(set, paths.noise_cache());
    std::cout << "forge-noise: wrote " << paths.noise_cache().string() << " ("
              << set.pairs.size() << " pairs, batch " << cfg.noise.batch << ")\n";
}

void stage_unlearn(const RunConfig& cfg, UnlearnMethod method) {
    const Paths paths{cfg.out};
    const DataBundle data = load_data(cfg, paths);
    const SplitResult split = split_task(data.train, cfg.task);
    UnlearnConfig ucfg = cfg.unlearn;
    ucfg.method = method;

    const std::string name = method_name(method);

    if (method == UnlearnMethod::Retrain) {
        TrainConfig retrain_cfg = cfg.pretrain;
        retrain_cfg.seed = mix_seed(cfg.seed, 0x601d);
        const auto start = Clock::now();
        Mlp gold = retrain_gold(data.train, split, cfg.hidden_dims, retrain_cfg);
        UnlearnRun run{model_hash(Mlp(gold.layer_dims(), retrain_cfg.seed)), std::move(gold),
                       {}, {}, UnlearnMethod::Retrain};
        run.phase_seconds.emplace_back(
            "retrain", std::chrono::duration<double>(Clock::now() - start).count());
        save_checkpoint(run.model, paths.model(name));
        write_run_artifacts(run, paths.run_dir(name), cfg.to_json());
        save_checkpoint(Mlp(run.model.layer_dims(), retrain_cfg.seed),
                        paths.run_dir(name) / "initial.ckpt");
        std::cout << "unlearn[retrain]: wrote " << paths.model(name).string() << "\n";
        return;
    }

    require_artifact(paths.baseline(), "pretrain");
    const Mlp model = load_checkpoint(paths.baseline());

    UnlearnRun run = [&] {
        if (method == UnlearnMethod::Megu) {
            require_artifact(paths.perturb_map(), "assign-labels");
            const PerturbMap map = load_perturb_map(paths.perturb_map());
            NoiseSet pairs;
            if (!ucfg.no_feature_noise) {
                require_artifact(paths.noise_cache(), "forge-noise");
                pairs = cache_load(paths.noise_cache(), model_hash(model)).set;
            } else {
                pairs.model_digest = model_hash(model);
                pairs.config = cfg.noise;
            }
            return megu_unlearn(model, data.train, split, map, pairs, ucfg);
        }
        if (method == UnlearnMethod::Unsir)
            return unsir_unlearn(model, data.train, split, ucfg, cfg.noise);
        return ft_baseline(model, data.train, split, ucfg);
    }();

    save_checkpoint(run.model, paths.model(name));
    write_run_artifacts(run, paths.run_dir(name), cfg.to_json());
    std::filesystem::copy_file(paths.baseline(), paths.run_dir(name) / "initial.ckpt",
                               std::filesystem::copy_options::overwrite_existing);
    std::cout << "unlearn[" << name << "]: wrote " << paths.model(name).string() << "\n";
}

void stage_evaluate(const RunConfig& cfg) {
    const Paths paths{cfg.out};
    require_artifact(paths.baseline(), "pretrain");
    const DataBundle data = load_data(cfg, paths);
    const SplitResult split = split_task(data.train, cfg.task);

    std::vector<std::pair<std::string, Mlp>> models;
    models.emplace_back("baseline", load_checkpoint(paths.baseline()));
    for (const char* name : {"retrain", "megu", "unsir", "ft"}) {
        if (std::filesystem::exists(paths.model(name)))
            models.emplace_back(name, load_checkpoint(paths.model(name)));
    }
    if (models.size() == 1)
        throw MissingArtifactError("no unlearned models found under " + cfg.out.string() +
                                   "; run `megu unlearn` first");

    std::vector<ModelEntry> entries;
    for (const auto& [name, model] : models) entries.push_back({name, &model});

    EvalOptions options;
    options.mia_members = cfg.mia_members;
    options.seed = cfg.seed;
    std::vector<EvalReport> reports =
        full_report(entries, data.train, data.test, split, cfg.task, options);

    for (EvalReport& report : reports) {
        const auto dir = report.method == "baseline" ? paths.run_dir("pretrain")
                                                     : paths.run_dir(report.method);
        report.timings = read_timings(dir / "timing.json");
    }

    write_text_atomic(paths.report_json(), reports_to_json(reports));
    write_text_atomic(paths.report_txt(), reports_to_table(reports));
    std::cout << "evaluate: wrote " << paths.report_json().string() << "\n"
              << reports_to_table(reports);
}

void stage_export_preds(const RunConfig& cfg) {
    const Paths paths{cfg.out};
    require_artifact(paths.baseline(), "pretrain");
    const DataBundle data = load_data(cfg, paths);
    std::size_t written = 0;
    export_predictions(load_checkpoint(paths.baseline()), data.test,
                       paths.predictions("baseline"));
    ++written;
    for (const char* name : {"retrain", "megu", "unsir", "ft"}) {
        if (!std::filesystem::exists(paths.model(name))) continue;
        export_predictions(load_checkpoint(paths.model(name)), data.test,
                           paths.predictions(name));
        ++written;
    }
    std::cout << "export-preds: wrote " << written << " prediction files under "
              << cfg.out.string() << "\n";
}

bool stage_sweep(const RunConfig& cfg) {
    const Paths paths{cfg.out};
    require_artifact(paths.baseline(), "pretrain");
    require_artifact(paths.matrix(), "build-matrix");
    const DataBundle data = load_data(cfg, paths);
    const Mlp baseline = load_checkpoint(paths.baseline());
    const TransitionMatrix tm = load_transition_matrix(paths.matrix());
    const SplitResult split = split_task(data.train, cfg.task);

    SweepPlan plan;
    plan.taus = cfg.sweep.taus;
    plan.alphas = cfg.sweep.alphas;
    plan.seeds_per_cell = cfg.sweep.seeds;
    plan.base_seed = cfg.seed;
    plan.base = cfg.unlearn;
    plan.noise = cfg.noise;
    plan.eval.mia_members = cfg.mia_members;
    plan.workers = cfg.sweep.workers;

    const SweepResult result =
        run_sweep(plan, baseline, tm, data.train, data.test, split, cfg.task);
    write_text_atomic(paths.sweep_csv(), sweep_csv(result));
    for (const std::string& failure : result.failures)
        std::cerr << "sweep cell failed: " << failure << "\n";
    std::cout << "sweep: wrote " << paths.sweep_csv().string() << " ("
              << result.cells.size() << " cells, " << result.failures.size()
              << " failures)\n";
    return result.failures.empty();
}

void stage_ablate(const RunConfig& cfg) {
    const Paths paths{cfg.out};
    require_artifact(paths.baseline(), "pretrain");
    require_artifact(paths.matrix(), "build-matrix");
    require_artifact(paths.model("retrain"), "unlearn --set unlearn.method=retrain");
    const DataBundle data = load_data(cfg, paths);
    const Mlp baseline = load_checkpoint(paths.baseline());
    const Mlp gold = load_checkpoint(paths.model("retrain"));
    const TransitionMatrix tm = load_transition_matrix(paths.matrix());
    const SplitResult split = split_task(data.train, cfg.task);

    UnlearnConfig base = cfg.unlearn;
    base.tau = cfg.guidance.tau;
    EvalOptions eval;
    eval.mia_members = cfg.mia_members;
    eval.seed = cfg.seed;
    const auto rows = run_ablations(base, cfg.noise, eval, baseline, gold, tm, data.train,
                                    data.test, split, cfg.task);
    write_text_atomic(paths.ablate_csv(), ablation_csv(rows));
    std::cout << "ablate: wrote " << paths.ablate_csv().string() << " (" << rows.size()
              << " rows)\n";
}

void stage_pipeline(const RunConfig& cfg) {
    stage_pretrain(cfg);
    stage_build_matrix(cfg);
    if (cfg.unlearn.method == UnlearnMethod::Megu) {
        stage_assign_labels(cfg);
        if (!cfg.unlearn.no_feature_noise) stage_forge_noise(cfg);
    }
    stage_unlearn(cfg, cfg.unlearn.method);
    if (cfg.unlearn.method != UnlearnMethod::Retrain)
        stage_unlearn(cfg, UnlearnMethod::Retrain);
    stage_evaluate(cfg);
}

} // namespace megu::pipeline
