#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "megu/pipeline.hpp"
#include "megu/serialize.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissingArtifact = 3;
constexpr int kExitRuntime = 4;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out;
    std::string seed;
};

megu::RunConfig resolve_config(const CommonArgs& args) {
    std::vector<std::string> overrides = args.overrides;
    if (!args.seed.empty()) overrides.push_back("seed=" + args.seed);
    if (!args.out.empty()) overrides.push_back("out=" + args.out);

    megu::RunConfig cfg =
        args.config_path.empty()
            ? megu::parse_run_config(megu::default_config_json(), overrides)
            : megu::load_run_config(args.config_path, overrides);

    if (cfg.out.empty()) {
        if (const char* root = std::getenv("MEGU_OUT"); root != nullptr && *root != '\0')
            cfg.out = std::filesystem::path(root);
    }
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Config file (JSON)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", args.overrides,
                    "Override a config key, e.g. --set guidance.tau=0.5 (repeatable)");
    cmd->add_option("--out", args.out, "Output directory");
    cmd->add_option("--seed", args.seed, "Master seed override");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MeGU: oracle-guided machine unlearning engine"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string unlearn_method;

    CLI::App* pretrain = app.add_subcommand("pretrain", "Generate data and train the baseline");
    CLI::App* build_matrix =
        app.add_subcommand("build-matrix", "Estimate the concept transition matrix");
    CLI::App* assign =
        app.add_subcommand("assign-labels", "Assign perturbing labels to the forget set");
    CLI::App* forge = app.add_subcommand("forge-noise", "Train and cache the noise pairs");
    CLI::App* unlearn = app.add_subcommand("unlearn", "Run an unlearning method");
    unlearn->add_option("--method", unlearn_method,
                        "megu | unsir | ft | retrain (default: config)");
    CLI::App* evaluate = app.add_subcommand("evaluate", "Score all models and write reports");
    CLI::App* export_preds =
        app.add_subcommand("export-preds", "Export per-sample logits as CSV");
    CLI::App* sweep = app.add_subcommand("sweep", "Grid over tau and alpha");
    CLI::App* ablate = app.add_subcommand("ablate", "Full vs RND vs no-feature-noise table");
    CLI::App* pipeline_cmd =
        app.add_subcommand("pipeline", "Run every stage in order and report");
    CLI::App* print_config =
        app.add_subcommand("print-config", "Print the resolved configuration");

    for (CLI::App* cmd : {pretrain, build_matrix, assign, forge, unlearn, evaluate,
                          export_preds, sweep, ablate, pipeline_cmd, print_config})
        add_common(cmd, args);

    CLI11_PARSE(app, argc, argv);

    try {
        const megu::RunConfig cfg = resolve_config(args);
        if (print_config->parsed()) {
            std::cout << cfg.to_json();
            return kExitOk;
        }

        megu::pipeline::Paths paths{cfg.out};
        megu::pipeline::DirectoryLock lock(paths.lock());

        if (pretrain->parsed()) {
            megu::pipeline::stage_pretrain(cfg);
        } else if (build_matrix->parsed()) {
            megu::pipeline::stage_build_matrix(cfg);
        } else if (assign->parsed()) {
            megu::pipeline::stage_assign_labels(cfg);
        } else if (forge->parsed()) {
            megu::pipeline::stage_forge_noise(cfg);
        } else if (unlearn->parsed()) {
            const megu::UnlearnMethod method = unlearn_method.empty()
                                                   ? cfg.unlearn.method
                                                   : megu::parse_method(unlearn_method);
            megu::pipeline::stage_unlearn(cfg, method);
        } else if (evaluate->parsed()) {
            megu::pipeline::stage_evaluate(cfg);
        } else if (export_preds->parsed()) {
            megu::pipeline::stage_export_preds(cfg);
        } else if (sweep->parsed()) {
            if (!megu::pipeline::stage_sweep(cfg)) return kExitRuntime;
        } else if (ablate->parsed()) {
            megu::pipeline::stage_ablate(cfg);
        } else if (pipeline_cmd->parsed()) {
            megu::pipeline::stage_pipeline(cfg);
        }
        return kExitOk;
    } catch (const megu::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const megu::MissingArtifactError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissingArtifact;
    } catch (const megu::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
