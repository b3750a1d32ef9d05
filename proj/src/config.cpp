#include "megu/config.hpp"

#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "megu/guidance.hpp"
#include "megu/serialize.hpp"

namespace megu {

namespace {

using nlohmann::json;

const std::map<std::string, std::string> kAliases = {
    {"tau", "guidance.tau"},       {"alpha", "unlearn.alpha"},
    {"method", "unlearn.method"},  {"target", "task.target"},
    {"seed", "seed"},              {"out", "out"},
};

// Known keys per object, for typo detection.
const std::map<std::string, std::set<std::string>> kKnownKeys = {
    {"", {"seed", "out", "dataset", "model", "pretrain", "oracle", "guidance", "noise",
          "task", "unlearn", "eval", "sweep"}},
    {"dataset", {"kind", "classes", "dim", "per_class_train", "per_class_test",
                 "unique_patterns", "noise_std", "coarse_groups", "plan", "train_path",
                 "test_path"}},
    {"model", {"hidden"}},
    {"pretrain", {"epochs", "learning_rate", "batch_size", "optimizer"}},
    {"oracle", {"kind", "scale", "bias", "score_path", "endpoint", "route", "timeout_ms",
                "retry_budget", "backoff_base_ms", "max_inflight"}},
    {"guidance", {"tau", "exemplars_per_class"}},
    {"noise", {"steps", "learning_rate", "lambda", "batch"}},
    {"task", {"kind", "target", "count", "seed"}},
    {"unlearn", {"method", "epochs", "learning_rate", "batch_size", "alpha",
                 "finetune_retain_count", "impair_epochs", "repair_epochs",
                 "random_labels", "no_feature_noise"}},
    {"eval", {"mia_members"}},
    {"sweep", {"taus", "alphas", "seeds", "workers"}},
};

void check_keys(const json& node, const std::string& scope,
                std::vector<std::string>& violations) {
    const auto it = kKnownKeys.find(scope);
    if (it == kKnownKeys.end() || !node.is_object()) return;
    for (const auto& [key, value] : node.items()) {
        if (!it->second.count(key)) {
            violations.push_back("unknown config key \"" +
                                 (scope.empty() ? key : scope + "." + key) + "\"");
            continue;
        }
        if (value.is_object()) check_keys(value, scope.empty() ? key : scope + "." + key,
                                          violations);
    }
}

void apply_set(json& root, const std::string& setting) {
    const auto eq = setting.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got \"" + setting + "\"");
    std::string path = setting.substr(0, eq);
    const std::string raw = setting.substr(eq + 1);
    if (const auto alias = kAliases.find(path); alias != kAliases.end())
        path = alias->second;

    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw; // unquoted strings are fine
    }

    json* node = &root;
    std::size_t begin = 0;
    while (true) {
        const std::size_t dot = path.find('.', begin);
        const std::string part = path.substr(begin, dot - begin);
        if (part.empty())
            throw ConfigError("malformed --set path \"" + path + "\"");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        begin = dot + 1;
    }
}

template <typename T>
void read_to(const json& node, const char* key, T& out) {
    if (node.contains(key)) out = node.at(key).get<T>();
}

std::vector<SharedGroup> plan_from_json(const json& plan) {
    std::vector<SharedGroup> out;
    for (const auto& entry : plan) {
        if (!entry.is_array() || entry.size() != 3)
            throw ConfigError("overlap plan entries must be [class_a, class_b, count]");
        out.push_back({entry[0].get<std::size_t>(), entry[1].get<std::size_t>(),
                       entry[2].get<std::size_t>()});
    }
    return out;
}

} // namespace

std::string default_config_json() {
    json root;
    root["seed"] = 1;
    root["dataset"] = {{"kind", "synthetic"},     {"classes", 8},
                       {"dim", 40},               {"per_class_train", 150},
                       {"per_class_test", 50},    {"unique_patterns", 2},
                       {"noise_std", 0.3},        {"coarse_groups", 0},
                       {"plan", "default"}};
    root["model"] = {{"hidden", {64, 64}}};
    root["pretrain"] = {{"epochs", 40},
                        {"learning_rate", 3e-3},
                        {"batch_size", 32},
                        {"optimizer", "adam"}};
    root["oracle"] = {{"kind", "prototype"}, {"scale", 4.0}, {"bias", -2.0}};
    root["guidance"] = {{"tau", 0.3}, {"exemplars_per_class", 10}};
    root["noise"] = {{"steps", 200}, {"learning_rate", 0.1}, {"lambda", 0.1}, {"batch", 32}};
    root["task"] = {{"kind", "class_wise"}, {"target", 2}, {"count", 100}};
    root["unlearn"] = {{"method", "megu"},
                       {"epochs", 3},
                       {"learning_rate", 3e-4},
                       {"batch_size", 32},
                       {"alpha", 0.7},
                       {"finetune_retain_count", 600},
                       {"impair_epochs", 1},
                       {"repair_epochs", 1},
                       {"random_labels", false},
                       {"no_feature_noise", false}};
    root["eval"] = {{"mia_members", 400}};
    root["sweep"] = {{"taus", {0.2, 0.3, 0.5}}, {"alphas", {0.3, 0.7, 0.9}}, {"seeds", 3}};
    return root.dump(2) + "\n";
}

RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");
    for (const std::string& setting : overrides) apply_set(root, setting);

    std::vector<std::string> violations;
    check_keys(root, "", violations);

    RunConfig cfg;
    if (root.contains("seed")) {
        cfg.seed = root.at("seed").get<std::uint64_t>();
        cfg.seed_set = true;
    }
    if (root.contains("out")) cfg.out = root.at("out").get<std::string>();

    if (root.contains("dataset")) {
        const json& d = root.at("dataset");
        read_to(d, "kind", cfg.dataset.kind);
        read_to(d, "classes", cfg.dataset.synthetic.num_classes);
        read_to(d, "dim", cfg.dataset.synthetic.dim);
        read_to(d, "per_class_train", cfg.dataset.synthetic.per_class);
        read_to(d, "per_class_test", cfg.dataset.synthetic.per_class_test);
        read_to(d, "unique_patterns", cfg.dataset.synthetic.unique_patterns);
        read_to(d, "noise_std", cfg.dataset.synthetic.noise_std);
        read_to(d, "coarse_groups", cfg.dataset.synthetic.coarse_groups);
        if (d.contains("plan")) {
            if (d.at("plan").is_string()) {
                const std::string name = d.at("plan").get<std::string>();
                if (name == "default")
                    cfg.dataset.synthetic.overlap_plan = SyntheticSpec::default_plan_k8();
                else
                    violations.push_back("unknown overlap plan \"" + name + "\"");
            } else {
                cfg.dataset.synthetic.overlap_plan = plan_from_json(d.at("plan"));
            }
        } else if (cfg.dataset.kind == "synthetic") {
            cfg.dataset.synthetic.overlap_plan = SyntheticSpec::default_plan_k8();
        }
        if (d.contains("train_path"))
            cfg.dataset.train_path = d.at("train_path").get<std::string>();
        if (d.contains("test_path"))
            cfg.dataset.test_path = d.at("test_path").get<std::string>();
    } else {
        cfg.dataset.synthetic.overlap_plan = SyntheticSpec::default_plan_k8();
    }

    if (root.contains("model")) read_to(root.at("model"), "hidden", cfg.hidden_dims);

    if (root.contains("pretrain")) {
        const json& p = root.at("pretrain");
        read_to(p, "epochs", cfg.pretrain.epochs);
        read_to(p, "learning_rate", cfg.pretrain.learning_rate);
        read_to(p, "batch_size", cfg.pretrain.batch_size);
        if (p.contains("optimizer")) {
            const std::string name = p.at("optimizer").get<std::string>();
            if (name == "adam")
                cfg.pretrain.optimizer = OptimizerKind::Adam;
            else if (name == "sgd")
                cfg.pretrain.optimizer = OptimizerKind::Sgd;
            else
                violations.push_back("unknown optimizer \"" + name + "\"");
        }
    }

    if (root.contains("oracle")) {
        const json& o = root.at("oracle");
        read_to(o, "kind", cfg.oracle.kind);
        read_to(o, "scale", cfg.oracle.scale);
        read_to(o, "bias", cfg.oracle.bias);
        if (o.contains("score_path"))
            cfg.oracle.score_path = o.at("score_path").get<std::string>();
        read_to(o, "endpoint", cfg.oracle.http.endpoint);
        read_to(o, "route", cfg.oracle.http.route);
        read_to(o, "timeout_ms", cfg.oracle.http.timeout_ms);
        read_to(o, "retry_budget", cfg.oracle.http.retry_budget);
        read_to(o, "backoff_base_ms", cfg.oracle.http.backoff_base_ms);
        read_to(o, "max_inflight", cfg.oracle.http.max_inflight);
    }

    if (root.contains("guidance")) {
        read_to(root.at("guidance"), "tau", cfg.guidance.tau);
        read_to(root.at("guidance"), "exemplars_per_class",
                cfg.guidance.exemplars_per_class);
    }

    if (root.contains("noise")) {
        const json& n = root.at("noise");
        read_to(n, "steps", cfg.noise.steps);
        read_to(n, "learning_rate", cfg.noise.learning_rate);
        read_to(n, "lambda", cfg.noise.lambda_reg);
        read_to(n, "batch", cfg.noise.batch);
    }

    if (root.contains("task")) {
        const json& t = root.at("task");
        if (t.contains("kind")) {
            try {
                cfg.task.kind = parse_task_kind(t.at("kind").get<std::string>());
            } catch (const ConfigError& e) {
                violations.push_back(e.what());
            }
        }
        read_to(t, "target", cfg.task.target);
        read_to(t, "count", cfg.task.count);
        if (t.contains("seed")) {
            cfg.task.seed = t.at("seed").get<std::uint64_t>();
            cfg.task_seed_set = true;
        }
    }

    if (root.contains("unlearn")) {
        const json& u = root.at("unlearn");
        if (u.contains("method")) {
            try {
                cfg.unlearn.method = parse_method(u.at("method").get<std::string>());
            } catch (const ConfigError& e) {
                violations.push_back(e.what());
            }
        }
        read_to(u, "epochs", cfg.unlearn.epochs);
        read_to(u, "learning_rate", cfg.unlearn.learning_rate);
        read_to(u, "batch_size", cfg.unlearn.batch_size);
        read_to(u, "alpha", cfg.unlearn.alpha);
        read_to(u, "finetune_retain_count", cfg.unlearn.finetune_retain_count);
        read_to(u, "impair_epochs", cfg.unlearn.impair_epochs);
        read_to(u, "repair_epochs", cfg.unlearn.repair_epochs);
        read_to(u, "random_labels", cfg.unlearn.random_labels);
        read_to(u, "no_feature_noise", cfg.unlearn.no_feature_noise);
    }
    cfg.unlearn.tau = cfg.guidance.tau;

    if (root.contains("eval")) read_to(root.at("eval"), "mia_members", cfg.mia_members);

    if (root.contains("sweep")) {
        const json& s = root.at("sweep");
        read_to(s, "taus", cfg.sweep.taus);
        read_to(s, "alphas", cfg.sweep.alphas);
        read_to(s, "seeds", cfg.sweep.seeds);
        read_to(s, "workers", cfg.sweep.workers);
    }

    if (!cfg.task_seed_set) cfg.task.seed = cfg.seed;
    cfg.pretrain.seed = cfg.seed;
    cfg.noise.seed = mix_seed(cfg.seed, 0x5112);
    cfg.unlearn.seed = cfg.seed;

    if (!violations.empty()) {
        std::string msg = "config errors:";
        for (const std::string& v : violations) msg += "\n  - " + v;
        throw ConfigError(msg);
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
    const auto bytes = read_file(path);
    return parse_run_config(std::string(bytes.begin(), bytes.end()), overrides);
}

void RunConfig::validate() const {
    std::vector<std::string> violations;
    if (!seed_set)
        violations.push_back("seed is mandatory (wall-clock seeding is not supported)");
    if (out.empty())
        violations.push_back("output directory missing (config \"out\", --out, or MEGU_OUT)");

    std::size_t k = 0;
    if (dataset.kind == "synthetic") {
        k = dataset.synthetic.num_classes;
        std::size_t shared = 0;
        for (const SharedGroup& g : dataset.synthetic.overlap_plan) shared += g.count;
        const std::size_t need = k * dataset.synthetic.unique_patterns + shared;
        if (need > dataset.synthetic.dim)
            violations.push_back("overlap plan needs " + std::to_string(need) +
                                 " basis vectors but dim is " +
                                 std::to_string(dataset.synthetic.dim));
    } else if (dataset.kind == "file") {
        if (dataset.train_path.empty() || !std::filesystem::exists(dataset.train_path))
            violations.push_back("dataset.train_path does not exist: " +
                                 dataset.train_path.string());
        if (dataset.test_path.empty() || !std::filesystem::exists(dataset.test_path))
            violations.push_back("dataset.test_path does not exist: " +
                                 dataset.test_path.string());
    } else {
        violations.push_back("dataset.kind must be \"synthetic\" or \"file\"");
    }

    if (hidden_dims.empty()) violations.push_back("model.hidden must not be empty");
    if (pretrain.epochs < 1) violations.push_back("pretrain.epochs must be >= 1");
    if (!(pretrain.learning_rate > 0.0))
        violations.push_back("pretrain.learning_rate must be positive");

    if (oracle.kind == "file") {
        if (oracle.score_path.empty() || !std::filesystem::exists(oracle.score_path))
            violations.push_back("oracle.score_path does not exist: " +
                                 oracle.score_path.string());
    } else if (oracle.kind == "http") {
        if (oracle.http.endpoint.empty())
            violations.push_back("oracle.endpoint required for the http oracle");
    } else if (oracle.kind != "prototype") {
        violations.push_back("oracle.kind must be prototype, file, or http");
    }

    if (!(guidance.tau > 0.0 && guidance.tau < 1.0)) {
        violations.push_back("guidance.tau must lie in (0,1)");
    } else if (k > 0) {
        try {
            perturb_rank(k, guidance.tau);
        } catch (const ConfigError& e) {
            violations.push_back(e.what());
        }
    }
    if (guidance.exemplars_per_class < 1)
        violations.push_back("guidance.exemplars_per_class must be >= 1");

    try {
        noise.validate();
    } catch (const ConfigError& e) {
        violations.push_back(e.what());
    }
    try {
        unlearn.validate();
    } catch (const ConfigError& e) {
        violations.push_back(e.what());
    }

    if (k > 0 && task.kind != TaskKind::Random &&
        (task.target < 0 || static_cast<std::size_t>(task.target) >= k))
        violations.push_back("task.target " + std::to_string(task.target) +
                             " outside [0, " + std::to_string(k) + ")");
    if (task.kind == TaskKind::SubClass && dataset.kind == "synthetic" &&
        dataset.synthetic.coarse_groups == 0)
        violations.push_back("sub_class task needs dataset.coarse_groups > 0");
    if (task.kind == TaskKind::Random && task.count == 0)
        violations.push_back("task.count must be positive for random tasks");

    if (mia_members < 1) violations.push_back("eval.mia_members must be >= 1");

    if (!violations.empty()) {
        std::string msg = "config errors:";
        for (const std::string& v : violations) msg += "\n  - " + v;
        throw ConfigError(msg);
    }
}

std::string RunConfig::to_json() const {
    json root;
    root["seed"] = seed;
    root["out"] = out.string();
    json d;
    d["kind"] = dataset.kind;
    if (dataset.kind == "synthetic") {
        d["classes"] = dataset.synthetic.num_classes;
        d["dim"] = dataset.synthetic.dim;
        d["per_class_train"] = dataset.synthetic.per_class;
        d["per_class_test"] = dataset.synthetic.per_class_test;
        d["unique_patterns"] = dataset.synthetic.unique_patterns;
        d["noise_std"] = dataset.synthetic.noise_std;
        d["coarse_groups"] = dataset.synthetic.coarse_groups;
        json plan = json::array();
        for (const SharedGroup& g : dataset.synthetic.overlap_plan)
            plan.push_back({g.class_a, g.class_b, g.count});
        d["plan"] = std::move(plan);
    } else {
        d["train_path"] = dataset.train_path.string();
        d["test_path"] = dataset.test_path.string();
    }
    root["dataset"] = std::move(d);
    root["model"] = {{"hidden", hidden_dims}};
    root["pretrain"] = {
        {"epochs", pretrain.epochs},
        {"learning_rate", pretrain.learning_rate},
        {"batch_size", pretrain.batch_size},
        {"optimizer", pretrain.optimizer == OptimizerKind::Adam ? "adam" : "sgd"}};
    json o;
    o["kind"] = oracle.kind;
    if (oracle.kind == "prototype") {
        o["scale"] = oracle.scale;
        o["bias"] = oracle.bias;
    } else if (oracle.kind == "file") {
        o["score_path"] = oracle.score_path.string();
    } else {
        o["endpoint"] = oracle.http.endpoint;
        o["route"] = oracle.http.route;
        o["timeout_ms"] = oracle.http.timeout_ms;
        o["retry_budget"] = oracle.http.retry_budget;
        o["backoff_base_ms"] = oracle.http.backoff_base_ms;
        o["max_inflight"] = oracle.http.max_inflight;
    }
    root["oracle"] = std::move(o);
    root["guidance"] = {{"tau", guidance.tau},
                        {"exemplars_per_class", guidance.exemplars_per_class}};
    root["noise"] = {{"steps", noise.steps},
                     {"learning_rate", noise.learning_rate},
                     {"lambda", noise.lambda_reg},
                     {"batch", noise.batch}};
    json t;
    t["kind"] = task_kind_name(task.kind);
    t["target"] = task.target;
    t["count"] = task.count;
    t["seed"] = task.seed;
    root["task"] = std::move(t);
    root["unlearn"] = {{"method", method_name(unlearn.method)},
                       {"epochs", unlearn.epochs},
                       {"learning_rate", unlearn.learning_rate},
                       {"batch_size", unlearn.batch_size},
                       {"alpha", unlearn.alpha},
                       {"finetune_retain_count", unlearn.finetune_retain_count},
                       {"impair_epochs", unlearn.impair_epochs},
                       {"repair_epochs", unlearn.repair_epochs},
                       {"random_labels", unlearn.random_labels},
                       {"no_feature_noise", unlearn.no_feature_noise}};
    root["eval"] = {{"mia_members", mia_members}};
    root["sweep"] = {{"taus", sweep.taus},
                     {"alphas", sweep.alphas},
                     {"seeds", sweep.seeds},
                     {"workers", sweep.workers}};
    return root.dump(2) + "\n";
}

std::unique_ptr<Oracle> make_oracle(const RunConfig& cfg, const Dataset& train) {
    if (cfg.oracle.kind == "prototype")
        return std::make_unique<PrototypeOracle>(PrototypeOracle::from_class_means(
            train, cfg.oracle.scale, cfg.oracle.bias));
    if (cfg.oracle.kind == "file")
        return std::make_unique<FileOracle>(load_score_file(cfg.oracle.score_path));
    if (cfg.oracle.kind == "http")
        return std::make_unique<HttpOracle>(cfg.oracle.http, train.class_names);
    throw ConfigError("unknown oracle kind \"" + cfg.oracle.kind + "\"");
}

} // namespace megu
