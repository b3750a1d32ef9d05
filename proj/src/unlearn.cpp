#include "megu/unlearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include "megu/serialize.hpp"

namespace megu {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& order,
                   std::size_t begin, std::size_t count) {
    Tensor out({count, src.dim(1)});
    for (std::size_t i = 0; i < count; ++i) {
        const auto row = src.row(order[begin + i]);
        std::copy(row.begin(), row.end(), out.row(i).begin());
    }
    return out;
}

// One pass over (X, Y) in shuffled mini-batches; returns the mean loss over
// samples. A null optimizer evaluates without updating (lr = 0 semantics).
double run_epoch(Mlp& model, Optimizer* opt, const Tensor& x, const std::vector<int>& y,
                 std::size_t batch_size, Rng& rng) {
    const std::size_t n = y.size();
    const std::vector<std::size_t> order = rng.permutation(n);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t count = std::min(batch_size, n - start);
        Tensor bx = gather_rows(x, order, start, count);
        std::vector<int> by(count);
        for (std::size_t i = 0; i < count; ++i) by[i] = y[order[start + i]];
        const Tensor logits = model.forward(bx);
        loss_sum += softmax_ce_loss(logits, by) * static_cast<double>(count);
        if (opt != nullptr) {
            Gradients g = model.grad_params(bx, by);
            std::vector<Tensor> grads;
            for (std::size_t l = 0; l < g.weights.size(); ++l) {
                grads.push_back(std::move(g.weights[l]));
                grads.push_back(std::move(g.biases[l]));
            }
            opt->step(model.parameter_tensors(), grads);
        }
    }
    return loss_sum / static_cast<double>(n);
}

} // namespace

std::string method_name(UnlearnMethod method) {
    switch (method) {
        case UnlearnMethod::Megu: return "megu";
        case UnlearnMethod::Unsir: return "unsir";
        case UnlearnMethod::Ft: return "ft";
        case UnlearnMethod::Retrain: return "retrain";
    }
    return "?";
}

UnlearnMethod parse_method(const std::string& name) {
    if (name == "megu") return UnlearnMethod::Megu;
    if (name == "unsir") return UnlearnMethod::Unsir;
    if (name == "ft") return UnlearnMethod::Ft;
    if (name == "retrain") return UnlearnMethod::Retrain;
    throw ConfigError("unknown unlearning method \"" + name + "\"");
}

void UnlearnConfig::validate() const {
    if (method == UnlearnMethod::Unsir) {
        if (impair_epochs + repair_epochs < 1)
            throw ConfigError("unsir needs at least one impair or repair epoch");
    } else if (epochs < 1) {
        throw ConfigError("unlearning needs at least one epoch");
    }
    if (learning_rate < 0.0) throw ConfigError("learning rate must be nonnegative");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ConfigError("alpha must lie in [0,1], got " + std::to_string(alpha));
}

Mlp train_classifier(const Dataset& ds, const std::vector<std::size_t>& indices,
                     const std::vector<std::size_t>& hidden_dims, const TrainConfig& cfg,
                     std::vector<double>* epoch_losses) {
    if (indices.empty()) throw TaskError("cannot train on an empty index set");
    std::vector<std::size_t> dims;
    dims.push_back(ds.dim());
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(ds.num_classes());

    Mlp model(dims, cfg.seed);
    Optimizer opt(cfg.optimizer, cfg.learning_rate);
    Rng rng(mix_seed(cfg.seed, 0x7e41));
    auto [x, y] = gather(ds, indices);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double loss = run_epoch(model, &opt, x, y, cfg.batch_size, rng);
        if (epoch_losses) epoch_losses->push_back(loss);
        if (!std::isfinite(loss))
            throw NumericError("training diverged at epoch " + std::to_string(epoch));
    }
    return model;
}

PerturbMap effective_perturb_map(const PerturbMap& map, std::size_t num_classes,
                                 const UnlearnConfig& cfg) {
    if (!cfg.random_labels) return map;
    return randomize_labels(map, num_classes, mix_seed(cfg.seed, 0x7d11));
}

PerturbedForgetSet build_perturbed_forget_set(const Dataset& ds, const PerturbMap& map,
                                              const NoiseSet& pairs,
                                              const UnlearnConfig& cfg) {
    const std::size_t n = map.entries.size();
    if (n == 0) throw TaskError("perturb map is empty");

    if (!cfg.no_feature_noise) {
        for (const PerturbEntry& e : map.entries) {
            const NoiseKey key{e.label, e.perturb_label};
            if (pairs.find(key) == nullptr)
                throw ConfigError("no noise pair for key (label=" + std::to_string(key.label) +
                                  ", perturb=" + std::to_string(key.perturb_label) + ")");
        }
    }

    Rng rng(mix_seed(cfg.seed, 0x5e1ec7));
    PerturbedForgetSet out;
    out.inputs = Tensor({n, ds.dim()});
    out.labels.resize(n);
    out.members.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const PerturbEntry& e = map.entries[i];
        const auto src = ds.inputs.row(e.sample_index);
        auto dst = out.inputs.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
        out.labels[i] = e.perturb_label;
        if (cfg.no_feature_noise) {
            out.members[i] = 0;
            continue;
        }
        const NoisePair* pair = pairs.find({e.label, e.perturb_label});
        const std::size_t m = static_cast<std::size_t>(rng.uniform_int(pair->pos.dim(0)));
        out.members[i] = m;
        const auto pos = pair->pos.row(m);
        const auto neg = pair->neg.row(m);
        for (std::size_t d = 0; d < dst.size(); ++d)
            dst[d] += cfg.alpha * pos[d] + (1.0 - cfg.alpha) * neg[d];
    }
    return out;
}

UnlearnRun megu_unlearn(const Mlp& model, const Dataset& ds, const SplitResult& split,
                        const PerturbMap& map, const NoiseSet& pairs,
                        const UnlearnConfig& cfg) {
    cfg.validate();
    const auto start = Clock::now();

    // Map coverage of the forget set is a precondition.
    {
        std::set<std::size_t> mapped;
        for (const PerturbEntry& e : map.entries) mapped.insert(e.sample_index);
        for (std::size_t idx : split.forget_set)
            if (!mapped.count(idx))
                throw ConfigError("perturb map does not cover forget sample " +
                                  std::to_string(idx));
    }

    const PerturbMap effective = effective_perturb_map(map, ds.num_classes(), cfg);
    const PerturbedForgetSet forget = build_perturbed_forget_set(ds, effective, pairs, cfg);

    const std::vector<std::size_t> retain_idx =
        sample_finetune_retain(split.retain_set,
                               std::min(cfg.finetune_retain_count, split.retain_set.size()),
                               mix_seed(cfg.seed, 0x2e7a11));
    auto [retain_x, retain_y] = gather(ds, retain_idx);
    const double prep_seconds = seconds_since(start);

    Mlp updated = model;
    Optimizer opt(OptimizerKind::Adam, cfg.learning_rate > 0.0 ? cfg.learning_rate : 1.0);
    Optimizer* optp = cfg.learning_rate > 0.0 ? &opt : nullptr;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5f0f1e));

    const auto tune_start = Clock::now();
    std::vector<LossTraceRow> traces;
    const std::size_t n_forget = forget.labels.size();
    const std::size_t n_retain = retain_y.size();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<std::size_t> retain_order = shuffle_rng.permutation(n_retain);
        const std::vector<std::size_t> forget_order = shuffle_rng.permutation(n_forget);
        std::size_t cursor = 0;
        double forget_loss = 0.0, retain_loss = 0.0;
        std::size_t forget_seen = 0;
        for (std::size_t start_i = 0; start_i < n_retain; start_i += cfg.batch_size) {
            // One perturbed-forget batch per retain batch, cycling.
            const std::size_t fcount = std::min(cfg.batch_size, n_forget);
            Tensor fx({fcount, ds.dim()});
            std::vector<int> fy(fcount);
            for (std::size_t i = 0; i < fcount; ++i) {
                const std::size_t pick = forget_order[cursor];
                cursor = (cursor + 1) % n_forget;
                const auto row = forget.inputs.row(pick);
                std::copy(row.begin(), row.end(), fx.row(i).begin());
                fy[i] = forget.labels[pick];
            }
            {
                const Tensor logits = updated.forward(fx);
                forget_loss += softmax_ce_loss(logits, fy) * static_cast<double>(fcount);
                forget_seen += fcount;
                if (optp) {
                    Gradients g = updated.grad_params(fx, fy);
                    std::vector<Tensor> grads;
                    for (std::size_t l = 0; l < g.weights.size(); ++l) {
                        grads.push_back(std::move(g.weights[l]));
                        grads.push_back(std::move(g.biases[l]));
                    }
                    optp->step(updated.parameter_tensors(), grads);
                }
            }
            const std::size_t rcount = std::min(cfg.batch_size, n_retain - start_i);
            Tensor rx = gather_rows(retain_x, retain_order, start_i, rcount);
            std::vector<int> ry(rcount);
            for (std::size_t i = 0; i < rcount; ++i) ry[i] = retain_y[retain_order[start_i + i]];
            {
                const Tensor logits = updated.forward(rx);
                retain_loss += softmax_ce_loss(logits, ry) * static_cast<double>(rcount);
                if (optp) {
                    Gradients g = updated.grad_params(rx, ry);
                    std::vector<Tensor> grads;
                    for (std::size_t l = 0; l < g.weights.size(); ++l) {
                        grads.push_back(std::move(g.weights[l]));
                        grads.push_back(std::move(g.biases[l]));
                    }
                    optp->step(updated.parameter_tensors(), grads);
                }
            }
        }
        traces.push_back({epoch, "forget_perturbed",
                          forget_loss / static_cast<double>(std::max<std::size_t>(1, forget_seen))});
        traces.push_back({epoch, "retain", retain_loss / static_cast<double>(n_retain)});
    }

    UnlearnRun run{model_hash(model), std::move(updated), std::move(traces), {},
                   UnlearnMethod::Megu};
    run.phase_seconds.emplace_back("prepare", prep_seconds);
    run.phase_seconds.emplace_back("finetune", seconds_since(tune_start));
    return run;
}

UnlearnRun unsir_unlearn(const Mlp& model, const Dataset& ds, const SplitResult& split,
                         const UnlearnConfig& cfg, const NoiseConfig& noise_cfg) {
    cfg.validate();
    if (split.forget_set.empty()) throw TaskError("forget set is empty");

    std::set<int> forget_classes;
    for (std::size_t idx : split.forget_set) forget_classes.insert(ds.labels[idx]);

    const std::vector<std::size_t> retain_idx =
        sample_finetune_retain(split.retain_set,
                               std::min(cfg.finetune_retain_count, split.retain_set.size()),
                               mix_seed(cfg.seed, 0x2e7a11));
    auto [retain_x, retain_y] = gather(ds, retain_idx);

    // Error-maximizing noise per forget class, trained against the frozen model.
    const auto noise_start = Clock::now();
    std::vector<Tensor> class_noise;
    std::vector<int> class_ids;
    for (int c : forget_classes) {
        NoiseConfig nc = noise_cfg;
        nc.seed = mix_seed(noise_cfg.seed, 0x0517 + static_cast<std::uint64_t>(c));
        class_noise.push_back(train_noise(model, c, NoiseDirection::Away, nc));
        class_ids.push_back(c);
    }
    const double noise_seconds = seconds_since(noise_start);

    Mlp updated = model;
    Rng rng(mix_seed(cfg.seed, 0x0451c));
    std::vector<LossTraceRow> traces;

    const auto impair_start = Clock::now();
    if (cfg.impair_epochs > 0 && cfg.learning_rate > 0.0) {
        Optimizer opt(OptimizerKind::Adam, cfg.learning_rate);
        // Retain inputs shifted by a seeded pick of (class, batch member).
        Tensor impaired = retain_x;
        for (std::size_t i = 0; i < retain_y.size(); ++i) {
            const std::size_t which = class_noise.size() == 1
                                          ? 0
                                          : static_cast<std::size_t>(
                                                rng.uniform_int(class_noise.size()));
            const Tensor& batch = class_noise[which];
            const auto noise = batch.row(static_cast<std::size_t>(rng.uniform_int(batch.dim(0))));
            auto row = impaired.row(i);
            for (std::size_t d = 0; d < row.size(); ++d) row[d] += noise[d];
        }
        for (std::size_t epoch = 0; epoch < cfg.impair_epochs; ++epoch) {
            const double loss = run_epoch(updated, &opt, impaired, retain_y, cfg.batch_size, rng);
            traces.push_back({epoch, "impair", loss});
        }
    }
    const double impair_seconds = seconds_since(impair_start);

    const auto repair_start = Clock::now();
    if (cfg.repair_epochs > 0) {
        Optimizer opt(OptimizerKind::Adam, cfg.learning_rate > 0.0 ? cfg.learning_rate : 1.0);
        Optimizer* optp = cfg.learning_rate > 0.0 ? &opt : nullptr;
        Rng repair_rng(mix_seed(cfg.seed, 0x2ef10));
        for (std::size_t epoch = 0; epoch < cfg.repair_epochs; ++epoch) {
            const double loss =
                run_epoch(updated, optp, retain_x, retain_y, cfg.batch_size, repair_rng);
            traces.push_back({epoch, "repair", loss});
        }
    }

    UnlearnRun run{model_hash(model), std::move(updated), std::move(traces), {},
                   UnlearnMethod::Unsir};
    run.phase_seconds.emplace_back("noise", noise_seconds);
    run.phase_seconds.emplace_back("impair", impair_seconds);
    run.phase_seconds.emplace_back("repair", seconds_since(repair_start));
    return run;
}

UnlearnRun ft_baseline(const Mlp& model, const Dataset& ds, const SplitResult& split,
                       const UnlearnConfig& cfg) {
    cfg.validate();
    const std::vector<std::size_t> retain_idx =
        sample_finetune_retain(split.retain_set,
                               std::min(cfg.finetune_retain_count, split.retain_set.size()),
                               mix_seed(cfg.seed, 0x2e7a11));
    auto [retain_x, retain_y] = gather(ds, retain_idx);

    Mlp updated = model;
    Optimizer opt(OptimizerKind::Adam, cfg.learning_rate > 0.0 ? cfg.learning_rate : 1.0);
    Optimizer* optp = cfg.learning_rate > 0.0 ? &opt : nullptr;
    Rng rng(mix_seed(cfg.seed, 0x2ef10));

    const auto start = Clock::now();
    std::vector<LossTraceRow> traces;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double loss = run_epoch(updated, optp, retain_x, retain_y, cfg.batch_size, rng);
        traces.push_back({epoch, "retain", loss});
    }
    UnlearnRun run{model_hash(model), std::move(updated), std::move(traces), {},
                   UnlearnMethod::Ft};
    run.phase_seconds.emplace_back("finetune", seconds_since(start));
    return run;
}

Mlp retrain_gold(const Dataset& ds, const SplitResult& split,
                 const std::vector<std::size_t>& hidden_dims, const TrainConfig& cfg) {
    return train_classifier(ds, split.retain_set, hidden_dims, cfg);
}

std::string loss_traces_csv(const UnlearnRun& run) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,stream,mean_loss\n";
    for (const LossTraceRow& row : run.traces)
        out << row.epoch << ',' << row.stream << ',' << row.mean_loss << '\n';
    return out.str();
}

std::string timings_json(const UnlearnRun& run) {
    std::ostringstream out;
    out.precision(6);
    out << "{";
    bool first = true;
    for (const auto& [phase, secs] : run.phase_seconds) {
        if (!first) out << ", ";
        out << '"' << phase << "\": " << std::fixed << secs;
        first = false;
    }
    out << "}\n";
    return out.str();
}

void write_run_artifacts(const UnlearnRun& run, const std::filesystem::path& dir,
                         const std::string& config_snapshot_json) {
    std::filesystem::create_directories(dir);
    write_text_atomic(dir / "config.json", config_snapshot_json);
    write_text_atomic(dir / "losses.csv", loss_traces_csv(run));
    write_text_atomic(dir / "timing.json", timings_json(run));
    save_checkpoint(run.model, dir / "final.ckpt");
}

} // namespace megu
