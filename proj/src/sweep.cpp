#include "megu/sweep.hpp"

#include <atomic>
#include <algorithm>
#include <mutex>
#include <sstream>
#include <thread>

#include "megu/serialize.hpp"

namespace megu {

namespace {

struct CellMetrics {
    bool ok = false;
    double a_r = 0.0, a_f = 0.0, mia = 0.0;
};

} // namespace

void SweepPlan::validate(std::size_t num_classes) const {
    if (taus.empty() || alphas.empty())
        throw ConfigError("sweep grid must list at least one tau and one alpha");
    if (seeds_per_cell < 1) throw ConfigError("sweep needs at least one seed per cell");
    for (double tau : taus) perturb_rank(num_classes, tau);
    for (double alpha : alphas)
        if (!(alpha >= 0.0 && alpha <= 1.0))
            throw ConfigError("sweep alpha " + std::to_string(alpha) + " outside [0,1]");
}

SweepResult run_sweep(const SweepPlan& plan, const Mlp& baseline,
                      const TransitionMatrix& tm, const Dataset& train,
                      const Dataset& test, const SplitResult& split,
                      const TaskSpec& task) {
    plan.validate(train.num_classes());

    const std::size_t n_tau = plan.taus.size();
    const std::size_t n_alpha = plan.alphas.size();
    const std::size_t n_seed = plan.seeds_per_cell;

    // One work unit per (tau, seed): assignment and noise forging are shared
    // across the alphas of that unit.
    std::vector<std::vector<CellMetrics>> slots(n_tau * n_seed,
                                                std::vector<CellMetrics>(n_alpha));
    std::vector<std::string> failures;
    std::mutex failures_mu;

    const std::size_t unit_count = n_tau * n_seed;
    std::atomic<std::size_t> next_unit{0};
    std::size_t workers = plan.workers;
    if (workers == 0)
        workers = std::max<std::size_t>(1, std::min<std::size_t>(
                                               4, std::thread::hardware_concurrency()));
    workers = std::min(workers, unit_count);

    const auto run_unit = [&](std::size_t unit) {
        const std::size_t ti = unit / n_seed;
        const std::size_t sj = unit % n_seed;
        const double tau = plan.taus[ti];
        const std::uint64_t seed = plan.base_seed + sj;
        try {
            const PerturbMap map = assign_all(baseline, tm, train, split.forget_set, tau);
            NoiseConfig noise = plan.noise;
            noise.seed = mix_seed(seed, 0x5112);
            UnlearnConfig probe = plan.base;
            probe.seed = seed;
            const PerturbMap effective =
                effective_perturb_map(map, train.num_classes(), probe);
            const NoiseSet pairs = forge_pairs(baseline, effective, noise);

            for (std::size_t ai = 0; ai < n_alpha; ++ai) {
                try {
                    UnlearnConfig cfg = plan.base;
                    cfg.method = UnlearnMethod::Megu;
                    cfg.tau = tau;
                    cfg.alpha = plan.alphas[ai];
                    cfg.seed = seed;
                    UnlearnRun run = megu_unlearn(baseline, train, split, map, pairs, cfg);
                    EvalOptions eval = plan.eval;
                    eval.seed = seed;
                    const ModelEntry entry{"megu", &run.model};
                    const auto reports =
                        full_report(std::span(&entry, 1), train, test, split, task, eval);
                    slots[unit][ai] = {true, reports[0].a_r, reports[0].a_f, reports[0].mia};
                } catch (const Error& e) {
                    std::lock_guard lock(failures_mu);
                    failures.push_back("tau=" + std::to_string(tau) + " alpha=" +
                                       std::to_string(plan.alphas[ai]) + " seed=" +
                                       std::to_string(seed) + ": " + e.what());
                }
            }
        } catch (const Error& e) {
            std::lock_guard lock(failures_mu);
            failures.push_back("tau=" + std::to_string(tau) + " seed=" +
                               std::to_string(seed) + ": " + e.what());
        }
    };

    if (workers <= 1) {
        for (std::size_t unit = 0; unit < unit_count; ++unit) run_unit(unit);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t unit = next_unit.fetch_add(1); unit < unit_count;
                     unit = next_unit.fetch_add(1))
                    run_unit(unit);
            });
        for (std::thread& t : pool) t.join();
    }

    // Deterministic aggregation order: tau-major, then alpha.
    SweepResult result;
    std::sort(failures.begin(), failures.end());
    result.failures = std::move(failures);
    for (std::size_t ti = 0; ti < n_tau; ++ti) {
        for (std::size_t ai = 0; ai < n_alpha; ++ai) {
            SweepCell cell;
            cell.tau = plan.taus[ti];
            cell.alpha = plan.alphas[ai];
            std::vector<double> ar, af, mia;
            for (std::size_t sj = 0; sj < n_seed; ++sj) {
                const CellMetrics& m = slots[ti * n_seed + sj][ai];
                if (!m.ok) continue;
                ar.push_back(m.a_r);
                af.push_back(m.a_f);
                mia.push_back(m.mia);
            }
            if (ar.empty()) continue;
            cell.seed_count = ar.size();
            const auto stats = [](const std::vector<double>& xs, double& mean_out,
                                  double& min_out, double& max_out) {
                double sum = 0.0;
                min_out = xs.front();
                max_out = xs.front();
                for (double x : xs) {
                    sum += x;
                    min_out = std::min(min_out, x);
                    max_out = std::max(max_out, x);
                }
                mean_out = sum / static_cast<double>(xs.size());
            };
            stats(ar, cell.a_r_mean, cell.a_r_min, cell.a_r_max);
            stats(af, cell.a_f_mean, cell.a_f_min, cell.a_f_max);
            stats(mia, cell.mia_mean, cell.mia_min, cell.mia_max);
            result.cells.push_back(cell);
        }
    }
    return result;
}

std::string sweep_csv(const SweepResult& result) {
    std::ostringstream out;
    out.precision(17);
    out << "tau,alpha,seed_count,a_r_mean,a_r_min,a_r_max,"
           "a_f_mean,a_f_min,a_f_max,mia_mean,mia_min,mia_max\n";
    for (const SweepCell& c : result.cells) {
        out << c.tau << ',' << c.alpha << ',' << c.seed_count << ',' << c.a_r_mean << ','
            << c.a_r_min << ',' << c.a_r_max << ',' << c.a_f_mean << ',' << c.a_f_min << ','
            << c.a_f_max << ',' << c.mia_mean << ',' << c.mia_min << ',' << c.mia_max
            << '\n';
    }
    return out.str();
}

std::vector<AblationRow> run_ablations(const UnlearnConfig& base, const NoiseConfig& noise,
                                       const EvalOptions& eval, const Mlp& baseline,
                                       const Mlp& gold, const TransitionMatrix& tm,
                                       const Dataset& train, const Dataset& test,
                                       const SplitResult& split, const TaskSpec& task) {
    const PerturbMap map = assign_all(baseline, tm, train, split.forget_set, base.tau);

    UnlearnConfig full_cfg = base;
    full_cfg.method = UnlearnMethod::Megu;
    full_cfg.random_labels = false;
    full_cfg.no_feature_noise = false;

    UnlearnConfig rnd_cfg = full_cfg;
    rnd_cfg.random_labels = true;

    UnlearnConfig wofn_cfg = full_cfg;
    wofn_cfg.no_feature_noise = true;

    const NoiseSet full_pairs = forge_pairs(baseline, map, noise);
    const PerturbMap rnd_map = effective_perturb_map(map, train.num_classes(), rnd_cfg);
    const NoiseSet rnd_pairs = forge_pairs(baseline, rnd_map, noise);
    NoiseSet no_pairs;
    no_pairs.model_digest = model_hash(baseline);
    no_pairs.config = noise;

    UnlearnRun full_run = megu_unlearn(baseline, train, split, map, full_pairs, full_cfg);
    UnlearnRun rnd_run = megu_unlearn(baseline, train, split, map, rnd_pairs, rnd_cfg);
    UnlearnRun wofn_run = megu_unlearn(baseline, train, split, map, no_pairs, wofn_cfg);

    const std::vector<ModelEntry> entries = {
        {"baseline", &baseline}, {"retrain", &gold},      {"megu", &full_run.model},
        {"rnd", &rnd_run.model}, {"wofn", &wofn_run.model},
    };
    const auto reports = full_report(entries, train, test, split, task, eval);

    const std::string shared_hash = hex_digest(full_run.initial_digest);
    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        AblationRow row;
        row.variant = reports[i].method;
        row.a_r = reports[i].a_r;
        row.a_f = reports[i].a_f;
        row.mia = reports[i].mia;
        if (row.variant == "megu" || row.variant == "rnd" || row.variant == "wofn")
            row.initial_hash = shared_hash;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "variant,a_r,a_f,mia,initial_hash\n";
    for (const AblationRow& row : rows)
        out << row.variant << ',' << row.a_r << ',' << row.a_f << ',' << row.mia << ','
            << row.initial_hash << '\n';
    return out.str();
}

} // namespace megu
