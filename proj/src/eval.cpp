#include "megu/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "megu/serialize.hpp"

namespace megu {

namespace {

using nlohmann::json;

std::vector<double> sample_losses(const Mlp& model, const Tensor& x,
                                  std::span<const int> y) {
    return per_sample_ce(model.forward(x), y);
}

} // namespace

double accuracy(const Mlp& model, const Tensor& inputs, std::span<const int> labels) {
    if (labels.empty()) throw EvalError("accuracy over an empty sample set");
    const std::vector<int> preds = argmax_rows(model.forward(inputs));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == labels[i]) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy_coarse(const Mlp& model, const Tensor& inputs,
                       std::span<const int> coarse_labels,
                       std::span<const int> fine_to_coarse) {
    if (coarse_labels.empty()) throw EvalError("accuracy over an empty sample set");
    const std::vector<int> preds = argmax_rows(model.forward(inputs));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int coarse = fine_to_coarse[static_cast<std::size_t>(preds[i])];
        if (coarse == coarse_labels[i]) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(coarse_labels.size());
}

MiaAttacker calibrate_mia(const Mlp& model, const Tensor& member_x,
                          std::span<const int> member_y, const Tensor& nonmember_x,
                          std::span<const int> nonmember_y) {
    if (member_y.empty() || nonmember_y.empty())
        throw EvalError("attacker calibration needs nonempty member and non-member sets");
    const std::vector<double> member_loss = sample_losses(model, member_x, member_y);
    const std::vector<double> nonmember_loss = sample_losses(model, nonmember_x, nonmember_y);

    std::vector<double> all = member_loss;
    all.insert(all.end(), nonmember_loss.begin(), nonmember_loss.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    // Candidate thresholds: below everything, every midpoint, above everything.
    std::vector<double> candidates;
    candidates.push_back(all.front() - 1.0);
    for (std::size_t i = 0; i + 1 < all.size(); ++i)
        candidates.push_back(0.5 * (all[i] + all[i + 1]));
    candidates.push_back(all.back() + 1.0);

    const auto rate_at = [](const std::vector<double>& losses, double thr) {
        std::size_t n = 0;
        for (double v : losses)
            if (v <= thr) ++n;
        return static_cast<double>(n) / static_cast<double>(losses.size());
    };

    MiaAttacker best;
    best.balanced_accuracy = -1.0;
    for (double thr : candidates) {
        const double tpr = rate_at(member_loss, thr);
        const double fpr = rate_at(nonmember_loss, thr);
        const double balanced = 0.5 * (tpr + (1.0 - fpr));
        if (balanced > best.balanced_accuracy + 1e-15) {
            best.threshold = thr;
            best.balanced_accuracy = balanced;
            best.member_rate = tpr;
            best.nonmember_rate = fpr;
        }
    }
    best.low_power = best.balanced_accuracy <= 0.5 + 1e-12;
    if (!std::isfinite(best.threshold))
        throw EvalError("degenerate attacker threshold");
    return best;
}

double mia_score(const MiaAttacker& attacker, const Mlp& model, const Tensor& inputs,
                 std::span<const int> labels) {
    if (labels.empty()) throw EvalError("membership attack over an empty forget set");
    const std::vector<double> losses = sample_losses(model, inputs, labels);
    std::size_t members = 0;
    for (double v : losses)
        if (v <= attacker.threshold) ++members;
    return 100.0 * static_cast<double>(members) / static_cast<double>(losses.size());
}

std::string predictions_csv(const Mlp& model, const Dataset& ds) {
    const Tensor logits = model.forward(ds.inputs);
    std::ostringstream out;
    out.precision(17);
    out << "id,label";
    for (std::size_t k = 0; k < ds.num_classes(); ++k) out << ",logit_" << k;
    out << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << i << ',' << ds.labels[i];
        for (double v : logits.row(i)) out << ',' << v;
        out << '\n';
    }
    return out.str();
}

void export_predictions(const Mlp& model, const Dataset& ds,
                        const std::filesystem::path& path) {
    write_text_atomic(path, predictions_csv(model, ds));
}

std::vector<EvalReport> full_report(std::span<const ModelEntry> models,
                                    const Dataset& train, const Dataset& test,
                                    const SplitResult& split, const TaskSpec& task,
                                    const EvalOptions& options) {
    if (models.empty()) throw EvalError("no models to evaluate");
    if (split.forget_set.empty()) throw EvalError("empty forget set");

    auto [forget_x, forget_y] = gather(train, split.forget_set);

    // Retained / forgotten test rows per task semantics.
    std::vector<std::size_t> test_retain_rows, test_forget_rows;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (task.kind == TaskKind::Random) {
            test_retain_rows.push_back(i);
            test_forget_rows.push_back(i); // placeholder, unused for random
        } else if (test.labels[i] == task.target) {
            test_forget_rows.push_back(i);
        } else {
            test_retain_rows.push_back(i);
        }
    }
    if (task.kind != TaskKind::Random && test_forget_rows.empty())
        throw EvalError("test set has no rows of the target class");

    auto [retain_test_x, retain_test_y] = gather(test, test_retain_rows);
    auto [forget_test_x, forget_test_y] = gather(test, test_forget_rows);

    std::vector<int> retain_test_coarse;
    std::vector<int> fine_to_coarse;
    if (task.kind == TaskKind::SubClass) {
        if (!test.has_coarse())
            throw EvalError("sub_class evaluation requires coarse labels");
        fine_to_coarse = test.fine_to_coarse();
        for (std::size_t row : test_retain_rows)
            retain_test_coarse.push_back(test.coarse_labels[row]);
    }

    // Shared seeded attacker calibration sets. Members come from the
    // retain-train data; non-members from held-out test rows matching the
    // forget population so the gold model scores them alike.
    const std::size_t member_count = std::min(options.mia_members, split.retain_set.size());
    if (member_count == 0) throw EvalError("no retain samples for attacker calibration");
    const std::vector<std::size_t> member_idx =
        sample_finetune_retain(split.retain_set, member_count, mix_seed(options.seed, 0x318a));
    auto [member_x, member_y] = gather(train, member_idx);
    const Tensor& nonmember_x = task.kind == TaskKind::Random ? retain_test_x : forget_test_x;
    const std::vector<int>& nonmember_y =
        task.kind == TaskKind::Random ? retain_test_y : forget_test_y;

    std::vector<EvalReport> reports;
    for (const ModelEntry& entry : models) {
        const Mlp& model = *entry.model;
        EvalReport report;
        report.method = entry.name;
        report.task = task;
        report.seed = options.seed;

        if (task.kind == TaskKind::ClassWise) {
            report.a_r = accuracy(model, retain_test_x, retain_test_y);
            report.a_f = accuracy(model, forget_test_x, forget_test_y);
        } else if (task.kind == TaskKind::SubClass) {
            report.a_r = accuracy_coarse(model, retain_test_x, retain_test_coarse,
                                         fine_to_coarse);
            report.a_f = accuracy(model, forget_test_x, forget_test_y);
        } else {
            report.a_r = accuracy(model, retain_test_x, retain_test_y);
            report.a_f = accuracy(model, forget_x, forget_y);
        }

        const MiaAttacker attacker =
            calibrate_mia(model, member_x, member_y, nonmember_x, nonmember_y);
        report.mia = mia_score(attacker, model, forget_x, forget_y);
        reports.push_back(std::move(report));
    }
    return reports;
}

namespace {

json report_to_json_value(const EvalReport& report) {
    json body;
    body["method"] = report.method;
    body["task"]["kind"] = task_kind_name(report.task.kind);
    body["task"]["target"] = report.task.target;
    if (report.task.kind == TaskKind::Random)
        body["task"]["count"] = report.task.count;
    body["seed"] = report.seed;
    body["a_r"] = report.a_r;
    body["a_f"] = report.a_f;
    body["mia"] = report.mia;
    body["timings"] = report.timings;
    return body;
}

} // namespace

std::string report_to_json(const EvalReport& report) {
    return report_to_json_value(report).dump(2) + "\n";
}

std::string reports_to_json(std::span<const EvalReport> reports) {
    json body = json::array();
    for (const EvalReport& r : reports) body.push_back(report_to_json_value(r));
    return body.dump(2) + "\n";
}

std::vector<EvalReport> reports_from_json(const std::string& text) {
    json body;
    try {
        body = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("report JSON: ") + e.what());
    }
    std::vector<EvalReport> out;
    for (const auto& item : body) {
        EvalReport r;
        r.method = item.at("method").get<std::string>();
        r.task.kind = parse_task_kind(item.at("task").at("kind").get<std::string>());
        r.task.target = item.at("task").at("target").get<int>();
        if (item.at("task").contains("count"))
            r.task.count = item.at("task").at("count").get<std::size_t>();
        r.seed = item.at("seed").get<std::uint64_t>();
        r.a_r = item.at("a_r").get<double>();
        r.a_f = item.at("a_f").get<double>();
        r.mia = item.at("mia").get<double>();
        for (const auto& [phase, secs] : item.at("timings").items())
            r.timings[phase] = secs.get<double>();
        out.push_back(std::move(r));
    }
    return out;
}

std::string reports_to_table(std::span<const EvalReport> reports) {
    std::ostringstream out;
    out << std::left << std::setw(8) << "metric";
    for (const EvalReport& r : reports) out << std::right << std::setw(12) << r.method;
    out << '\n';
    const auto row = [&](const char* name, auto getter) {
        out << std::left << std::setw(8) << name;
        for (const EvalReport& r : reports)
            out << std::right << std::setw(12) << std::fixed << std::setprecision(2)
                << getter(r);
        out << '\n';
    };
    row("A_r", [](const EvalReport& r) { return r.a_r; });
    row("A_f", [](const EvalReport& r) { return r.a_f; });
    row("MIA", [](const EvalReport& r) { return r.mia; });
    return out.str();
}

} // namespace megu
