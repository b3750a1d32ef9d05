#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "megu/dataset.hpp"
#include "megu/mlp.hpp"

namespace megu {

// Percent of argmax predictions equal to the fine labels.
double accuracy(const Mlp& model, const Tensor& inputs, std::span<const int> labels);

// Fine predictions mapped through fine->coarse before comparison.
double accuracy_coarse(const Mlp& model, const Tensor& inputs,
                       std::span<const int> coarse_labels,
                       std::span<const int> fine_to_coarse);

// Loss-threshold membership attacker: a sample whose cross-entropy falls at
// or below the threshold is called a member.
struct MiaAttacker {
    double threshold = 0.0;
    bool low_power = false;        // member/non-member losses indistinguishable
    double balanced_accuracy = 0.5;
    double member_rate = 0.0;      // calibration members flagged member
    double nonmember_rate = 0.0;   // calibration non-members flagged member (FPR)
};

// Threshold chosen to maximize balanced accuracy of the member/non-member
// split on per-sample loss; deterministic tie-break toward the smallest
// threshold.
MiaAttacker calibrate_mia(const Mlp& model, const Tensor& member_x,
                          std::span<const int> member_y, const Tensor& nonmember_x,
                          std::span<const int> nonmember_y);

// Percent of the given samples the attacker calls members.
double mia_score(const MiaAttacker& attacker, const Mlp& model, const Tensor& inputs,
                 std::span<const int> labels);

// CSV rows (sample id, true label, K logits) at full printed precision.
void export_predictions(const Mlp& model, const Dataset& ds,
                        const std::filesystem::path& path);
std::string predictions_csv(const Mlp& model, const Dataset& ds);

struct EvalReport {
    std::string method;
    TaskSpec task;
    std::uint64_t seed = 0;
    double a_r = 0.0;
    double a_f = 0.0;
    double mia = 0.0;
    std::map<std::string, double> timings;
};

struct ModelEntry {
    std::string name;
    const Mlp* model;
};

struct EvalOptions {
    std::size_t mia_members = 1000; // seeded retain-train calibration members
    std::uint64_t seed = 0;
};

// Metrics for every model against the same task. Per task kind:
//   class_wise  A_r = fine accuracy on retained-class test rows,
//               A_f = fine accuracy on forget-class test rows;
//   sub_class   A_r = coarse accuracy on retained-class test rows,
//               A_f = fine accuracy on the target fine class's test rows;
//   random      A_r = fine accuracy on the full test set,
//               A_f = fine accuracy on the forgotten train rows.
// MIA is always scored on the forgotten train rows; the attacker is
// calibrated per model on shared seeded sets (members: retain-train
// subsample; non-members: forget-class test rows, or the full test set for
// random tasks).
std::vector<EvalReport> full_report(std::span<const ModelEntry> models,
                                    const Dataset& train, const Dataset& test,
                                    const SplitResult& split, const TaskSpec& task,
                                    const EvalOptions& options);

// One report object per the declared schema.
std::string report_to_json(const EvalReport& report);
std::string reports_to_json(std::span<const EvalReport> reports);
std::vector<EvalReport> reports_from_json(const std::string& text);

// Aligned text table, metric rows A_r / A_f / MIA, one column per model.
std::string reports_to_table(std::span<const EvalReport> reports);

} // namespace megu
