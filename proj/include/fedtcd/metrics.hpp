#pragma once

// Structure-recovery and forecasting scores against synthetic ground truth.
// Only slices t >= L are scored.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedtcd/dism.hpp"
#include "fedtcd/fed.hpp"
#include "fedtcd/synth.hpp"

namespace fedtcd {

// Rank AUROC with tie-averaged ranks.  Absent when labels are all one class.
std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);
// Step-wise area under the precision-recall curve; tied scores enter together.
std::optional<double> auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Off-diagonal entries of D x D row-major score / truth slices.
std::optional<double> edge_auroc(std::span<const double> scores, std::span<const std::uint8_t> truth, std::size_t D);
std::optional<double> edge_auprc(std::span<const double> scores, std::span<const std::uint8_t> truth, std::size_t D);

// Disagreements over unordered pairs {i, j}: each pair is in one of four
// states (none, i->j, j->i, both) and counts once if the states differ.
std::size_t shd(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::size_t D);
std::vector<std::uint8_t> support(std::span<const double> W, double threshold);

struct ForecastErrors {
    double mae = 0.0, rmse = 0.0;
};

// One-step prediction V^t W(t) + sum_tau V^{t-tau} A(tau) over t >= L.
ForecastErrors forecast_errors(const Tensor3& W, const Tensor3& A, std::span<const TimeSeriesPanel> panels);

// Precision / recall for one binary detection task.  A task with no predicted
// positives has precision 1; with no actual positives, recall 1.
struct DetectionScore {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision() const { return tp + fp == 0 ? 1.0 : double(tp) / double(tp + fp); }
    double recall() const { return tp + fn == 0 ? 1.0 : double(tp) / double(tp + fn); }
};

struct MaskReport {
    DetectionScore removal;     // positive: S == 0, off-diagonal, t >= L
    DetectionScore soft;        // positive: L_soft == 1
    DetectionScore removal_A;
    DetectionScore soft_A;
    std::optional<double> confounded_recall;  // removed fraction of confounded pairs without a true edge
    double accuracy = 0.0;                    // agreement over all dynamic and static mask entries
};

MaskReport mask_report(const PriorSet& priors, const GroundTruth& truth, const ScenarioSpec& spec);

struct EvalReport {
    std::vector<std::optional<double>> auroc_t;  // index t; absent for t < L or degenerate truth
    std::vector<std::optional<double>> auprc_t;
    std::optional<double> auroc_mean, auprc_mean;
    std::vector<std::size_t> shd_t;
    double shd_mean = 0.0;
    std::optional<double> lag_auroc, lag_auprc;
    double mae = 0.0, rmse = 0.0;
    std::optional<MaskReport> masks;
    double threshold = 0.1;
};

EvalReport evaluate(const GraphEstimate& estimate, const GroundTruth& truth,
                    std::span<const TimeSeriesPanel> held_out, double shd_threshold = 0.1);
EvalReport evaluate(const GraphEstimate& estimate, const GroundTruth& truth,
                    std::span<const TimeSeriesPanel> held_out, const PriorSet& priors, const ScenarioSpec& spec,
                    double shd_threshold = 0.1);

// key,value lines; absent values print as "NA".
std::string report_csv(const EvalReport& report);
// Columns t,auroc,auprc,shd.
std::string per_t_csv(const EvalReport& report);
std::string report_text(const EvalReport& report);

}  // namespace fedtcd
