#pragma once

#include "pasfuse/ndcore/tensor.hpp"

#include <json.hpp>

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pasfuse {

/// Raised when a statistic is undefined for the given input (single-class
/// AUC, zero-variance differences, zero ANOVA error term).
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct ConfusionMatrix {
  Index tp = 0, tn = 0, fp = 0, fn = 0;
  Index total() const { return tp + tn + fp + fn; }
};

/// Positive class is 1.
ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions);

/// Per-class precision/recall/F1 for both classes, then averaged.
struct MacroMetrics {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};
MacroMetrics macro_metrics(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr, tpr, threshold;
};

struct RocCurve {
  double auc = 0;
  std::vector<RocPoint> points;  // from (0,0) to (1,1), fpr non-decreasing
};

/// Thresholds at every distinct score; trapezoidal area.
RocCurve roc_auc(std::span<const int> labels, std::span<const double> scores);

struct MetricsReport {
  ConfusionMatrix cm;
  MacroMetrics macro;
  double auc = 0;
  std::vector<RocPoint> roc;
};

/// Predictions are score >= threshold.
MetricsReport evaluate(std::span<const int> labels, std::span<const double> scores,
                       double threshold = 0.5);

/// The five per-run columns of the result tables.
inline constexpr std::array<const char*, 5> kMetricNames{"accuracy", "auc", "precision", "recall", "f1"};

struct RunMetrics {
  std::array<double, 5> values{};  // kMetricNames order

  static RunMetrics from(const MetricsReport& r) {
    return {{r.macro.accuracy, r.auc, r.macro.precision, r.macro.recall, r.macro.f1}};
  }
  double operator[](std::size_t i) const { return values[i]; }
};

struct MetricSummary {
  std::array<double, 5> best{}, mean{}, sd{};
  int runs = 0;
};

/// Best (by the metric itself), mean and sample standard deviation (n-1;
/// zero for a single run).
MetricSummary summarize(const std::vector<RunMetrics>& runs);

void to_json(nlohmann::json& j, const ConfusionMatrix& cm);
void to_json(nlohmann::json& j, const MacroMetrics& m);
void to_json(nlohmann::json& j, const MetricsReport& r);
void to_json(nlohmann::json& j, const RunMetrics& r);
void from_json(const nlohmann::json& j, RunMetrics& r);
void to_json(nlohmann::json& j, const MetricSummary& s);

}  // namespace pasfuse
