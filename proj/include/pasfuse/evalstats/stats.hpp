#pragma once

#include "pasfuse/evalstats/metrics.hpp"

#include <Eigen/Core>

#include <map>
#include <optional>

namespace pasfuse {

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
/// Two-sided p-value of a t statistic.
double student_t_two_sided(double t, double dof);
/// Upper tail P(F > f).
double f_survival(double f, double d1, double d2);

struct StatTestResult {
  std::string test;
  double statistic = 0;
  double dof = 0;
  double dof2 = 0;  // ANOVA error dof; 0 for t-tests
  double p = 1;
  double p_adjusted = 1;
  bool significant = false;
};

inline constexpr double kAlpha = 0.05;

/// Paired two-sided t-test on a - b; throws DegenerateInput when the
/// differences have zero variance.
StatTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

/// One-way within-subjects ANOVA on a runs x models matrix. No difference
/// between models (SS_conditions = 0) gives F = 0, p = 1; otherwise a zero
/// error term throws DegenerateInput.
StatTestResult repeated_measures_anova(const Eigen::MatrixXd& runs_by_models);

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
std::vector<double> bh_fdr(const std::vector<double>& p);

struct PairwiseResult {
  std::string a, b;
  bool ran = false;  // post-hoc tests only run when the ANOVA gate opens
  StatTestResult test;
};

struct MetricComparison {
  std::string metric;
  StatTestResult anova;
  std::vector<PairwiseResult> pairs;
};

struct ComparisonReport {
  std::vector<std::string> models;
  std::vector<MetricComparison> metrics;
  std::string correction = "Benjamini-Hochberg within each metric family";
  double alpha = kAlpha;

  /// Looks up one pairwise comparison; nullptr when absent.
  const PairwiseResult* find(const std::string& metric, const std::string& a, const std::string& b) const;
};

/// Per metric: repeated-measures ANOVA across all models; when p < alpha,
/// all pairwise paired t-tests, BH-adjusted within the metric. Runs are
/// paired by index. Zero-variance pairs are reported as p = 0 (constant
/// nonzero difference) or p = 1 (no difference) instead of failing.
ComparisonReport compare_models(const std::vector<std::string>& models,
                                const std::vector<std::vector<RunMetrics>>& runs,
                                double alpha = kAlpha);

void to_json(nlohmann::json& j, const StatTestResult& r);
void to_json(nlohmann::json& j, const ComparisonReport& r);

}  // namespace pasfuse
