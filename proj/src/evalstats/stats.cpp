#include "pasfuse/evalstats/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pasfuse {

namespace {

constexpr double kCfTolerance = 1e-15;
constexpr int kCfMaxIter = 10000;

// Lentz's method for the incomplete beta continued fraction.
double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kCfMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((a - 1.0 + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + 1.0 + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kCfTolerance) return h;
  }
  return h;
}

double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }

// Relative to the total sum of squares so rounding residue counts as zero.
bool negligible(double ss, double total) { return ss <= 1e-12 * std::max(total, 1e-300); }

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw std::invalid_argument("incomplete_beta: a, b must be positive");
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double dof) {
  if (std::isinf(t)) return 0.0;
  return clamp01(incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t)));
}

double f_survival(double f, double d1, double d2) {
  if (f <= 0) return 1.0;
  if (std::isinf(f)) return 0.0;
  return clamp01(incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)));
}

StatTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_ttest: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired_ttest: need at least two pairs");
  const double n = static_cast<double>(a.size());
  double mean = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  if (negligible(ss, mean * mean * n)) throw DegenerateInput("paired_ttest: zero-variance differences");
  const double sd = std::sqrt(ss / (n - 1));
  StatTestResult r;
  r.test = "paired t-test";
  r.statistic = mean / (sd / std::sqrt(n));
  r.dof = n - 1;
  r.p = student_t_two_sided(r.statistic, r.dof);
  r.p_adjusted = r.p;
  r.significant = r.p < kAlpha;
  return r;
}

StatTestResult repeated_measures_anova(const Eigen::MatrixXd& x) {
  const Index n = x.rows(), k = x.cols();
  if (k < 2 || n < 2) throw std::invalid_argument("repeated_measures_anova: need >= 2 runs and >= 2 models");
  if (!x.allFinite()) throw std::invalid_argument("repeated_measures_anova: non-finite value");
  const double grand = x.mean();
  const double ss_total = (x.array() - grand).square().sum();
  const double ss_cond = n * (x.colwise().mean().array() - grand).square().sum();
  const double ss_subj = k * (x.rowwise().mean().array() - grand).square().sum();
  const double ss_err = std::max(0.0, ss_total - ss_cond - ss_subj);

  StatTestResult r;
  r.test = "repeated-measures ANOVA";
  r.dof = static_cast<double>(k - 1);
  r.dof2 = static_cast<double>((k - 1) * (n - 1));
  if (negligible(ss_cond, ss_total)) {
    r.statistic = 0;
    r.p = 1;
  } else {
    if (negligible(ss_err, ss_total)) throw DegenerateInput("repeated_measures_anova: zero error term");
    r.statistic = (ss_cond / r.dof) / (ss_err / r.dof2);
    r.p = f_survival(r.statistic, r.dof, r.dof2);
  }
  r.p_adjusted = r.p;
  r.significant = r.p < kAlpha;
  return r;
}

std::vector<double> bh_fdr(const std::vector<double>& p) {
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("bh_fdr: p-value outside [0,1]");
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> adj(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const std::size_t i = order[r];
    running = std::min(running, p[i] * static_cast<double>(m) / static_cast<double>(r + 1));
    adj[i] = std::clamp(running, p[i], 1.0);
  }
  return adj;
}

const PairwiseResult* ComparisonReport::find(const std::string& metric, const std::string& a,
                                             const std::string& b) const {
  for (const auto& mc : metrics) {
    if (mc.metric != metric) continue;
    for (const auto& pr : mc.pairs)
      if ((pr.a == a && pr.b == b) || (pr.a == b && pr.b == a)) return &pr;
  }
  return nullptr;
}

namespace {

StatTestResult tolerant_ttest(std::span<const double> a, std::span<const double> b) {
  try {
    return paired_ttest(a, b);
  } catch (const DegenerateInput&) {
    StatTestResult r;
    r.test = "paired t-test";
    r.dof = static_cast<double>(a.size()) - 1;
    const double d = a[0] - b[0];
    if (d == 0.0) {
      r.statistic = 0;
      r.p = 1;
    } else {
      r.statistic = d > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0;
    }
    return r;
  }
}

StatTestResult tolerant_anova(const Eigen::MatrixXd& x) {
  try {
    return repeated_measures_anova(x);
  } catch (const DegenerateInput&) {
    StatTestResult r;
    r.test = "repeated-measures ANOVA";
    r.dof = static_cast<double>(x.cols() - 1);
    r.dof2 = static_cast<double>((x.cols() - 1) * (x.rows() - 1));
    r.statistic = std::numeric_limits<double>::infinity();
    r.p = 0;
    r.p_adjusted = 0;
    return r;
  }
}

}  // namespace

ComparisonReport compare_models(const std::vector<std::string>& models,
                                const std::vector<std::vector<RunMetrics>>& runs, double alpha) {
  if (models.size() != runs.size()) throw std::invalid_argument("compare_models: models/runs mismatch");
  if (models.size() < 2) throw std::invalid_argument("compare_models: need at least two models");
  const std::size_t n = runs[0].size();
  for (const auto& r : runs)
    if (r.size() != n) throw std::invalid_argument("compare_models: unequal run counts");
  if (n < 2) throw std::invalid_argument("compare_models: need at least two runs per model");

  ComparisonReport report;
  report.models = models;
  report.alpha = alpha;
  const std::size_t k = models.size();
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    MetricComparison mc;
    mc.metric = kMetricNames[m];
    Eigen::MatrixXd x(n, k);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t i = 0; i < n; ++i) x(i, j) = runs[j][i][m];
    mc.anova = tolerant_anova(x);
    mc.anova.significant = mc.anova.p < alpha;
    const bool gate = mc.anova.significant;

    std::vector<double> raw;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b) {
        PairwiseResult pr;
        pr.a = models[a];
        pr.b = models[b];
        pr.ran = gate;
        if (gate) {
          const Eigen::VectorXd ca = x.col(a), cb = x.col(b);
          pr.test = tolerant_ttest(std::span<const double>(ca.data(), n), std::span<const double>(cb.data(), n));
          raw.push_back(pr.test.p);
        }
        mc.pairs.push_back(pr);
      }
    if (gate) {
      const auto adj = bh_fdr(raw);
      for (std::size_t i = 0; i < mc.pairs.size(); ++i) {
        mc.pairs[i].test.p_adjusted = adj[i];
        mc.pairs[i].test.significant = adj[i] < alpha;
      }
    }
    report.metrics.push_back(std::move(mc));
  }
  return report;
}

namespace {

nlohmann::json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : "-inf";
}

}  // namespace

void to_json(nlohmann::json& j, const StatTestResult& r) {
  j = {{"test", r.test}, {"statistic", finite_or_string(r.statistic)}, {"dof", r.dof},
       {"p", r.p}, {"p_adjusted", r.p_adjusted}, {"significant", r.significant}};
  if (r.dof2 > 0) j["dof2"] = r.dof2;
}

void to_json(nlohmann::json& j, const ComparisonReport& r) {
  j = {{"models", r.models}, {"alpha", r.alpha}, {"correction", r.correction}};
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& mc : r.metrics) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& pr : mc.pairs) {
      nlohmann::json e = {{"a", pr.a}, {"b", pr.b}, {"ran", pr.ran}};
      if (pr.ran) e["result"] = pr.test;
      pairs.push_back(e);
    }
    metrics.push_back({{"metric", mc.metric}, {"anova", mc.anova}, {"pairwise", pairs}});
  }
  j["metrics"] = metrics;
}

}  // namespace pasfuse
