#include "pasfuse/evalstats/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pasfuse {

namespace {

void check_binary(int v, const char* what) {
  if (v != 0 && v != 1) throw std::invalid_argument(std::string("invalid ") + what + " value " + std::to_string(v));
}

double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

}  // namespace

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size())
    throw std::invalid_argument("confusion: length mismatch");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_binary(labels[i], "label");
    check_binary(predictions[i], "prediction");
    if (labels[i] == 1)
      predictions[i] == 1 ? ++cm.tp : ++cm.fn;
    else
      predictions[i] == 1 ? ++cm.fp : ++cm.tn;
  }
  return cm;
}

MacroMetrics macro_metrics(const ConfusionMatrix& cm) {
  if (cm.total() <= 0) throw std::invalid_argument("macro_metrics: empty confusion matrix");
  const double tp = cm.tp, tn = cm.tn, fp = cm.fp, fn = cm.fn;
  MacroMetrics m;
  m.accuracy = (tp + tn) / cm.total();
  const double p1 = ratio(tp, tp + fp), r1 = ratio(tp, tp + fn);
  const double p0 = ratio(tn, tn + fn), r0 = ratio(tn, tn + fp);
  const double f1 = ratio(2 * p1 * r1, p1 + r1), f0 = ratio(2 * p0 * r0, p0 + r0);
  m.precision = (p0 + p1) / 2;
  m.recall = (r0 + r1) / 2;
  m.f1 = (f0 + f1) / 2;
  return m;
}

RocCurve roc_auc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw std::invalid_argument("roc_auc: length mismatch");
  Index pos = 0, neg = 0;
  for (int l : labels) {
    check_binary(l, "label");
    l == 1 ? ++pos : ++neg;
  }
  if (pos == 0 || neg == 0) throw DegenerateInput("roc_auc: both classes required");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("roc_auc: non-finite score");

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  Index tp = 0, fp = 0;
  double area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    const Index tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == thr; ++i) labels[order[i]] == 1 ? ++tp : ++fp;
    area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0) / 2.0;
    curve.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, thr});
  }
  curve.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

MetricsReport evaluate(std::span<const int> labels, std::span<const double> scores, double threshold) {
  if (labels.size() != scores.size()) throw std::invalid_argument("evaluate: length mismatch");
  std::vector<int> pred(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= threshold ? 1 : 0;
  MetricsReport r;
  r.cm = confusion(labels, pred);
  r.macro = macro_metrics(r.cm);
  const RocCurve roc = roc_auc(labels, scores);
  r.auc = roc.auc;
  r.roc = roc.points;
  return r;
}

MetricSummary summarize(const std::vector<RunMetrics>& runs) {
  if (runs.empty()) throw std::invalid_argument("summarize: no runs");
  MetricSummary s;
  s.runs = static_cast<int>(runs.size());
  const double n = static_cast<double>(runs.size());
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    double total = 0, best = runs[0][m];
    for (const auto& r : runs) {
      total += r[m];
      best = std::max(best, r[m]);
    }
    const double mean = total / n;
    double ss = 0;
    for (const auto& r : runs) ss += (r[m] - mean) * (r[m] - mean);
    s.best[m] = best;
    s.mean[m] = mean;
    s.sd[m] = runs.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  }
  return s;
}

void to_json(nlohmann::json& j, const ConfusionMatrix& cm) {
  j = {{"tp", cm.tp}, {"tn", cm.tn}, {"fp", cm.fp}, {"fn", cm.fn}};
}

void to_json(nlohmann::json& j, const MacroMetrics& m) {
  j = {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : r.roc) {
    nlohmann::json thr = std::isfinite(p.threshold) ? nlohmann::json(p.threshold) : nlohmann::json("inf");
    roc.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", thr}});
  }
  j = {{"confusion", r.cm}, {"accuracy", r.macro.accuracy}, {"precision", r.macro.precision},
       {"recall", r.macro.recall}, {"f1", r.macro.f1}, {"auc", r.auc}, {"roc", roc}};
}

void to_json(nlohmann::json& j, const RunMetrics& r) {
  j = nlohmann::json::object();
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) j[kMetricNames[m]] = r[m];
}

void from_json(const nlohmann::json& j, RunMetrics& r) {
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) r.values[m] = j.at(kMetricNames[m]).get<double>();
}

void to_json(nlohmann::json& j, const MetricSummary& s) {
  j = {{"runs", s.runs}};
  for (std::size_t m = 0; m < kMetricNames.size(); ++m)
    j[kMetricNames[m]] = {{"best", s.best[m]}, {"mean", s.mean[m]}, {"sd", s.sd[m]}};
}

}  // namespace pasfuse
