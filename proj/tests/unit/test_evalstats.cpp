#include "pasfuse/evalstats/report.hpp"
#include "pasfuse/ndcore/rng.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace pasfuse;

namespace {

ConfusionMatrix cm_of(Index tn, Index fp, Index fn, Index tp) {
  ConfusionMatrix cm;
  cm.tn = tn;
  cm.fp = fp;
  cm.fn = fn;
  cm.tp = tp;
  return cm;
}

std::vector<RunMetrics> runs_from(const std::vector<double>& acc, double offset = 0) {
  std::vector<RunMetrics> out;
  for (double a : acc) out.push_back({{a, a + offset, a, a, a}});
  return out;
}

}  // namespace

TEST_CASE("confusion counts") {
  const std::vector<int> y{1, 0, 1, 1, 0, 0};
  const std::vector<int> p{1, 1, 0, 1, 0, 0};
  const auto cm = confusion(y, p);
  CHECK(cm.tp == 2);
  CHECK(cm.fn == 1);
  CHECK(cm.fp == 1);
  CHECK(cm.tn == 2);
  const auto perfect = confusion(y, y);
  CHECK(perfect.fp == 0);
  CHECK(perfect.fn == 0);
  CHECK_THROWS(confusion(std::vector<int>{1, 0}, std::vector<int>{1}));
  CHECK_THROWS(confusion(std::vector<int>{2}, std::vector<int>{1}));
}

TEST_CASE("macro metrics reproduce published best runs") {
  const auto mri = macro_metrics(cm_of(144, 27, 7, 49));
  CHECK(std::abs(mri.accuracy - 0.850) <= 1e-3);
  CHECK(std::abs(mri.precision - 0.799) <= 1e-3);
  CHECK(std::abs(mri.recall - 0.859) <= 1e-3);
  CHECK(std::abs(mri.f1 - 0.818) <= 1e-3);
  const auto us = macro_metrics(cm_of(123, 12, 9, 53));
  CHECK(std::abs(us.accuracy - 0.893) <= 1e-3);
  CHECK(std::abs(us.precision - 0.874) <= 1e-3);
  CHECK(std::abs(us.recall - 0.883) <= 1e-3);
  const auto fusion = macro_metrics(cm_of(23, 2, 1, 14));
  CHECK(std::abs(fusion.accuracy - 0.925) <= 1e-3);
  CHECK(std::abs(fusion.precision - 0.917) <= 1e-3);
  CHECK(std::abs(fusion.recall - 0.927) <= 1e-3);
  const auto all = macro_metrics(cm_of(3, 0, 0, 2));
  CHECK(all.accuracy == 1.0);
  CHECK(all.precision == 1.0);
  CHECK(all.recall == 1.0);
  CHECK(all.f1 == 1.0);
  CHECK_THROWS(macro_metrics(ConfusionMatrix{}));
}

TEST_CASE("zero-denominator class terms are zero") {
  const auto m = macro_metrics(cm_of(5, 0, 3, 0));  // never predicts positive
  CHECK(m.accuracy == doctest::Approx(5.0 / 8));
  CHECK(m.precision == doctest::Approx((5.0 / 8) / 2));
  CHECK(m.recall == doctest::Approx(0.5));
}

TEST_CASE("roc auc examples") {
  CHECK(roc_auc(std::vector<int>{0, 0, 1, 1}, std::vector<double>{0.1, 0.4, 0.35, 0.8}).auc ==
        doctest::Approx(0.75));
  CHECK(roc_auc(std::vector<int>{0, 1, 0, 1}, std::vector<double>{0.1, 0.9, 0.2, 0.8}).auc == 1.0);
  CHECK(roc_auc(std::vector<int>{0, 1, 0, 1}, std::vector<double>{0.3, 0.3, 0.3, 0.3}).auc == 0.5);
  CHECK_THROWS_AS(roc_auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}), DegenerateInput);
}

TEST_CASE("trapezoid auc equals pairwise counting with ties") {
  Rng rng(77);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(60));
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
      s[i] = static_cast<double>(rng.below(8)) / 8.0;  // coarse grid forces ties
    }
    y[0] = 0;
    y[1] = 1;
    const auto curve = roc_auc(y, s);
    worst = std::max(worst, std::abs(curve.auc - oracle::auc_pairwise(y, s)));
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
      REQUIRE(curve.points[i].fpr >= curve.points[i - 1].fpr);
      REQUIRE(curve.points[i].tpr >= curve.points[i - 1].tpr);
    }
    CHECK(curve.points.back().fpr == 1.0);
    CHECK(curve.points.back().tpr == 1.0);
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("incomplete beta closed forms") {
  CHECK(incomplete_beta(1, 1, 0.3) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(incomplete_beta(2, 1, 0.3) == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(incomplete_beta(0.5, 0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  // dof 1: Cauchy, p = 1 - 2 atan(t)/pi
  CHECK(student_t_two_sided(1.0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(student_t_two_sided(0.0, 7) == doctest::Approx(1.0));
}

TEST_CASE("paired t-test") {
  const std::vector<double> a{1, 2, 3, 4, 5}, zero(5, 0.0);
  const auto r = paired_ttest(a, zero);
  CHECK(r.statistic == doctest::Approx(4.242641).epsilon(1e-6));
  CHECK(r.dof == 4);
  CHECK(std::abs(r.p - 0.0132356) <= 1e-6);
  CHECK(std::abs(r.p - oracle::t_two_sided_p(r.statistic, 4)) <= 1e-8);
  CHECK_THROWS_AS(paired_ttest(a, a), DegenerateInput);
  CHECK_THROWS(paired_ttest(std::vector<double>{1}, std::vector<double>{2}));

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(8));
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal() + 0.5;
    }
    const auto t = paired_ttest(x, y);
    CHECK(std::abs(t.p - oracle::t_two_sided_p(t.statistic, n - 1)) <= 1e-7);
  }
}

TEST_CASE("repeated-measures ANOVA") {
  Eigen::MatrixXd m(3, 2);
  m << 1, 2, 2, 4, 3, 5;
  const auto r = repeated_measures_anova(m);
  CHECK(r.dof == 1);
  CHECK(r.dof2 == 2);
  CHECK(r.statistic == doctest::Approx(25.0).epsilon(1e-9));
  CHECK(std::abs(r.p - 0.0377495) <= 1e-6);

  Eigen::MatrixXd same(3, 2);
  same << 1, 1, 2, 2, 4, 4;
  const auto z = repeated_measures_anova(same);
  CHECK(z.statistic == 0);
  CHECK(z.p == 1);

  Eigen::MatrixXd flat(3, 2);
  flat << 1, 2, 1, 2, 1, 2;
  CHECK_THROWS_AS(repeated_measures_anova(flat), DegenerateInput);
}

TEST_CASE("two-model ANOVA equals squared paired t") {
  Rng rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(6));
    Eigen::MatrixXd m(n, 2);
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = m(i, 0) = rng.normal();
      b[i] = m(i, 1) = rng.normal() + 0.3;
    }
    const auto f = repeated_measures_anova(m);
    const auto t = paired_ttest(a, b);
    CHECK(std::abs(f.statistic - t.statistic * t.statistic) <= 1e-6 * std::max(1.0, f.statistic));
    CHECK(std::abs(f.p - t.p) <= 1e-9);
  }
}

TEST_CASE("bh fdr") {
  CHECK(bh_fdr({0.2}) == std::vector<double>{0.2});
  auto a = bh_fdr({0.01, 0.02, 0.04});
  CHECK(a[0] == doctest::Approx(0.03));
  CHECK(a[1] == doctest::Approx(0.03));
  CHECK(a[2] == doctest::Approx(0.04));
  auto b = bh_fdr({0.01, 0.04, 0.03});
  CHECK(b[0] == doctest::Approx(0.03));
  CHECK(b[1] == doctest::Approx(0.04));
  CHECK(b[2] == doctest::Approx(0.04));
  CHECK_THROWS(bh_fdr({0.5, 1.2}));
  CHECK_THROWS(bh_fdr({-0.1}));

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(12));
    std::vector<double> p(m);
    for (auto& v : p) v = rng.below(4) == 0 ? 0.05 : rng.uniform();
    const auto adj = bh_fdr(p);
    const auto ref = oracle::bh(p);
    std::vector<std::size_t> perm(m);
    for (int i = 0; i < m; ++i) perm[i] = i;
    for (int i = m - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<double> q(m);
    for (int i = 0; i < m; ++i) q[i] = p[perm[i]];
    const auto adj_q = bh_fdr(q);
    for (int i = 0; i < m; ++i) {
      CHECK(adj[i] >= p[i]);
      CHECK(adj[i] <= 1.0);
      CHECK(adj[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      CHECK(adj_q[i] == adj[perm[i]]);
    }
  }
}

TEST_CASE("compare_models gating and layout") {
  const std::vector<std::string> names{"fusion", "mri", "us"};
  const auto fusion = runs_from({0.95, 0.93, 0.96, 0.94, 0.95});
  const auto mri = runs_from({0.71, 0.75, 0.70, 0.74, 0.72});
  const auto us = runs_from({0.74, 0.70, 0.73, 0.69, 0.75});
  const auto rep = compare_models(names, {fusion, mri, us});
  REQUIRE(rep.metrics.size() == 5);
  int adjusted = 0;
  for (const auto& mc : rep.metrics) {
    CHECK(mc.pairs.size() == 3);
    CHECK(mc.anova.significant);
    for (const auto& pr : mc.pairs) {
      CHECK(pr.ran);
      CHECK(pr.test.p_adjusted >= pr.test.p);
      CHECK(pr.test.p_adjusted <= 1.0);
      ++adjusted;
    }
  }
  CHECK(adjusted == 15);
  CHECK(rep.find("accuracy", "fusion", "mri")->test.significant);
  CHECK(rep.find("accuracy", "us", "fusion")->test.significant);
  CHECK_FALSE(rep.find("accuracy", "mri", "us")->test.significant);

  const auto copied = compare_models(names, {mri, mri, mri});
  for (const auto& mc : copied.metrics) {
    CHECK_FALSE(mc.anova.significant);
    for (const auto& pr : mc.pairs) {
      CHECK_FALSE(pr.ran);
      CHECK_FALSE(pr.test.significant);
    }
  }
  CHECK_THROWS(compare_models(names, {fusion, mri, runs_from({0.5})}));
}

TEST_CASE("compare_models handles constant shifts") {
  const auto base = runs_from({0.7, 0.72, 0.71, 0.69, 0.73});
  auto shifted = base;
  for (auto& r : shifted)
    for (auto& v : r.values) v += 0.1;
  const auto rep = compare_models({"a", "b"}, {shifted, base});
  const auto* pr = rep.find("accuracy", "a", "b");
  REQUIRE(pr != nullptr);
  CHECK(pr->ran);
  CHECK(pr->test.p == 0.0);
  CHECK(pr->test.significant);
}

TEST_CASE("summaries and reports") {
  const auto s = summarize(runs_from({0.8, 0.9, 1.0}));
  CHECK(s.mean[0] == doctest::Approx(0.9));
  CHECK(s.sd[0] == doctest::Approx(0.1));
  CHECK(s.best[0] == 1.0);
  CHECK(summarize(runs_from({0.5})).sd[0] == 0.0);

  const std::vector<std::string> names{"fusion", "mri"};
  const auto rep = compare_models(names, {runs_from({0.9, 0.95, 0.92}), runs_from({0.7, 0.72, 0.71})});
  nlohmann::json j = rep;
  CHECK(j["metrics"].size() == 5);
  CHECK(j["correction"].get<std::string>().find("within") != std::string::npos);
  const auto csv = comparison_csv(rep);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 5 * 2);
  const auto r = evaluate(std::vector<int>{0, 1, 0, 1}, std::vector<double>{0.2, 0.7, 0.6, 0.4});
  const auto svg = roc_svg({{"fusion", r.roc}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  const auto bars = summary_bar_svg(names, {s, s});
  CHECK(std::count(bars.begin(), bars.end(), '\n') > 10);
  nlohmann::json jr = r;
  CHECK(jr["confusion"]["tp"] == 1);
}
