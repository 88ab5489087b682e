#include "pasfuse/evalstats/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace pasfuse {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string num(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string svg_open(int w, int h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

}  // namespace

std::string runs_csv(const std::vector<std::string>& models,
                     const std::vector<std::vector<RunMetrics>>& runs) {
  std::ostringstream os;
  os << "model,run";
  for (const char* m : kMetricNames) os << ',' << m;
  os << '\n';
  for (std::size_t j = 0; j < models.size(); ++j)
    for (std::size_t i = 0; i < runs[j].size(); ++i) {
      os << models[j] << ',' << i;
      for (double v : runs[j][i].values) os << ',' << num(v, 10);
      os << '\n';
    }
  return os.str();
}

std::string comparison_csv(const ComparisonReport& report) {
  std::ostringstream os;
  os << "metric,comparison,statistic,dof,p,p_adjusted,significant\n";
  for (const auto& mc : report.metrics) {
    os << mc.metric << ",ANOVA," << num(mc.anova.statistic, 10) << ',' << num(mc.anova.dof) << ';'
       << num(mc.anova.dof2) << ',' << num(mc.anova.p, 10) << ',' << num(mc.anova.p_adjusted, 10) << ','
       << (mc.anova.significant ? 1 : 0) << '\n';
    for (const auto& pr : mc.pairs) {
      os << mc.metric << ',' << pr.a << " vs " << pr.b << ',';
      if (pr.ran)
        os << num(pr.test.statistic, 10) << ',' << num(pr.test.dof) << ',' << num(pr.test.p, 10) << ','
           << num(pr.test.p_adjusted, 10) << ',' << (pr.test.significant ? 1 : 0) << '\n';
      else
        os << ",,,,0\n";
    }
  }
  return os.str();
}

std::string roc_svg(const std::vector<std::pair<std::string, std::vector<RocPoint>>>& curves) {
  constexpr int W = 420, H = 420, L = 50, T = 20, S = 340;
  std::string s = svg_open(W, H);
  s += "<rect x=\"" + std::to_string(L) + "\" y=\"" + std::to_string(T) + "\" width=\"" + std::to_string(S) +
       "\" height=\"" + std::to_string(S) + "\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + std::to_string(L) + "\" y1=\"" + std::to_string(T + S) + "\" x2=\"" +
       std::to_string(L + S) + "\" y2=\"" + std::to_string(T) + "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    s += "<text x=\"" + num(L + v * S) + "\" y=\"" + std::to_string(T + S + 16) + "\" text-anchor=\"middle\">" +
         num(v, 2) + "</text>\n";
    s += "<text x=\"" + std::to_string(L - 6) + "\" y=\"" + num(T + S - v * S + 4) + "\" text-anchor=\"end\">" +
         num(v, 2) + "</text>\n";
  }
  s += "<text x=\"" + std::to_string(L + S / 2) + "\" y=\"" + std::to_string(H - 6) +
       "\" text-anchor=\"middle\">False positive rate</text>\n";
  s += "<text transform=\"translate(14," + std::to_string(T + S / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">True positive rate</text>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* color = kPalette[c % 5];
    std::string pts;
    for (const auto& p : curves[c].second) pts += num(L + p.fpr * S) + "," + num(T + S - p.tpr * S) + " ";
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts +
         "\"/>\n";
    const int y = T + S - 16 * static_cast<int>(curves.size() - c) - 4;
    s += "<text x=\"" + std::to_string(L + S - 8) + "\" y=\"" + std::to_string(y) + "\" text-anchor=\"end\" fill=\"" +
         color + "\">" + escape_xml(curves[c].first) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::string summary_bar_svg(const std::vector<std::string>& models,
                            const std::vector<MetricSummary>& summaries) {
  constexpr int W = 640, H = 360, L = 50, T = 30, PW = 560, PH = 280;
  std::string s = svg_open(W, H);
  s += "<line x1=\"" + std::to_string(L) + "\" y1=\"" + std::to_string(T + PH) + "\" x2=\"" +
       std::to_string(L + PW) + "\" y2=\"" + std::to_string(T + PH) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    s += "<text x=\"" + std::to_string(L - 6) + "\" y=\"" + num(T + PH - v * PH + 4) + "\" text-anchor=\"end\">" +
         num(v, 2) + "</text>\n";
  }
  const double group = static_cast<double>(PW) / kMetricNames.size();
  const double bar = group * 0.8 / std::max<std::size_t>(1, models.size());
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    const double gx = L + m * group + group * 0.1;
    for (std::size_t j = 0; j < models.size(); ++j) {
      const double mean = std::clamp(summaries[j].mean[m], 0.0, 1.0);
      const double sd = summaries[j].sd[m];
      const double x = gx + j * bar;
      s += "<rect x=\"" + num(x) + "\" y=\"" + num(T + PH - mean * PH) + "\" width=\"" + num(bar * 0.9) +
           "\" height=\"" + num(mean * PH) + "\" fill=\"" + kPalette[j % 5] + "\"/>\n";
      const double cx = x + bar * 0.45;
      const double lo = std::clamp(mean - sd, 0.0, 1.0), hi = std::clamp(mean + sd, 0.0, 1.0);
      s += "<line x1=\"" + num(cx) + "\" y1=\"" + num(T + PH - lo * PH) + "\" x2=\"" + num(cx) + "\" y2=\"" +
           num(T + PH - hi * PH) + "\" stroke=\"black\"/>\n";
    }
    s += "<text x=\"" + num(gx + group * 0.4) + "\" y=\"" + std::to_string(T + PH + 16) +
         "\" text-anchor=\"middle\">" + kMetricNames[m] + "</text>\n";
  }
  for (std::size_t j = 0; j < models.size(); ++j)
    s += "<text x=\"" + std::to_string(L + 10 + 110 * static_cast<int>(j)) + "\" y=\"18\" fill=\"" +
         kPalette[j % 5] + "\">" + escape_xml(models[j]) + "</text>\n";
  return s + "</svg>\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace pasfuse
