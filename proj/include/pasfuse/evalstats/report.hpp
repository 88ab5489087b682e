#pragma once

#include "pasfuse/evalstats/stats.hpp"

#include <filesystem>
#include <utility>

namespace pasfuse {

/// One row per run: model,run,accuracy,auc,precision,recall,f1.
std::string runs_csv(const std::vector<std::string>& models,
                     const std::vector<std::vector<RunMetrics>>& runs);

/// Flat Table-6 layout: metric,comparison,statistic,dof,p,p_adjusted,significant.
std::string comparison_csv(const ComparisonReport& report);

/// Standalone SVG of one or more ROC curves.
std::string roc_svg(const std::vector<std::pair<std::string, std::vector<RocPoint>>>& curves);

/// Grouped bars (metrics on the x axis, one bar per model) of mean values
/// with sd whiskers.
std::string summary_bar_svg(const std::vector<std::string>& models,
                            const std::vector<MetricSummary>& summaries);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pasfuse
