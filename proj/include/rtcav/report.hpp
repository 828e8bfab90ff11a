#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rtcav/cav.hpp"
#include "rtcav/metrics.hpp"
#include "rtcav/relrank.hpp"
#include "rtcav/sanity.hpp"

namespace rtcav {

// "0.85 (0.00)": mean and std to two decimals.
std::string format_mean_std(double mean, double stddev);

std::string class_name(int class_id);  // 1 -> Presence, 0 -> Absence

// Columns concept,class,mean,std,p_value,n_excluded; values use the shortest
// round-trip decimal form.
std::string render_tcav_csv(const std::vector<TcavResult>& results);

struct TcavCsvRow {
  std::string concept_id;
  int class_id = 0;
  double mean = 0.0, stddev = 0.0, p_value = 0.0;
  std::size_t n_excluded = 0;
};
std::vector<TcavCsvRow> parse_tcav_csv(const std::string& csv);

std::string render_tcav_markdown(const std::vector<TcavResult>& results);
std::string render_ranking_markdown(const std::vector<RankingTable>& tables);
std::string render_sanity_markdown(const std::vector<SanityReport>& reports);

struct ReportInputs {
  std::vector<TcavResult> tcav;
  std::vector<RankingTable> rankings;
  std::optional<EvalMetrics> metrics;
  std::vector<SanityReport> sanity;
};

std::string render_report_markdown(const ReportInputs& in);

}  // namespace rtcav
