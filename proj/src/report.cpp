#include "rtcav/report.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "rtcav/text.hpp"

namespace rtcav {

std::string format_mean_std(double mean, double stddev) {
  return format_fixed(mean, 2) + " (" + format_fixed(stddev, 2) + ")";
}

std::string class_name(int class_id) {
  if (class_id == 1) return "Presence";
  if (class_id == 0) return "Absence";
  return "class" + std::to_string(class_id);
}

std::string render_tcav_csv(const std::vector<TcavResult>& results) {
  std::ostringstream out;
  out << "concept,class,mean,std,p_value,n_excluded\n";
  for (const auto& r : results)
    out << r.concept_id << ',' << r.class_id << ',' << format_double(r.mean) << ',' << format_double(r.stddev) << ','
        << (r.p_undefined ? std::string("nan") : format_double(r.p_value)) << ',' << r.n_excluded << '\n';
  return out.str();
}

std::vector<TcavCsvRow> parse_tcav_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::vector<TcavCsvRow> rows;
  if (!std::getline(in, line) || trim(line) != "concept,class,mean,std,p_value,n_excluded")
    throw ValidationError("TCAV CSV has an unexpected header");
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw ValidationError("TCAV CSV row needs 6 fields: " + line);
    rows.push_back({f[0], static_cast<int>(parse_int(f[1])), parse_double(f[2]), parse_double(f[3]), parse_double(f[4]),
                    static_cast<std::size_t>(parse_int(f[5]))});
  }
  return rows;
}

namespace {

std::vector<int> classes_of(const std::vector<TcavResult>& results) {
  std::vector<int> classes;
  for (const auto& r : results)
    if (std::find(classes.begin(), classes.end(), r.class_id) == classes.end()) classes.push_back(r.class_id);
  // Presence first, as in the usual table layout.
  std::sort(classes.begin(), classes.end(), std::greater<>());
  return classes;
}

}  // namespace

std::string render_tcav_markdown(const std::vector<TcavResult>& results) {
  const auto classes = classes_of(results);
  std::vector<std::string> concepts;
  std::map<std::pair<std::string, int>, const TcavResult*> cell;
  for (const auto& r : results) {
    if (std::find(concepts.begin(), concepts.end(), r.concept_id) == concepts.end()) concepts.push_back(r.concept_id);
    cell[{r.concept_id, r.class_id}] = &r;
  }
  std::ostringstream out;
  out << "| Concept |";
  for (int k : classes) out << ' ' << class_name(k) << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < classes.size(); ++i) out << "---|";
  out << '\n';
  bool any_nonsignificant = false;
  for (const auto& c : concepts) {
    out << "| " << c << " |";
    for (int k : classes) {
      const auto it = cell.find({c, k});
      if (it == cell.end()) {
        out << " - |";
        continue;
      }
      const auto& r = *it->second;
      const bool significant = !r.p_undefined && r.p_value < 0.05;
      any_nonsignificant |= !significant;
      out << ' ' << format_mean_std(r.mean, r.stddev) << (significant ? "" : "†") << " |";
    }
    out << '\n';
  }
  if (any_nonsignificant) out << "\n† not significant (p >= 0.05) against 0.5, two-sided one-sample t-test.\n";
  return out.str();
}

std::string render_ranking_markdown(const std::vector<RankingTable>& tables) {
  std::ostringstream out;
  for (const auto& t : tables) {
    out << "### Concept ranking: " << class_name(t.class_id) << "\n\n| Rank | Concept | Wins | Draws |\n|---|---|---|---|\n";
    for (std::size_t r = 0; r < t.ranking.size(); ++r)
      out << "| " << r + 1 << " | " << t.ranking[r].concept_id << " | " << t.ranking[r].wins << " | "
          << t.ranking[r].draws << " |\n";
    out << '\n';
  }
  return out.str();
}

std::string render_sanity_markdown(const std::vector<SanityReport>& reports) {
  std::ostringstream out;
  out << "| Concept | AUC | TCAV Presence | TCAV Absence | Success |\n|---|---|---|---|---|\n";
  for (const auto& r : reports)
    out << "| " << r.concept_id << " | " << format_fixed(r.metrics.auc, 2) << " | "
        << format_mean_std(r.presence.mean, r.presence.stddev) << " | "
        << format_mean_std(r.absence.mean, r.absence.stddev) << " | " << (r.success ? "yes" : "no") << " |\n";
  return out.str();
}

std::string render_report_markdown(const ReportInputs& in) {
  std::ostringstream out;
  out << "# Robust TCAV report\n\n";
  if (in.metrics) {
    out << "## Model\n\n| AUC | Reliability |\n|---|---|\n| " << format_fixed(in.metrics->auc, 2) << " | "
        << tier_name(in.metrics->tier) << " |\n\n";
  }
  if (!in.tcav.empty()) out << "## TCAV scores (mean with standard deviation)\n\n" << render_tcav_markdown(in.tcav) << '\n';
  if (!in.rankings.empty()) out << "## Relative importance\n\n" << render_ranking_markdown(in.rankings);
  if (!in.sanity.empty()) out << "## Sanity check\n\n" << render_sanity_markdown(in.sanity) << '\n';
  return out.str();
}

}  // namespace rtcav
