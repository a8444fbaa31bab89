#pragma once

#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "spamguard/corpus.hpp"
#include "spamguard/pipeline.hpp"
#include "spamguard/report.hpp"

namespace spamguard {

// Two runs of one corpus under a baseline and a variant configuration.
struct ExperimentResult {
  std::string name;
  std::string baseline_label;
  std::string variant_label;
  RunReport baseline;
  RunReport variant;
  // Extra metric,value rows for the summary.
  std::vector<std::pair<std::string, std::string>> metrics;

  std::uint64_t baseline_delivered() const { return baseline.spam_delivered(); }
  std::uint64_t variant_delivered() const { return variant.spam_delivered(); }

  // (variant - baseline) / baseline of delivered spam; 0 when the baseline delivered none.
  double relative_change() const {
    if (baseline_delivered() == 0) return 0.0;
    return (static_cast<double>(variant_delivered()) - static_cast<double>(baseline_delivered())) /
           static_cast<double>(baseline_delivered());
  }
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"dnsbl-ablation", "surbl-sessions", "defense-on-off"};
  return names;
}

namespace detail {

inline RunReport run_variant(const std::filesystem::path& workspace, std::string_view corpus_dir,
                             std::string_view config_name, const FixtureProvider& fixture) {
  auto config = load_pipeline_config(workspace / config_name);
  TokenTable tokens;
  if (config.token_table) tokens = load_token_table(*config.token_table);
  auto dir = workspace / corpus_dir;
  auto corpus = load_corpus(dir);
  auto labels = load_labels(dir / "labels.txt");
  return filter_corpus(corpus, config, fixture, tokens, labels).report;
}

inline std::string fixed(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << v;
  return ss.str();
}

}  // namespace detail

// Runs a named experiment over a workspace written by gen-corpus.
inline ExperimentResult run_experiment(std::string_view name, const std::filesystem::path& workspace) {
  if (!std::filesystem::is_directory(workspace)) throw error("workspace not found: " + workspace.string());
  auto spec = corpus::load_corpus_spec(workspace / "corpus.conf");
  auto fixture = FixtureProvider::load(workspace / "fixture.txt");
  ExperimentResult r;
  r.name = std::string(name);
  if (name == "dnsbl-ablation") {
    r.baseline_label = "three_zones";
    r.variant_label = "two_zones";
    r.baseline = detail::run_variant(workspace, "dnsbl", "full.conf", fixture);
    r.variant = detail::run_variant(workspace, "dnsbl", "ablated.conf", fixture);
    auto days = static_cast<double>(spec.dnsbl_days);
    r.metrics.emplace_back("delivered_spam_increase", detail::fixed(r.relative_change()));
    r.metrics.emplace_back("fn_per_user_day_three_zones",
                           detail::fixed(r.baseline.false_negatives_per_user_day(spec.users, days)));
    r.metrics.emplace_back("fn_per_user_day_two_zones",
                           detail::fixed(r.variant.false_negatives_per_user_day(spec.users, days)));
  } else if (name == "surbl-sessions") {
    r.baseline_label = "surbl_on";
    r.variant_label = "surbl_off";
    r.baseline = detail::run_variant(workspace, "mixed", "full.conf", fixture);
    r.variant = detail::run_variant(workspace, "mixed", "surbl-off.conf", fixture);
    r.metrics.emplace_back("delivered_spam_delta",
                           std::to_string(static_cast<std::int64_t>(r.variant_delivered()) -
                                          static_cast<std::int64_t>(r.baseline_delivered())));
  } else if (name == "defense-on-off") {
    r.baseline_label = "defense_off";
    r.variant_label = "defense_on";
    r.baseline = detail::run_variant(workspace, "mixed", "none.conf", fixture);
    r.variant = detail::run_variant(workspace, "mixed", "full.conf", fixture);
    r.metrics.emplace_back("delivered_spam_reduction", detail::fixed(-r.relative_change()));
  } else {
    throw error("unknown experiment '" + std::string(name) + "' (expected dnsbl-ablation, surbl-sessions or "
                "defense-on-off)");
  }
  r.metrics.emplace_back("false_positives_" + r.baseline_label, std::to_string(r.baseline.false_positives));
  r.metrics.emplace_back("false_positives_" + r.variant_label, std::to_string(r.variant.false_positives));
  return r;
}

// session,start,<baseline>,<variant>,delta with delivered-spam counts per 3-hour session.
inline void write_experiment_sessions_csv(std::ostream& out, const ExperimentResult& r) {
  out << "session,start," << r.baseline_label << ',' << r.variant_label << ",delta\n";
  std::map<std::int64_t, std::pair<std::uint64_t, std::uint64_t>> rows;
  for (const auto& [idx, s] : r.baseline.sessions) rows[idx].first = s.spam_delivered;
  for (const auto& [idx, s] : r.variant.sessions) rows[idx].second = s.spam_delivered;
  for (const auto& [idx, v] : rows)
    out << idx << ',' << (r.baseline.origin + idx * session_window).count() << ',' << v.first << ',' << v.second
        << ',' << static_cast<std::int64_t>(v.second) - static_cast<std::int64_t>(v.first) << '\n';
}

inline void write_experiment_summary_csv(std::ostream& out, const ExperimentResult& r) {
  out << "metric,value\n";
  out << "experiment," << r.name << '\n';
  out << "delivered_spam_" << r.baseline_label << ',' << r.baseline_delivered() << '\n';
  out << "delivered_spam_" << r.variant_label << ',' << r.variant_delivered() << '\n';
  for (const auto& [k, v] : r.metrics) out << k << ',' << v << '\n';
}

}  // namespace spamguard
