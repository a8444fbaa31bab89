#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spamguard/bayes.hpp"
#include "spamguard/lookup.hpp"
#include "spamguard/message.hpp"
#include "spamguard/pipeline.hpp"

namespace spamguard {

using Labels = std::map<std::string, Label>;

// "<filename> <spam|ham>" per line; blank lines and '#' comments are skipped.
inline Labels parse_labels(std::istream& in) {
  Labels labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    auto f = detail::split_whitespace(text);
    if (f.size() != 2 || (f[1] != "spam" && f[1] != "ham"))
      throw parse_error("expected '<filename> <spam|ham>'", line_no);
    if (!labels.emplace(std::string(f[0]), f[1] == "spam" ? Label::spam : Label::ham).second)
      throw parse_error("duplicate label for " + std::string(f[0]), line_no);
  }
  return labels;
}

inline Labels load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot open labels file: " + path.string());
  return parse_labels(in);
}

inline TokenTable load_token_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot open token table: " + path.string());
  return load_token_table(in);
}

// Connection data for a stored message: X-Client-IP and X-Helo headers, the Date header,
// and the envelope sender's domain as MAIL FROM domain.
inline ConnectionContext connection_for(const EmailMessage& msg) {
  ConnectionContext ctx;
  if (auto ip = msg.header("X-Client-IP")) {
    auto parsed = Ipv4::try_parse(detail::trim(*ip));
    if (!parsed) throw error("invalid X-Client-IP '" + std::string(*ip) + "'");
    ctx.client_ip = *parsed;
  }
  ctx.helo_hostname = std::string(msg.header("X-Helo").value_or(""));
  ctx.mail_from_domain = msg.envelope_sender.domain;
  ctx.timestamp = msg.date();
  return ctx;
}

struct SessionCounts {
  std::uint64_t messages = 0;
  std::uint64_t trapped = 0;  // rejected or quarantined
  std::uint64_t spam_delivered = 0;
};

struct RunReport {
  std::uint64_t total = 0;
  std::map<Disposition, std::uint64_t> by_disposition;
  // Rejections and quarantines per deciding stage.
  std::map<Stage, std::uint64_t> by_stage;
  std::map<std::int64_t, SessionCounts> sessions;
  std::uint64_t labeled_spam = 0;
  std::uint64_t labeled_ham = 0;
  std::uint64_t false_negatives = 0;
  std::uint64_t false_positives = 0;
  // Accepted labeled-spam deliveries per envelope recipient.
  std::map<EmailAddress, std::uint64_t> false_negatives_by_recipient;
  std::uint64_t false_negative_deliveries = 0;
  Timestamp origin{0};

  std::uint64_t count(Disposition d) const {
    auto it = by_disposition.find(d);
    return it == by_disposition.end() ? 0 : it->second;
  }

  std::uint64_t spam_delivered() const { return false_negatives; }

  // Mean accepted-spam deliveries per user and day over a population of `users`.
  double false_negatives_per_user_day(std::size_t users, double days) const {
    if (users == 0 || days <= 0.0) return 0.0;
    return static_cast<double>(false_negative_deliveries) / (static_cast<double>(users) * days);
  }
};

struct FilterRun {
  RunReport report;
  std::vector<DecisionLog> logs;
};

inline constexpr Duration session_window = 3h;

// Runs every entry through the pipeline in the given order. Learning from the trap applies
// as configured; greylist state starts empty.
inline FilterRun filter_corpus(const std::vector<CorpusEntry>& corpus, const PipelineConfig& config,
                               const LookupProvider& provider, const TokenTable& tokens,
                               const std::optional<Labels>& labels = std::nullopt) {
  FilterRun run;
  auto& report = run.report;
  if (labels)
    for (const auto& e : corpus)
      if (!labels->contains(e.filename)) throw error("no label for " + e.filename);

  Timestamp origin = Timestamp::max();
  for (const auto& e : corpus) origin = std::min(origin, e.message.date());
  report.origin = corpus.empty() ? Timestamp{0} : origin;

  auto table = tokens;
  table.spam_learning_enabled = config.spam_learning_enabled;
  table.ham_learning_enabled = config.ham_learning_enabled;
  PipelineState state(std::move(table), /*retain_trapped=*/false);

  for (const auto& e : corpus) {
    auto ctx = connection_for(e.message);
    auto result = process(ctx, e.message, e.filename, config, provider, state);
    const auto& v = result.verdict;
    ++report.total;
    ++report.by_disposition[v.disposition];
    auto& session = report.sessions[session_index(e.message.date(), report.origin, session_window)];
    ++session.messages;
    bool trapped = v.disposition == Disposition::reject_connection ||
                   v.disposition == Disposition::reject_message || v.disposition == Disposition::quarantine;
    if (trapped) {
      ++report.by_stage[v.stage];
      ++session.trapped;
    }
    if (labels) {
      auto label = labels->at(e.filename);
      if (label == Label::spam) {
        ++report.labeled_spam;
        if (v.disposition == Disposition::accept) {
          ++report.false_negatives;
          ++session.spam_delivered;
          for (const auto& r : e.message.envelope_recipients) {
            ++report.false_negatives_by_recipient[r];
            ++report.false_negative_deliveries;
          }
        }
      } else {
        ++report.labeled_ham;
        if (trapped) ++report.false_positives;
      }
    }
    run.logs.push_back(std::move(result.log));
  }
  return run;
}

// metric,value rows.
inline void write_report_csv(std::ostream& out, const RunReport& r) {
  out << "metric,value\n";
  out << "total," << r.total << '\n';
  for (auto d : {Disposition::accept, Disposition::reject_connection, Disposition::reject_message,
                 Disposition::temp_fail, Disposition::quarantine})
    out << "disposition_" << to_string(d) << ',' << r.count(d) << '\n';
  for (auto s : all_filter_stages) {
    auto it = r.by_stage.find(s);
    out << "stage_" << to_string(s) << ',' << (it == r.by_stage.end() ? 0 : it->second) << '\n';
  }
  out << "labeled_spam," << r.labeled_spam << '\n';
  out << "labeled_ham," << r.labeled_ham << '\n';
  out << "false_negatives," << r.false_negatives << '\n';
  out << "false_positives," << r.false_positives << '\n';
  out << "false_negative_deliveries," << r.false_negative_deliveries << '\n';
}

inline void write_sessions_csv(std::ostream& out, const RunReport& r) {
  out << "session,start,messages,trapped,spam_delivered\n";
  for (const auto& [idx, s] : r.sessions)
    out << idx << ',' << (r.origin + idx * session_window).count() << ',' << s.messages << ',' << s.trapped << ','
        << s.spam_delivered << '\n';
}

inline void write_recipients_csv(std::ostream& out, const RunReport& r) {
  out << "recipient,false_negatives\n";
  for (const auto& [rcpt, n] : r.false_negatives_by_recipient) out << rcpt.str() << ',' << n << '\n';
}

inline void write_decision_logs(std::ostream& out, const std::vector<DecisionLog>& logs) {
  for (const auto& log : logs) log.write(out);
}

inline void write_summary(std::ostream& out, const RunReport& r) {
  out << "messages: " << r.total << '\n';
  out << "accepted: " << r.count(Disposition::accept) << ", rejected: "
      << r.count(Disposition::reject_connection) + r.count(Disposition::reject_message)
      << ", quarantined: " << r.count(Disposition::quarantine)
      << ", temp-failed: " << r.count(Disposition::temp_fail) << '\n';
  for (const auto& [stage, n] : r.by_stage) out << "  " << to_string(stage) << ": " << n << '\n';
  if (r.labeled_spam + r.labeled_ham > 0)
    out << "false negatives: " << r.false_negatives << " of " << r.labeled_spam
        << " spam, false positives: " << r.false_positives << " of " << r.labeled_ham << " ham\n";
}

}  // namespace spamguard
