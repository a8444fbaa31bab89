#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spamguard/bayes.hpp"
#include "spamguard/config.hpp"
#include "spamguard/content_filters.hpp"
#include "spamguard/lookup.hpp"
#include "spamguard/message.hpp"
#include "spamguard/source_filters.hpp"

namespace spamguard {

enum class Stage { dnsbl, rdns, spf, greylist, content, surbl, bayes, policy, final_stage };

inline constexpr std::array<Stage, 8> all_filter_stages{Stage::dnsbl,   Stage::rdns,  Stage::spf,
                                                        Stage::greylist, Stage::content, Stage::surbl,
                                                        Stage::bayes,   Stage::policy};

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::dnsbl: return "dnsbl";
    case Stage::rdns: return "rdns";
    case Stage::spf: return "spf";
    case Stage::greylist: return "greylist";
    case Stage::content: return "content";
    case Stage::surbl: return "surbl";
    case Stage::bayes: return "bayes";
    case Stage::policy: return "policy";
    case Stage::final_stage: return "final";
  }
  return "final";
}

inline std::optional<Stage> stage_from_string(std::string_view name) {
  for (auto s : all_filter_stages)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

inline bool is_connection_stage(Stage s) {
  return s == Stage::dnsbl || s == Stage::rdns || s == Stage::spf || s == Stage::greylist;
}

enum class Disposition { accept, reject_connection, reject_message, temp_fail, quarantine };

inline std::string_view to_string(Disposition d) {
  switch (d) {
    case Disposition::accept: return "accept";
    case Disposition::reject_connection: return "reject_connection";
    case Disposition::reject_message: return "reject_message";
    case Disposition::temp_fail: return "temp_fail";
    case Disposition::quarantine: return "quarantine";
  }
  return "accept";
}

enum class Outcome { pass, reject, tempfail, quarantine };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::pass: return "pass";
    case Outcome::reject: return "reject";
    case Outcome::tempfail: return "tempfail";
    case Outcome::quarantine: return "quarantine";
  }
  return "pass";
}

struct Verdict {
  Disposition disposition = Disposition::accept;
  Stage stage = Stage::final_stage;
  std::string reason;
  Timestamp decided_at{0};

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct LogEntry {
  Stage stage;
  Outcome outcome;
  std::string detail;

  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

struct DecisionLog {
  std::string message_id;
  std::vector<LogEntry> entries;
  std::vector<std::string> warnings;
  std::optional<Verdict> verdict;

  void add(Stage stage, Outcome outcome, std::string detail) {
    entries.push_back({stage, outcome, std::move(detail)});
  }

  // "<msg-id> <stage> <pass|reject|tempfail|quarantine> <detail>", one line per entry.
  void write(std::ostream& out) const {
    for (const auto& e : entries)
      out << message_id << ' ' << to_string(e.stage) << ' ' << to_string(e.outcome) << ' '
          << (e.detail.empty() ? "-" : e.detail) << '\n';
  }

  friend bool operator==(const DecisionLog&, const DecisionLog&) = default;
};

inline std::vector<Stage> default_stage_order() {
  return {all_filter_stages.begin(), all_filter_stages.end()};
}

struct PipelineConfig {
  std::vector<Stage> stage_order = default_stage_order();
  SourceFilterConfig source;
  ContentRules content;
  PolicyRules policy;
  BayesConfig bayes;
  bool learn_from_trap = false;
  // Applied to the token table when it is loaded.
  bool spam_learning_enabled = true;
  bool ham_learning_enabled = true;
  std::optional<std::filesystem::path> token_table;

  bool enabled(Stage s) const {
    if (s == Stage::greylist && !source.greylist_enabled) return false;
    return std::find(stage_order.begin(), stage_order.end(), s) != stage_order.end();
  }

  void validate() const {
    bool seen_message_stage = false;
    for (std::size_t i = 0; i < stage_order.size(); ++i) {
      auto s = stage_order[i];
      if (std::find(stage_order.begin(), stage_order.begin() + static_cast<std::ptrdiff_t>(i), s) !=
          stage_order.begin() + static_cast<std::ptrdiff_t>(i))
        throw config_error("stages: duplicate stage '" + std::string(to_string(s)) + "'");
      if (is_connection_stage(s) && seen_message_stage)
        throw config_error("stages: connection stage '" + std::string(to_string(s)) +
                           "' listed after a message stage");
      if (!is_connection_stage(s)) seen_message_stage = true;
    }
    source.validate();
    content.validate();
    policy.validate();
    bayes.validate();
  }
};

namespace detail {

inline std::vector<Stage> parse_stage_list(const KeyValueFile& file, const KeyValueFile::Entry& e) {
  std::vector<Stage> out;
  for (const auto& name : split_list(e.value)) {
    if (name == "none") continue;
    auto s = stage_from_string(lowercase(name));
    if (!s) file.fail("unknown stage '" + name + "'", e.line);
    out.push_back(*s);
  }
  return out;
}

inline std::set<EmailAddress> parse_address_set(const KeyValueFile& file, std::string_view section,
                                                std::string_view key) {
  std::set<EmailAddress> out;
  if (auto e = file.find(section, key)) {
    for (const auto& item : split_list(e->value)) {
      auto a = EmailAddress::try_parse(item);
      if (!a) file.fail("invalid address '" + item + "'", e->line);
      out.insert(*a);
    }
  }
  return out;
}

inline std::set<std::string> lowercase_set(const std::vector<std::string>& items) {
  std::set<std::string> out;
  for (const auto& i : items) out.insert(lowercase(i));
  return out;
}

}  // namespace detail

// Reads the pipeline sections of `file`. Relative paths resolve against base_dir.
// Does not check for unknown keys, so scenario files can carry extra sections.
inline PipelineConfig read_pipeline_config(const KeyValueFile& file, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  if (auto e = file.find("stages", "order")) c.stage_order = detail::parse_stage_list(file, *e);
  file.read("stages", "learn_from_trap", c.learn_from_trap);

  file.read("dnsbl", "dnsbl_zones", c.source.dnsbl_zones);
  file.read("dnsbl", "reject_on_dnsbl_hit", c.source.reject_on_dnsbl_hit);

  file.read("surbl", "surbl_lists", c.source.surbl_lists);
  std::vector<std::string> whitelist;
  file.read("surbl", "surbl_whitelist", whitelist);
  c.source.surbl_whitelist = detail::lowercase_set(whitelist);

  if (auto e = file.find("spf", "spf_reject_on")) {
    c.source.spf_reject_on.clear();
    for (const auto& item : detail::split_list(e->value)) {
      if (item == "fail") c.source.spf_reject_on.insert(SpfResult::fail);
      else if (item == "softfail") c.source.spf_reject_on.insert(SpfResult::softfail);
      else if (item == "none") c.source.spf_reject_on.insert(SpfResult::none);
      else file.fail("spf_reject_on accepts fail, softfail, none", e->line);
    }
  }

  file.read("greylist", "greylist_enabled", c.source.greylist_enabled);
  file.read("greylist", "greylist_min_retry", c.source.greylist_min_retry);
  file.read("greylist", "greylist_max_retry", c.source.greylist_max_retry);

  file.read("rdns", "rdns_require_ptr", c.source.rdns_require_ptr);
  file.read("rdns", "rdns_require_helo_match", c.source.rdns_require_helo_match);

  file.read("content", "blocked_subject_terms", c.content.blocked_subject_terms);
  file.read("content", "blocked_body_terms", c.content.blocked_body_terms);
  c.content.blocked_senders = detail::parse_address_set(file, "content", "blocked_senders");
  std::vector<std::string> domains;
  file.read("content", "blocked_domains", domains);
  c.content.blocked_domains = detail::lowercase_set(domains);
  file.read("content", "allowlist_mode", c.content.allowlist_mode);
  c.content.allowed_senders = detail::parse_address_set(file, "content", "allowed_senders");
  file.read_size("content", "max_attachment_bytes", c.content.max_attachment_bytes);
  file.read("content", "blocked_extension_patterns", c.content.blocked_extension_patterns);

  file.read("policy", "require_signature", c.policy.require_signature);
  if (auto word = file.get("policy", "code_word"); word && !word->empty()) c.policy.code_word = *word;
  file.read("policy", "flagged_display_names", c.policy.flagged_display_names);
  file.read("policy", "local_domain", c.policy.local_domain);
  c.policy.local_domain = detail::lowercase(c.policy.local_domain);

  file.read("bayes", "threshold", c.bayes.threshold);
  file.read("bayes", "dictionary_cap", c.bayes.dictionary_cap);
  file.read("bayes", "probability_floor", c.bayes.probability_floor);
  file.read("bayes", "probability_ceiling", c.bayes.probability_ceiling);
  file.read("bayes", "max_tokens_scored", c.bayes.max_tokens_scored);
  file.read("bayes", "spam_learning_enabled", c.spam_learning_enabled);
  file.read("bayes", "ham_learning_enabled", c.ham_learning_enabled);
  if (auto path = file.get("bayes", "token_table"); path && !path->empty()) {
    std::filesystem::path p(*path);
    c.token_table = p.is_absolute() ? p : base_dir / p;
  }

  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  auto file = KeyValueFile::load(path);
  auto config = read_pipeline_config(file, path.parent_path());
  file.check_consumed();
  return config;
}

inline void write_pipeline_config(std::ostream& out, const PipelineConfig& c) {
  auto on = [](bool b) { return b ? "on" : "off"; };
  auto list = [](const auto& items) {
    std::vector<std::string> v;
    for (const auto& i : items) {
      if constexpr (std::is_same_v<std::decay_t<decltype(i)>, EmailAddress>) v.push_back(i.str());
      else v.push_back(std::string(i));
    }
    return detail::join(v, ", ");
  };
  std::vector<std::string> stages;
  for (auto s : c.stage_order) stages.emplace_back(to_string(s));
  std::vector<std::string> spf;
  for (auto r : c.source.spf_reject_on) spf.emplace_back(to_string(r));

  out << "[stages]\norder = " << (stages.empty() ? "none" : detail::join(stages, ", "))
      << "\nlearn_from_trap = " << on(c.learn_from_trap) << "\n\n";
  out << "[dnsbl]\ndnsbl_zones = " << list(c.source.dnsbl_zones)
      << "\nreject_on_dnsbl_hit = " << on(c.source.reject_on_dnsbl_hit) << "\n\n";
  out << "[surbl]\nsurbl_lists = " << list(c.source.surbl_lists)
      << "\nsurbl_whitelist = " << list(c.source.surbl_whitelist) << "\n\n";
  out << "[spf]\nspf_reject_on = " << detail::join(spf, ", ") << "\n\n";
  out << "[greylist]\ngreylist_enabled = " << on(c.source.greylist_enabled)
      << "\ngreylist_min_retry = " << c.source.greylist_min_retry.count() << "s"
      << "\ngreylist_max_retry = " << c.source.greylist_max_retry.count() << "s\n\n";
  out << "[rdns]\nrdns_require_ptr = " << on(c.source.rdns_require_ptr)
      << "\nrdns_require_helo_match = " << on(c.source.rdns_require_helo_match) << "\n\n";
  out << "[content]\nblocked_subject_terms = " << list(c.content.blocked_subject_terms)
      << "\nblocked_body_terms = " << list(c.content.blocked_body_terms)
      << "\nblocked_senders = " << list(c.content.blocked_senders)
      << "\nblocked_domains = " << list(c.content.blocked_domains)
      << "\nallowlist_mode = " << on(c.content.allowlist_mode)
      << "\nallowed_senders = " << list(c.content.allowed_senders) << "\nmax_attachment_bytes = "
      << (c.content.max_attachment_bytes ? std::to_string(*c.content.max_attachment_bytes) : "off")
      << "\nblocked_extension_patterns = " << list(c.content.blocked_extension_patterns) << "\n\n";
  out << "[policy]\nrequire_signature = " << on(c.policy.require_signature)
      << "\ncode_word = " << c.policy.code_word.value_or("")
      << "\nflagged_display_names = " << list(c.policy.flagged_display_names)
      << "\nlocal_domain = " << c.policy.local_domain << "\n\n";
  out << "[bayes]\nthreshold = " << c.bayes.threshold << "\ndictionary_cap = " << c.bayes.dictionary_cap
      << "\nprobability_floor = " << c.bayes.probability_floor
      << "\nprobability_ceiling = " << c.bayes.probability_ceiling
      << "\nmax_tokens_scored = " << c.bayes.max_tokens_scored
      << "\nspam_learning_enabled = " << on(c.spam_learning_enabled)
      << "\nham_learning_enabled = " << on(c.ham_learning_enabled)
      << "\ntoken_table = " << (c.token_table ? c.token_table->generic_string() : "") << '\n';
}

struct TrapEntry {
  std::string message_id;
  Stage stage = Stage::final_stage;
  Disposition disposition = Disposition::quarantine;
  Timestamp at{0};
  // Held for quarantined messages when the trap retains content.
  std::shared_ptr<const EmailMessage> message;
};

// Append-only record of every message the pipeline rejected or quarantined.
class SpamTrap {
 public:
  explicit SpamTrap(bool retain_messages = true) : retain_messages_(retain_messages) {}
  SpamTrap(const SpamTrap& other) : retain_messages_(other.retain_messages_), entries_(other.entries()) {}

  bool retains_messages() const { return retain_messages_; }

  void append(TrapEntry entry) {
    if (!retain_messages_) entry.message.reset();
    std::lock_guard lock(mutex_);
    entries_.push_back(std::move(entry));
  }

  std::vector<TrapEntry> entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  bool retain_messages_;
  mutable std::mutex mutex_;
  std::vector<TrapEntry> entries_;
};

// Mutable state the pipeline consults: greylist triplets, the token table and the trap.
// The token table follows a single-writer rule: scoring takes a shared lock, learning an exclusive one.
class PipelineState {
 public:
  explicit PipelineState(TokenTable tokens = {}, bool retain_trapped = true)
      : trap(retain_trapped), tokens_(std::move(tokens)) {}

  GreylistStore greylist;
  SpamTrap trap;

  template <typename F>
  decltype(auto) read_tokens(F&& f) const {
    std::shared_lock lock(tokens_mutex_);
    return std::forward<F>(f)(static_cast<const TokenTable&>(tokens_));
  }

  template <typename F>
  decltype(auto) write_tokens(F&& f) {
    std::unique_lock lock(tokens_mutex_);
    return std::forward<F>(f)(tokens_);
  }

  TokenTable tokens() const {
    return read_tokens([](const TokenTable& t) { return t; });
  }

 private:
  mutable std::shared_mutex tokens_mutex_;
  TokenTable tokens_;
};

namespace detail {

inline void absorb_warnings(DecisionLog& log, CheckResult& r) {
  for (auto& w : r.warnings) log.warnings.push_back(std::move(w));
}

inline Verdict finish(DecisionLog& log, Disposition d, Stage s, std::string reason, Timestamp at) {
  Verdict v{d, s, std::move(reason), at};
  log.verdict = v;
  return v;
}

inline std::string format_score(double score) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(4);
  ss << score;
  return ss.str();
}

}  // namespace detail

// Runs the enabled connection-time stages in configured order. nullopt means proceed.
inline std::optional<Verdict> evaluate_connection(const ConnectionContext& ctx, const EmailAddress& sender,
                                                  std::span<const EmailAddress> recipients,
                                                  const PipelineConfig& config, const LookupProvider& provider,
                                                  GreylistStore& greylist, DecisionLog& log) {
  for (auto stage : config.stage_order) {
    if (!is_connection_stage(stage) || !config.enabled(stage)) continue;
    switch (stage) {
      case Stage::dnsbl: {
        auto r = dnsbl_check(ctx, config.source, provider);
        detail::absorb_warnings(log, r);
        if (r.rejected() && config.source.reject_on_dnsbl_hit) {
          log.add(stage, Outcome::reject, "listed in " + r.rejection->detail);
          return detail::finish(log, Disposition::reject_connection, stage, "dnsbl", ctx.timestamp);
        }
        log.add(stage, Outcome::pass, r.rejected() ? "listed in " + r.rejection->detail + " (not rejecting)" : "not listed");
        break;
      }
      case Stage::rdns: {
        auto r = rdns_check(ctx, config.source, provider);
        if (r.rejected()) {
          log.add(stage, Outcome::reject, r.rejection->reason + " " + r.rejection->detail);
          return detail::finish(log, Disposition::reject_connection, stage, r.rejection->reason, ctx.timestamp);
        }
        log.add(stage, Outcome::pass, "ok");
        break;
      }
      case Stage::spf: {
        auto result = spf_check(ctx, provider);
        if (config.source.spf_reject_on.contains(result)) {
          log.add(stage, Outcome::reject, std::string(to_string(result)) + " for " + ctx.mail_from_domain);
          return detail::finish(log, Disposition::reject_connection, stage, std::string(to_string(result)),
                                ctx.timestamp);
        }
        log.add(stage, Outcome::pass, std::string(to_string(result)));
        break;
      }
      case Stage::greylist: {
        // Every recipient's triplet is recorded, even after the first tempfail.
        std::vector<std::string> deferred;
        for (const auto& rcpt : recipients)
          if (greylist_check(sender, rcpt, ctx, config.source, greylist) == GreylistDecision::tempfail)
            deferred.push_back(rcpt.str());
        if (!deferred.empty()) {
          log.add(stage, Outcome::tempfail, "unconfirmed triplet for " + detail::join(deferred, ","));
          return detail::finish(log, Disposition::temp_fail, stage, "greylisted", ctx.timestamp);
        }
        log.add(stage, Outcome::pass, "confirmed");
        break;
      }
      default: break;
    }
  }
  return std::nullopt;
}

// Runs the enabled message-time stages. Accepted messages get a closing "final" log entry.
inline Verdict evaluate_message(const EmailMessage& msg, Timestamp now, const PipelineConfig& config,
                                const LookupProvider& provider, const TokenTable& tokens, DecisionLog& log) {
  for (auto stage : config.stage_order) {
    if (is_connection_stage(stage) || !config.enabled(stage)) continue;
    switch (stage) {
      case Stage::content: {
        auto r = content_check(msg, config.content);
        if (r.rejected()) {
          log.add(stage, Outcome::reject, r.rejection->reason + " " + r.rejection->detail);
          return detail::finish(log, Disposition::reject_message, stage, r.rejection->reason, now);
        }
        log.add(stage, Outcome::pass, "clean");
        break;
      }
      case Stage::surbl: {
        auto r = surbl_check(msg, config.source, provider);
        detail::absorb_warnings(log, r);
        if (r.rejected()) {
          log.add(stage, Outcome::reject, "listed " + r.rejection->detail);
          return detail::finish(log, Disposition::reject_message, stage, "surbl", now);
        }
        log.add(stage, Outcome::pass, "no listed domains");
        break;
      }
      case Stage::bayes: {
        if (tokens.spam_message_total == 0 || tokens.ham_message_total == 0) {
          log.add(stage, Outcome::pass, "untrained");
          log.warnings.emplace_back("bayes: token table untrained, stage skipped");
          break;
        }
        double score = score_message(msg, tokens, config.bayes);
        if (classify(score, config.bayes) == Label::spam) {
          log.add(stage, Outcome::quarantine, "score " + detail::format_score(score));
          return detail::finish(log, Disposition::quarantine, stage, "bayes", now);
        }
        log.add(stage, Outcome::pass, "score " + detail::format_score(score));
        break;
      }
      case Stage::policy: {
        auto a = policy_check(msg, config.policy);
        if (a.suspicious()) {
          log.add(stage, Outcome::quarantine, "suspicion " + std::to_string(a.score) + " " + detail::join(a.reasons, ","));
          return detail::finish(log, Disposition::quarantine, stage, detail::join(a.reasons, ","), now);
        }
        log.add(stage, Outcome::pass, "suspicion 0");
        break;
      }
      default: break;
    }
  }
  log.add(Stage::final_stage, Outcome::pass, "accepted");
  return detail::finish(log, Disposition::accept, Stage::final_stage, "accepted", now);
}

struct ProcessResult {
  Verdict verdict;
  DecisionLog log;
};

inline ProcessResult process(const ConnectionContext& ctx, const EmailMessage& msg, std::string message_id,
                             const PipelineConfig& config, const LookupProvider& provider, PipelineState& state) {
  ProcessResult result;
  result.log.message_id = std::move(message_id);
  auto& log = result.log;

  if (auto v = evaluate_connection(ctx, msg.envelope_sender, msg.envelope_recipients, config, provider,
                                   state.greylist, log)) {
    result.verdict = *v;
  } else {
    result.verdict = state.read_tokens(
        [&](const TokenTable& t) { return evaluate_message(msg, ctx.timestamp, config, provider, t, log); });
  }

  const auto& v = result.verdict;
  if (v.disposition == Disposition::reject_connection || v.disposition == Disposition::reject_message ||
      v.disposition == Disposition::quarantine) {
    TrapEntry entry{log.message_id, v.stage, v.disposition, v.decided_at, nullptr};
    if (v.disposition == Disposition::quarantine && state.trap.retains_messages())
      entry.message = std::make_shared<const EmailMessage>(msg);
    state.trap.append(std::move(entry));
  }
  if (v.disposition == Disposition::quarantine && config.learn_from_trap) {
    state.write_tokens([&](TokenTable& t) {
      if (learn(t, msg, Label::spam)) prune_dictionary(t, config.bayes);
    });
  }
  return result;
}

struct TrapStats {
  std::map<Stage, std::uint64_t> by_stage;
  // session index -> stage -> count
  std::map<std::int64_t, std::map<Stage, std::uint64_t>> by_session;
  std::uint64_t total = 0;
};

inline std::int64_t session_index(Timestamp t, Timestamp origin, Duration window) {
  auto offset = (t - origin).count();
  auto w = window.count();
  return offset >= 0 ? offset / w : -((-offset + w - 1) / w);
}

// Trapped and rejected counts grouped by stage and by fixed-length session (3 hours by default).
inline TrapStats trap_stats(std::span<const TrapEntry> trap, Timestamp origin, Duration window = 3h) {
  if (window <= Duration{0}) throw config_error("trap_stats: session window must be positive");
  TrapStats stats;
  for (const auto& e : trap) {
    ++stats.by_stage[e.stage];
    ++stats.by_session[session_index(e.at, origin, window)][e.stage];
    ++stats.total;
  }
  return stats;
}

}  // namespace spamguard
