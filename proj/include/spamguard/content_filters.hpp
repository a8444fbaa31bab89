#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "spamguard/error.hpp"
#include "spamguard/message.hpp"
#include "spamguard/source_filters.hpp"

namespace spamguard {

struct ContentRules {
  std::vector<std::string> blocked_subject_terms;
  std::vector<std::string> blocked_body_terms;
  std::set<EmailAddress> blocked_senders;
  std::set<std::string> blocked_domains;
  bool allowlist_mode = false;
  std::set<EmailAddress> allowed_senders;
  std::optional<std::uint64_t> max_attachment_bytes;
  std::vector<std::string> blocked_extension_patterns;

  void validate() const {
    if (allowlist_mode && allowed_senders.empty())
      throw config_error("content: allowlist_mode requires allowed_senders");
    if (max_attachment_bytes && *max_attachment_bytes == 0)
      throw config_error("content: max_attachment_bytes must be positive");
  }
};

struct PolicyRules {
  bool require_signature = false;
  std::optional<std::string> code_word;
  std::vector<std::string> flagged_display_names;
  // Domain whose name impersonation checks protect.
  std::string local_domain;

  void validate() const {
    if (code_word && code_word->empty()) throw config_error("policy: code_word must be non-empty");
  }
};

inline CheckResult keyword_filter(const EmailMessage& msg, const ContentRules& rules) {
  CheckResult result;
  for (const auto& term : rules.blocked_subject_terms) {
    if (!term.empty() && detail::icontains(msg.subject, term)) {
      result.rejection = Rejection{"keyword", "subject: " + term};
      return result;
    }
  }
  for (const auto& term : rules.blocked_body_terms) {
    if (!term.empty() && detail::icontains(msg.body, term)) {
      result.rejection = Rejection{"keyword", "body: " + term};
      return result;
    }
  }
  return result;
}

inline CheckResult sender_filter(const EmailMessage& msg, const ContentRules& rules) {
  CheckResult result;
  const auto& sender = msg.envelope_sender;
  if (rules.blocked_senders.contains(sender))
    result.rejection = Rejection{"blocked_sender", sender.str()};
  else if (rules.blocked_domains.contains(sender.domain))
    result.rejection = Rejection{"blocked_domain", sender.domain};
  else if (rules.allowlist_mode && !rules.allowed_senders.contains(sender))
    result.rejection = Rejection{"not_allowlisted", sender.str()};
  return result;
}

// Matches a filename against a dot-separated pattern such as "*.exe" or "*.*.exe".
//
// The first pattern segment matches the base name alone. Later segments are either a
// literal, matching exactly one extension, or '*', matching one or more extensions.
// So "*.exe" accepts only single-extension .exe files while "*.*.exe" needs at least
// two extensions, the last being exe.
inline bool match_extension_pattern(std::string_view pattern, std::string_view filename) {
  auto lowered = detail::lowercase(pattern);
  auto pat = detail::split(lowered, '.');
  auto base = detail::split(filename, '.').front();
  auto chain = extension_chain(filename);

  auto segment_matches = [](std::string_view p, std::string_view s) { return p == "*" || p == s; };
  if (!segment_matches(pat[0], detail::lowercase(base))) return false;

  // Backtracking over the extension segments; patterns are a handful of segments long.
  auto match = [&](auto& self, std::size_t pi, std::size_t ci) -> bool {
    if (pi == pat.size()) return ci == chain.size();
    if (ci == chain.size()) return false;
    if (pat[pi] == "*") {
      for (std::size_t take = 1; ci + take <= chain.size(); ++take)
        if (self(self, pi + 1, ci + take)) return true;
      return false;
    }
    return pat[pi] == chain[ci] && self(self, pi + 1, ci + 1);
  };
  return match(match, 1, 0);
}

inline CheckResult attachment_filter(const EmailMessage& msg, const ContentRules& rules) {
  CheckResult result;
  for (const auto& a : msg.attachments) {
    if (rules.max_attachment_bytes && a.size_bytes > *rules.max_attachment_bytes) {
      result.rejection = Rejection{"size", a.filename};
      return result;
    }
  }
  for (const auto& a : msg.attachments) {
    for (const auto& pattern : rules.blocked_extension_patterns) {
      if (match_extension_pattern(pattern, a.filename)) {
        result.rejection = Rejection{"extension", a.filename + " (" + pattern + ")"};
        return result;
      }
    }
  }
  return result;
}

// Content stage: sender, then attachment, then keyword rules; the first rejection wins.
inline CheckResult content_check(const EmailMessage& msg, const ContentRules& rules) {
  if (auto r = sender_filter(msg, rules); r.rejected()) return r;
  if (auto r = attachment_filter(msg, rules); r.rejected()) return r;
  return keyword_filter(msg, rules);
}

struct PolicyAssessment {
  int score = 0;
  std::vector<std::string> reasons;

  bool suspicious() const { return score >= 1; }
};

inline PolicyAssessment policy_check(const EmailMessage& msg, const PolicyRules& rules) {
  PolicyAssessment a;
  if (rules.require_signature && !msg.has_header("X-Signature")) {
    ++a.score;
    a.reasons.emplace_back("missing_signature");
  }
  if (rules.code_word && !detail::icontains(msg.body, *rules.code_word)) {
    ++a.score;
    a.reasons.emplace_back("missing_code_word");
  }
  if (!rules.flagged_display_names.empty() && !rules.local_domain.empty() &&
      detail::iequals(msg.envelope_sender.domain, rules.local_domain)) {
    auto from = msg.header("From").value_or("");
    for (const auto& name : rules.flagged_display_names) {
      if (!name.empty() && detail::icontains(from, name)) {
        ++a.score;
        a.reasons.emplace_back("impersonation");
        break;
      }
    }
  }
  return a;
}

}  // namespace spamguard
