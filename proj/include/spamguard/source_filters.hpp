#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "spamguard/lookup.hpp"
#include "spamguard/message.hpp"

namespace spamguard {

using namespace std::chrono_literals;

enum class SpfResult { pass, fail, softfail, none };

inline std::string_view to_string(SpfResult r) {
  switch (r) {
    case SpfResult::pass: return "pass";
    case SpfResult::fail: return "fail";
    case SpfResult::softfail: return "softfail";
    case SpfResult::none: return "none";
  }
  return "none";
}

struct SourceFilterConfig {
  std::vector<std::string> dnsbl_zones;
  bool reject_on_dnsbl_hit = true;
  std::vector<std::string> surbl_lists{"sc.surbl.org", "ws.surbl.org", "ob.surbl.org", "ab.surbl.org"};
  std::set<std::string> surbl_whitelist;
  std::set<SpfResult> spf_reject_on{SpfResult::fail, SpfResult::softfail};
  bool rdns_require_ptr = true;
  bool rdns_require_helo_match = false;
  Duration greylist_min_retry = 10s;
  Duration greylist_max_retry = 12h;
  bool greylist_enabled = true;

  void validate() const {
    if (!(greylist_min_retry < greylist_max_retry))
      throw config_error("greylist: greylist_min_retry must be below greylist_max_retry");
    if (greylist_min_retry < 0s) throw config_error("greylist: negative retry window");
  }
};

struct Rejection {
  std::string reason;
  std::string detail;
};

// Outcome of a single source check: an optional rejection plus any availability warnings.
struct CheckResult {
  std::optional<Rejection> rejection;
  std::vector<std::string> warnings;

  bool rejected() const { return rejection.has_value(); }
};

// First zone (in configured order) that lists the client; unavailable zones are skipped.
inline CheckResult dnsbl_check(const ConnectionContext& ctx, const SourceFilterConfig& config,
                               const LookupProvider& provider) {
  CheckResult result;
  if (config.dnsbl_zones.empty()) {
    result.warnings.push_back("dnsbl: no zones configured");
    return result;
  }
  std::size_t unavailable = 0;
  for (const auto& zone : config.dnsbl_zones) {
    if (!provider.available(zone)) {
      ++unavailable;
      result.warnings.push_back("dnsbl: zone " + zone + " unavailable, skipped");
      continue;
    }
    if (provider.dnsbl_listed(ctx.client_ip, zone)) {
      result.rejection = Rejection{"dnsbl", zone};
      return result;
    }
  }
  if (unavailable == config.dnsbl_zones.size())
    result.warnings.push_back("dnsbl: degraded mode, every zone unavailable");
  return result;
}

namespace detail {

// The host followed by its parent domains down to two labels; IP literals stand alone.
inline std::vector<std::string> surbl_candidates(const std::string& host) {
  std::vector<std::string> out{host};
  if (Ipv4::try_parse(host)) return out;
  std::string_view rest(host);
  while (true) {
    auto dot = rest.find('.');
    if (dot == std::string_view::npos) break;
    auto parent = rest.substr(dot + 1);
    if (parent.find('.') == std::string_view::npos) break;
    out.emplace_back(parent);
    rest = parent;
  }
  return out;
}

inline bool whitelisted(const std::string& host, const std::set<std::string>& whitelist) {
  for (const auto& candidate : surbl_candidates(host))
    if (whitelist.contains(candidate)) return true;
  return false;
}

}  // namespace detail

// Any listed URL domain rejects; the rejection names the first (domain, list) hit.
inline CheckResult surbl_check(const EmailMessage& msg, const SourceFilterConfig& config,
                               const LookupProvider& provider) {
  CheckResult result;
  std::set<std::string> warned;
  for (const auto& host : extract_url_domains(msg.body)) {
    if (detail::whitelisted(host, config.surbl_whitelist)) continue;
    auto candidates = detail::surbl_candidates(host);
    for (const auto& list : config.surbl_lists) {
      if (!provider.available(list)) {
        if (warned.insert(list).second)
          result.warnings.push_back("surbl: list " + list + " unavailable, no check performed");
        continue;
      }
      for (const auto& domain : candidates) {
        if (provider.surbl_listed(domain, list)) {
          result.rejection = Rejection{"surbl", domain + " " + list};
          return result;
        }
      }
    }
  }
  return result;
}

inline SpfResult spf_check(const ConnectionContext& ctx, const LookupProvider& provider) {
  if (ctx.mail_from_domain.empty()) return SpfResult::none;
  auto policy = provider.spf_policy(ctx.mail_from_domain);
  if (!policy) return SpfResult::none;
  if (policy->authorized_ips.contains(ctx.client_ip)) return SpfResult::pass;
  return policy->failure_mode == SpfFailureMode::hard_fail ? SpfResult::fail : SpfResult::softfail;
}

inline CheckResult rdns_check(const ConnectionContext& ctx, const SourceFilterConfig& config,
                              const LookupProvider& provider) {
  CheckResult result;
  if (!config.rdns_require_ptr && !config.rdns_require_helo_match) return result;
  auto ptr = provider.ptr_record(ctx.client_ip);
  if (!ptr) {
    if (config.rdns_require_ptr) result.rejection = Rejection{"missing_ptr", ctx.client_ip.str()};
    else if (config.rdns_require_helo_match)
      result.rejection = Rejection{"helo_mismatch", "no PTR for " + ctx.client_ip.str()};
    return result;
  }
  auto strip_dot = [](std::string_view s) {
    if (!s.empty() && s.back() == '.') s.remove_suffix(1);
    return s;
  };
  if (config.rdns_require_helo_match && !detail::iequals(strip_dot(*ptr), strip_dot(ctx.helo_hostname)))
    result.rejection = Rejection{"helo_mismatch", *ptr + " != " + ctx.helo_hostname};
  return result;
}

enum class GreylistState { pending, confirmed };
enum class GreylistDecision { accept, tempfail };

struct GreylistEntry {
  EmailAddress sender;
  EmailAddress recipient;
  Ipv4 client_ip;
  Timestamp first_seen{0};
  GreylistState state = GreylistState::pending;
};

// Triplet store. check() is an atomic read-modify-write per call.
class GreylistStore {
 public:
  GreylistStore() = default;
  GreylistStore(const GreylistStore& other) : entries_(other.snapshot_map()) {}
  GreylistStore& operator=(const GreylistStore& other) {
    if (this != &other) {
      auto copy = other.snapshot_map();
      std::lock_guard lock(mutex_);
      entries_ = std::move(copy);
    }
    return *this;
  }

  GreylistDecision check(const EmailAddress& sender, const EmailAddress& recipient, Ipv4 ip,
                         Timestamp now, Duration min_retry, Duration max_retry) {
    std::lock_guard lock(mutex_);
    auto key = Key{sender, recipient, ip};
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      entries_.emplace(key, GreylistEntry{sender, recipient, ip, now, GreylistState::pending});
      return GreylistDecision::tempfail;
    }
    auto& entry = it->second;
    if (entry.state == GreylistState::confirmed) return GreylistDecision::accept;
    auto delta = now - entry.first_seen;
    if (delta < min_retry) return GreylistDecision::tempfail;
    if (delta > max_retry) {
      entry.first_seen = now;
      return GreylistDecision::tempfail;
    }
    entry.state = GreylistState::confirmed;
    return GreylistDecision::accept;
  }

  std::optional<GreylistEntry> find(const EmailAddress& sender, const EmailAddress& recipient, Ipv4 ip) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(Key{sender, recipient, ip});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

  std::vector<GreylistEntry> entries() const {
    std::vector<GreylistEntry> out;
    for (auto& [k, e] : snapshot_map()) out.push_back(e);
    return out;
  }

  // One line per triplet: "<sender> <recipient> <ip> <first_seen> <pending|confirmed>".
  void save(std::ostream& out) const {
    for (const auto& e : entries())
      out << e.sender.str() << ' ' << e.recipient.str() << ' ' << e.client_ip.str() << ' '
          << e.first_seen.count() << ' ' << (e.state == GreylistState::pending ? "pending" : "confirmed")
          << '\n';
  }

  static GreylistStore load(std::istream& in) {
    GreylistStore store;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto f = detail::split_whitespace(line);
      if (f.empty()) continue;
      if (f.size() != 5) throw parse_error("greylist snapshot needs five fields", line_no);
      auto sender = EmailAddress::try_parse(f[0]);
      auto rcpt = EmailAddress::try_parse(f[1]);
      auto ip = Ipv4::try_parse(f[2]);
      auto seen = detail::parse_int<std::int64_t>(f[3]);
      if (!sender || !rcpt || !ip || !seen || (f[4] != "pending" && f[4] != "confirmed"))
        throw parse_error("malformed greylist snapshot line", line_no);
      GreylistEntry e{*sender, *rcpt, *ip, Timestamp{*seen},
                      f[4] == "pending" ? GreylistState::pending : GreylistState::confirmed};
      if (!store.entries_.emplace(Key{e.sender, e.recipient, e.client_ip}, e).second)
        throw parse_error("duplicate greylist triplet", line_no);
    }
    return store;
  }

 private:
  using Key = std::tuple<EmailAddress, EmailAddress, Ipv4>;

  std::map<Key, GreylistEntry> snapshot_map() const {
    std::lock_guard lock(mutex_);
    return entries_;
  }

  mutable std::mutex mutex_;
  std::map<Key, GreylistEntry> entries_;
};

inline GreylistDecision greylist_check(const EmailAddress& sender, const EmailAddress& recipient,
                                       const ConnectionContext& ctx, const SourceFilterConfig& config,
                                       GreylistStore& store) {
  return store.check(sender, recipient, ctx.client_ip, ctx.timestamp, config.greylist_min_retry,
                     config.greylist_max_retry);
}

}  // namespace spamguard
