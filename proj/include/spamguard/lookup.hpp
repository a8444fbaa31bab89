#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "spamguard/error.hpp"
#include "spamguard/message.hpp"

namespace spamguard {

enum class SpfFailureMode { hard_fail, soft_fail };

struct SpfPolicy {
  std::set<Ipv4> authorized_ips;
  SpfFailureMode failure_mode = SpfFailureMode::hard_fail;
};

// Everything the source filters ask of DNS. Implementations must answer deterministically.
class LookupProvider {
 public:
  virtual ~LookupProvider() = default;

  // False when a DNSBL zone or SURBL list cannot be reached; distinct from "not listed".
  virtual bool available(std::string_view zone_or_list) const = 0;
  virtual bool dnsbl_listed(Ipv4 ip, std::string_view zone) const = 0;
  virtual bool surbl_listed(std::string_view domain, std::string_view list) const = 0;
  virtual std::optional<SpfPolicy> spf_policy(std::string_view domain) const = 0;
  virtual std::optional<std::string> ptr_record(Ipv4 ip) const = 0;
};

// Provider backed by fixture records:
//
//   dnsbl <zone> <ip>
//   surbl <list> <domain>
//   spf <domain> <hard|soft> <ip>[,<ip>...]
//   ptr <ip> <hostname>
//   unavailable <zone-or-list>
//
// '#' starts a comment line.
class FixtureProvider : public LookupProvider {
 public:
  static FixtureProvider parse(std::istream& in) {
    FixtureProvider fx;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto text = detail::trim(line);
      if (text.empty() || text.front() == '#') continue;
      auto f = detail::split_whitespace(text);
      auto need = [&](std::size_t lo, std::size_t hi) {
        if (f.size() < lo || f.size() > hi)
          throw parse_error("wrong field count for '" + std::string(f[0]) + "' record", line_no);
      };
      auto ip = [&](std::string_view s) {
        auto parsed = Ipv4::try_parse(s);
        if (!parsed) throw parse_error("invalid IPv4 address '" + std::string(s) + "'", line_no);
        return *parsed;
      };
      if (f[0] == "dnsbl") {
        need(3, 3);
        fx.add_dnsbl(f[1], ip(f[2]));
      } else if (f[0] == "surbl") {
        need(3, 3);
        fx.add_surbl(f[1], f[2]);
      } else if (f[0] == "spf") {
        need(3, 4);
        SpfFailureMode mode;
        if (f[2] == "hard") mode = SpfFailureMode::hard_fail;
        else if (f[2] == "soft") mode = SpfFailureMode::soft_fail;
        else throw parse_error("spf mode must be 'hard' or 'soft'", line_no);
        std::set<Ipv4> ips;
        if (f.size() == 4)
          for (const auto& item : detail::split_list(f[3])) ips.insert(ip(item));
        fx.add_spf(f[1], mode, ips);
      } else if (f[0] == "ptr") {
        need(3, 3);
        fx.add_ptr(ip(f[1]), f[2]);
      } else if (f[0] == "unavailable") {
        need(2, 2);
        fx.mark_unavailable(f[1]);
      } else {
        throw parse_error("unknown record type '" + std::string(f[0]) + "'", line_no);
      }
    }
    return fx;
  }

  static FixtureProvider load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open fixture file: " + path.string());
    try {
      return parse(in);
    } catch (const parse_error& e) {
      throw parse_error(path.string() + ": " + e.what());
    }
  }

  void add_dnsbl(std::string_view zone, Ipv4 ip) { dnsbl_.insert({detail::lowercase(zone), ip}); }
  void add_surbl(std::string_view list, std::string_view domain) {
    surbl_.insert({detail::lowercase(list), detail::lowercase(domain)});
  }
  // Repeated records for one domain merge their address sets; the last mode wins.
  void add_spf(std::string_view domain, SpfFailureMode mode, const std::set<Ipv4>& ips) {
    auto& policy = spf_[detail::lowercase(domain)];
    policy.failure_mode = mode;
    policy.authorized_ips.insert(ips.begin(), ips.end());
  }
  void add_ptr(Ipv4 ip, std::string_view host) { ptr_[ip] = std::string(host); }
  void mark_unavailable(std::string_view zone_or_list) { unavailable_.insert(detail::lowercase(zone_or_list)); }

  bool available(std::string_view zone_or_list) const override {
    return !unavailable_.contains(detail::lowercase(zone_or_list));
  }
  bool dnsbl_listed(Ipv4 ip, std::string_view zone) const override {
    return dnsbl_.contains({detail::lowercase(zone), ip});
  }
  bool surbl_listed(std::string_view domain, std::string_view list) const override {
    return surbl_.contains({detail::lowercase(list), detail::lowercase(domain)});
  }
  std::optional<SpfPolicy> spf_policy(std::string_view domain) const override {
    auto it = spf_.find(detail::lowercase(domain));
    if (it == spf_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::string> ptr_record(Ipv4 ip) const override {
    auto it = ptr_.find(ip);
    if (it == ptr_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::set<std::pair<std::string, Ipv4>> dnsbl_;
  std::set<std::pair<std::string, std::string>> surbl_;
  std::map<std::string, SpfPolicy> spf_;
  std::map<Ipv4, std::string> ptr_;
  std::set<std::string> unavailable_;
};

}  // namespace spamguard
