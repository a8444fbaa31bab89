#pragma once

#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "spamguard/config.hpp"
#include "spamguard/pipeline.hpp"
#include "spamguard/simulator.hpp"

namespace spamguard::sim {

namespace detail {

inline Ipv4 read_ip(const KeyValueFile& file, std::string_view section, std::string_view key, Ipv4 fallback) {
  auto e = file.find(section, key);
  if (!e) return fallback;
  auto ip = Ipv4::try_parse(e->value);
  if (!ip) file.fail("'" + std::string(key) + "' must be an IPv4 address", e->line);
  return *ip;
}

inline std::optional<Timestamp> read_optional_time(const KeyValueFile& file, std::string_view section,
                                                   std::string_view key) {
  auto e = file.find(section, key);
  if (!e || e->value.empty() || e->value == "off") return std::nullopt;
  // Re-read through the typed accessor for suffix handling.
  Duration d{0};
  file.read(section, key, d);
  return Timestamp{d};
}

inline double read_factor(const KeyValueFile& file, std::string_view section, std::string_view key,
                          double fallback) {
  auto e = file.find(section, key);
  if (!e) return fallback;
  if (e->value == "inf") return std::numeric_limits<double>::infinity();
  double v = fallback;
  file.read(section, key, v);
  return v;
}

}  // namespace detail

// Reads a scenario from an already parsed file. Relative paths resolve against base_dir.
inline Scenario read_scenario(const KeyValueFile& file, const std::filesystem::path& base_dir) {
  Scenario s;
  s.pipeline = spamguard::read_pipeline_config(file, base_dir);

  std::size_t individuals = 200;
  std::size_t groups = 20;
  std::string domain = "corp.example";
  file.read("directory", "individuals", individuals);
  file.read("directory", "groups", groups);
  file.read("directory", "local_domain", domain);
  s.directory = Directory::make_default(domain, individuals, groups);
  auto& infra = s.infrastructure;
  infra.relay_ip = detail::read_ip(file, "directory", "relay_ip", infra.relay_ip);
  file.read("directory", "partner_domain", infra.partner_domain);
  infra.partner_domain = spamguard::detail::lowercase(infra.partner_domain);
  infra.partner_ip = detail::read_ip(file, "directory", "partner_ip", infra.partner_ip);
  if (s.pipeline.policy.local_domain.empty()) s.pipeline.policy.local_domain = s.directory.local_domain;

  auto& w = s.worm;
  file.read("worm", "name", w.name);
  file.read("worm", "enabled", w.inject_seed);
  file.read("worm", "attachment_min", w.attachment_min_bytes);
  file.read("worm", "attachment_max", w.attachment_max_bytes);
  if (auto e = file.find("worm", "attachment_min_kb")) {
    auto v = spamguard::detail::parse_int<std::uint64_t>(e->value);
    if (!v) file.fail("attachment_min_kb must be an integer", e->line);
    w.attachment_min_bytes = *v * 1024;
  }
  if (auto e = file.find("worm", "attachment_max_kb")) {
    auto v = spamguard::detail::parse_int<std::uint64_t>(e->value);
    if (!v) file.fail("attachment_max_kb must be an integer", e->line);
    w.attachment_max_bytes = *v * 1024;
  }
  file.read("worm", "attachment_name_pattern", w.attachment_name_pattern);
  file.read("worm", "subject_pool", w.subject_pool);
  file.read("worm", "send_interval", w.send_interval);
  file.read("worm", "download_urls", w.download_urls);
  if (auto e = file.find("worm", "targets")) {
    if (e->value == "groups_only") w.targets = WormTargets::groups_only;
    else if (e->value == "all_known") w.targets = WormTargets::all_known;
    else file.fail("targets must be groups_only or all_known", e->line);
  }
  Duration seed_at = w.seed_at;
  file.read("worm", "seed_at", seed_at);
  w.seed_at = seed_at;
  w.seed_ip = detail::read_ip(file, "worm", "seed_ip", w.seed_ip);
  file.read("worm", "seed_display_name", w.seed_display_name);

  auto& u = s.users;
  file.read("users", "execution_probability", u.execution_probability);
  file.read("users", "forward_probability", u.forward_probability);
  file.read("users", "report_probability", u.report_probability);
  file.read("users", "daily_mail_rate", u.daily_mail_rate);

  file.read("server", "capacity_per_minute", s.server.capacity_per_minute);
  file.read("server", "outage_threshold", s.server.outage_threshold);
  file.read("server", "degraded_threshold", s.server.degraded_threshold);

  file.read("run", "seed", s.seed);
  file.read("run", "duration", s.duration);
  s.rename_groups_at = detail::read_optional_time(file, "run", "rename_groups_at");
  s.quarantine_infected_at = detail::read_optional_time(file, "run", "quarantine_infected_at");
  if (auto fixture = file.get("run", "fixture"); fixture && !fixture->empty()) {
    std::filesystem::path p(*fixture);
    s.fixture = FixtureProvider::load(p.is_absolute() ? p : base_dir / p);
  }

  auto& m = s.monitor;
  file.read("monitor", "enabled", m.enabled);
  m.factor = detail::read_factor(file, "monitor", "factor", m.factor);
  file.read("monitor", "window", m.window_minutes);
  file.read("monitor", "warmup", m.warmup_minutes);
  file.read("monitor", "auto_rename", m.auto_rename);
  file.read("monitor", "auto_quarantine", m.auto_quarantine);

  if (s.pipeline.token_table) {
    std::ifstream in(*s.pipeline.token_table);
    if (!in) throw error("cannot open token table: " + s.pipeline.token_table->string());
    s.tokens = load_token_table(in);
  }
  s.validate();
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  auto file = KeyValueFile::load(path);
  auto scenario = read_scenario(file, path.parent_path());
  file.check_consumed();
  return scenario;
}

}  // namespace spamguard::sim
