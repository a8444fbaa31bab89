#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spamguard/lookup.hpp"
#include "spamguard/message.hpp"
#include "spamguard/pipeline.hpp"
#include "spamguard/random.hpp"

namespace spamguard::sim {

using spamguard::hash_string;
using spamguard::KeyedRng;
using spamguard::mix64;

// Tags that keep the key spaces of different decisions apart.
enum class DrawKind : std::uint64_t { seed_mail = 1, worm_mail, legit_mail, behavior, forward_target };

// ---------------------------------------------------------------------------
// World model
// ---------------------------------------------------------------------------

struct Directory {
  std::vector<EmailAddress> individual_addresses;
  std::map<EmailAddress, std::vector<EmailAddress>> group_addresses;
  std::string local_domain = "corp.example";
  // Group names retired by a rename; mail to them bounces.
  std::set<EmailAddress> retired;

  bool is_group(const EmailAddress& a) const { return group_addresses.contains(a); }

  std::vector<EmailAddress> groups() const {
    std::vector<EmailAddress> out;
    for (const auto& [g, members] : group_addresses) out.push_back(g);
    return out;
  }

  void validate() const {
    std::set<EmailAddress> individuals(individual_addresses.begin(), individual_addresses.end());
    if (individuals.size() != individual_addresses.size())
      throw config_error("directory: duplicate individual address");
    for (const auto& [group, members] : group_addresses) {
      if (individuals.contains(group)) throw config_error("directory: group address clashes with a user");
      for (const auto& m : members)
        if (!individuals.contains(m))
          throw config_error("directory: member " + m.str() + " of " + group.str() + " is not a user");
    }
  }

  // `individuals` users; group 0 is allstaff, the rest partition the users round-robin.
  static Directory make_default(std::string domain = "corp.example", std::size_t individuals = 200,
                                std::size_t groups = 20) {
    static const char* const names[] = {"allstaff", "sales",    "support", "finance",   "hr",
                                        "it",       "marketing", "legal",  "research",  "admin",
                                        "ops",      "security",  "facilities", "training", "procurement",
                                        "qa",       "design",    "events", "board",     "helpdesk"};
    Directory d;
    d.local_domain = detail::lowercase(domain);
    for (std::size_t i = 0; i < individuals; ++i) {
      auto n = std::to_string(i + 1);
      d.individual_addresses.push_back({"user" + std::string(3 - std::min<std::size_t>(3, n.size()), '0') + n,
                                        d.local_domain});
    }
    if (groups == 0 || individuals == 0) return d;
    auto group_name = [&](std::size_t g) {
      return g < std::size(names) ? std::string(names[g]) : "group" + std::to_string(g);
    };
    d.group_addresses[{group_name(0), d.local_domain}] = d.individual_addresses;
    std::size_t departments = groups - 1;
    for (std::size_t g = 1; g < groups; ++g) {
      std::vector<EmailAddress> members;
      for (std::size_t i = 0; i < individuals; ++i)
        if (i % departments == g - 1) members.push_back(d.individual_addresses[i]);
      d.group_addresses[{group_name(g), d.local_domain}] = std::move(members);
    }
    return d;
  }
};

enum class HostState { clean, infected, quarantined };

inline std::string_view to_string(HostState s) {
  switch (s) {
    case HostState::clean: return "clean";
    case HostState::infected: return "infected";
    case HostState::quarantined: return "quarantined";
  }
  return "clean";
}

struct Host {
  EmailAddress owner;
  HostState state = HostState::clean;
  std::optional<Timestamp> infected_at;
  Ipv4 address;
  Timestamp next_send{0};
};

enum class WormTargets { groups_only, all_known };

struct WormProfile {
  std::string name = "WORM_STRAT.BG";
  std::uint64_t attachment_min_bytes = 140 * 1024;
  std::uint64_t attachment_max_bytes = 180 * 1024;
  // "{n}" is replaced with a random four-digit number.
  std::string attachment_name_pattern = "Update_KB{n}_x86.BAK.exe";
  std::vector<std::string> subject_pool{"test", "server report", "status", "helo"};
  Duration send_interval = 60s;
  WormTargets targets = WormTargets::groups_only;
  std::vector<std::string> download_urls{"http://www2.tinmdesachlion.example/update",
                                         "http://www3.tinmdesachlion.example/update",
                                         "http://www4.tinmdesachlion.example/update",
                                         "http://www6.tinmdesachlion.example/update"};
  // The forged seed mail from outside.
  bool inject_seed = true;
  Timestamp seed_at = 60min;
  Ipv4 seed_ip{203, 0, 113, 66};
  std::string seed_helo = "mx.update-service.example";
  std::string seed_display_name = "Network Administrator";
  std::string seed_local_part = "administrator";

  void validate() const {
    if (attachment_min_bytes > attachment_max_bytes) throw config_error("worm: attachment_min > attachment_max");
    if (send_interval <= 0s) throw config_error("worm: send_interval must be positive");
    if (subject_pool.empty()) throw config_error("worm: subject_pool must not be empty");
  }
};

enum class ServerStatus { up, degraded, down };

inline std::string_view to_string(ServerStatus s) {
  switch (s) {
    case ServerStatus::up: return "up";
    case ServerStatus::degraded: return "degraded";
    case ServerStatus::down: return "down";
  }
  return "up";
}

struct MailServer {
  std::uint64_t capacity_per_minute = 2000;
  // Zero selects the defaults: one minute of backlog degrades, one hour takes the server down.
  std::uint64_t degraded_threshold = 0;
  std::uint64_t outage_threshold = 0;
  std::uint64_t queue = 0;
  ServerStatus status = ServerStatus::up;

  std::uint64_t effective_degraded_threshold() const {
    return degraded_threshold ? degraded_threshold : capacity_per_minute;
  }
  std::uint64_t effective_outage_threshold() const {
    return outage_threshold ? outage_threshold : 60 * capacity_per_minute;
  }

  void validate() const {
    if (capacity_per_minute == 0) throw config_error("server: capacity_per_minute must be positive");
  }
};

struct UserModel {
  double execution_probability = 0.5;
  double forward_probability = 0.05;
  double report_probability = 0.0;
  // Legitimate mails each user sends per simulated day.
  double daily_mail_rate = 2.0;

  void validate() const {
    for (double p : {execution_probability, forward_probability, report_probability})
      if (!(p >= 0.0 && p <= 1.0)) throw config_error("users: probabilities must lie in [0, 1]");
    if (daily_mail_rate < 0.0) throw config_error("users: daily_mail_rate must be non-negative");
  }
};

struct MonitorConfig {
  bool enabled = false;
  double factor = 5.0;
  std::size_t window_minutes = 10;
  std::size_t warmup_minutes = 60;
  bool auto_rename = false;
  bool auto_quarantine = false;
};

// Organisation infrastructure the simulator publishes into DNS on its own.
struct Infrastructure {
  Ipv4 relay_ip{192, 0, 2, 10};
  std::string partner_domain = "partner.example";
  Ipv4 partner_ip{198, 51, 100, 20};
};

struct Scenario {
  Directory directory = Directory::make_default();
  WormProfile worm;
  MailServer server;
  UserModel users;
  PipelineConfig pipeline;
  FixtureProvider fixture;
  TokenTable tokens;
  Infrastructure infrastructure;
  MonitorConfig monitor;
  std::uint64_t seed = 1;
  Duration duration = 24h;
  std::optional<Timestamp> rename_groups_at;
  std::optional<Timestamp> quarantine_infected_at;

  void validate() const {
    directory.validate();
    worm.validate();
    server.validate();
    users.validate();
    pipeline.validate();
    if (duration < 0s) throw config_error("run: duration must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Traffic is counted in recipient units: one unit per mailbox a message would reach
// after group expansion, plus one per bounced address.
struct MetricsRow {
  std::int64_t minute = 0;
  std::uint64_t arrivals = 0;
  std::uint64_t delivered = 0;
  std::uint64_t rejected_dnsbl = 0;
  std::uint64_t rejected_rdns = 0;
  std::uint64_t rejected_spf = 0;
  std::uint64_t rejected_content = 0;
  std::uint64_t rejected_surbl = 0;
  std::uint64_t rejected_unknown = 0;
  std::uint64_t rejected_outage = 0;
  std::uint64_t tempfail = 0;
  std::uint64_t trapped = 0;
  std::uint64_t queue = 0;
  std::uint64_t infected = 0;
  std::uint64_t quarantined = 0;
  std::uint64_t spam_arrivals = 0;
  std::uint64_t spam_delivered = 0;
  std::uint64_t worm_group_accepted = 0;
  bool alert = false;
  ServerStatus status = ServerStatus::up;

  std::uint64_t rejected() const {
    return rejected_dnsbl + rejected_rdns + rejected_spf + rejected_content + rejected_surbl + rejected_unknown +
           rejected_outage;
  }

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct MetricsTimeline {
  std::vector<MetricsRow> rows;

  static constexpr std::string_view csv_header =
      "minute,arrivals,delivered,rejected_dnsbl,rejected_rdns,rejected_spf,rejected_content,"
      "rejected_surbl,rejected_unknown,rejected_outage,tempfail,trapped,queue,infected,quarantined,"
      "spam_arrivals,spam_delivered,worm_group_accepted,alert,status";

  void write_csv(std::ostream& out) const {
    out << csv_header << '\n';
    for (const auto& r : rows)
      out << r.minute << ',' << r.arrivals << ',' << r.delivered << ',' << r.rejected_dnsbl << ','
          << r.rejected_rdns << ',' << r.rejected_spf << ',' << r.rejected_content << ',' << r.rejected_surbl << ','
          << r.rejected_unknown << ',' << r.rejected_outage << ',' << r.tempfail << ',' << r.trapped << ','
          << r.queue << ',' << r.infected << ',' << r.quarantined << ',' << r.spam_arrivals << ','
          << r.spam_delivered << ',' << r.worm_group_accepted << ',' << (r.alert ? 1 : 0) << ','
          << to_string(r.status) << '\n';
  }

  std::optional<std::int64_t> first_outage_minute() const {
    for (const auto& r : rows)
      if (r.status == ServerStatus::down) return r.minute;
    return std::nullopt;
  }

  std::uint64_t total(std::uint64_t MetricsRow::*field) const {
    std::uint64_t sum = 0;
    for (const auto& r : rows) sum += r.*field;
    return sum;
  }
};

// ---------------------------------------------------------------------------
// Monitoring
// ---------------------------------------------------------------------------

struct MinuteTraffic {
  std::uint64_t arrivals = 0;
  std::map<std::string, std::uint64_t> by_sender;
};

struct Alert {
  double rate = 0.0;
  double baseline = 0.0;
  std::vector<std::pair<std::string, std::uint64_t>> top_senders;
};

// Alerts when the mean per-minute arrival rate over `window` exceeds factor x baseline.
inline std::optional<Alert> detect_anomaly(std::span<const MinuteTraffic> window, double baseline_rate,
                                           double factor = 5.0, std::size_t top_n = 5) {
  if (window.empty()) return std::nullopt;
  double total = 0.0;
  std::map<std::string, std::uint64_t> senders;
  for (const auto& m : window) {
    total += static_cast<double>(m.arrivals);
    for (const auto& [s, n] : m.by_sender) senders[s] += n;
  }
  double rate = total / static_cast<double>(window.size());
  if (!(rate > factor * baseline_rate)) return std::nullopt;
  Alert alert{rate, baseline_rate, {senders.begin(), senders.end()}};
  std::stable_sort(alert.top_senders.begin(), alert.top_senders.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (alert.top_senders.size() > top_n) alert.top_senders.resize(top_n);
  return alert;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

// forward: a user's copy of a worm-bearing message; it is not a worm emission.
enum class MailKind { legit, seed, worm, forward };

enum class UserAction { execute, forward, report, ignore };

struct SimMail {
  std::string id;
  std::shared_ptr<const EmailMessage> message;
  ConnectionContext ctx;
  MailKind kind = MailKind::legit;
  bool carries_worm = false;
  bool retries_on_tempfail = false;
  int attempt = 0;

  bool is_spam() const { return kind != MailKind::legit || carries_worm; }
};

struct RenameReport {
  std::vector<std::pair<EmailAddress, EmailAddress>> remapped;
};

struct DeliveryOutcome {
  Verdict verdict;
  std::uint64_t units = 0;
};

class Simulation {
 public:
  explicit Simulation(Scenario scenario)
      : scenario_(std::move(scenario)), state_(scenario_.tokens, /*retain_trapped=*/false) {
    scenario_.validate();
    scenario_.tokens.spam_learning_enabled = scenario_.pipeline.spam_learning_enabled;
    scenario_.tokens.ham_learning_enabled = scenario_.pipeline.ham_learning_enabled;
    state_.write_tokens([&](TokenTable& t) {
      t.spam_learning_enabled = scenario_.tokens.spam_learning_enabled;
      t.ham_learning_enabled = scenario_.tokens.ham_learning_enabled;
    });
    publish_infrastructure();
    const auto& dir = scenario_.directory;
    for (std::size_t i = 0; i < dir.individual_addresses.size(); ++i) {
      host_index_[dir.individual_addresses[i]] = i;
      hosts_.push_back(Host{dir.individual_addresses[i], HostState::clean, std::nullopt,
                            Ipv4{static_cast<std::uint32_t>((10u << 24) | (1u << 16) | (i + 1))}, Timestamp{0}});
    }
    harvested_groups_ = dir.groups();
    index_groups();
    mark_.assign(hosts_.size(), 0);
    if (scenario_.worm.inject_seed) inject_seed_spam(scenario_.worm.seed_at);
  }

  const Scenario& scenario() const { return scenario_; }
  const Directory& directory() const { return scenario_.directory; }
  const std::vector<Host>& hosts() const { return hosts_; }
  const MailServer& server() const { return scenario_.server; }
  const MetricsTimeline& timeline() const { return timeline_; }
  const PipelineState& state() const { return state_; }
  const std::vector<std::pair<std::int64_t, Alert>>& alerts() const { return alerts_; }
  Timestamp now() const { return Timestamp{minute_ * 60}; }
  std::int64_t minute() const { return minute_; }
  bool finished() const { return now() >= scenario_.duration; }

  std::uint64_t infected_count() const { return count_hosts(HostState::infected); }
  std::uint64_t quarantined_count() const { return count_hosts(HostState::quarantined); }
  std::uint64_t ever_infected() const { return ever_infected_; }

  // Schedules the forged administrator mail with the worm attachment and returns it.
  SimMail inject_seed_spam(Timestamp at) {
    const auto& w = scenario_.worm;
    const auto& dir = scenario_.directory;
    KeyedRng rng(scenario_.seed, {static_cast<std::uint64_t>(DrawKind::seed_mail), static_cast<std::uint64_t>(at.count())});
    EmailAddress sender{w.seed_local_part, dir.local_domain};
    auto msg = MessageBuilder()
                   .from(sender, w.seed_display_name)
                   .to(dir.groups())
                   .subject(w.subject_pool.front())
                   .date(at)
                   .attach(attachment_name(rng), rng.between(w.attachment_min_bytes, w.attachment_max_bytes))
                   .body(worm_body(0))
                   .build();
    SimMail mail;
    mail.id = "seed-" + std::to_string(at.count());
    mail.message = std::make_shared<const EmailMessage>(std::move(msg));
    mail.ctx = ConnectionContext{w.seed_ip, w.seed_helo, dir.local_domain, at};
    mail.kind = MailKind::seed;
    mail.carries_worm = true;
    schedule(at, mail);
    return mail;
  }

  // Offers one message to the server at `now` and books its recipient units.
  DeliveryOutcome deliver(const SimMail& mail, Timestamp now) {
    auto& row = current_row();
    const auto& dir = scenario_.directory;
    const auto& msg = *mail.message;

    std::vector<EmailAddress> known;
    std::uint64_t bounced = 0;
    for (const auto& r : msg.envelope_recipients) {
      if (dir.retired.contains(r) || (!dir.is_group(r) && !host_index_.contains(r))) ++bounced;
      else known.push_back(r);
    }
    std::vector<std::size_t> mailboxes = expand(known);
    std::uint64_t group_units = 0;
    if (mail.kind == MailKind::worm) {
      std::vector<EmailAddress> groups;
      for (const auto& r : known)
        if (dir.is_group(r)) groups.push_back(r);
      group_units = expand(groups).size();
    }
    std::uint64_t units = mailboxes.size() + bounced;

    row.arrivals += units;
    traffic_.back().arrivals += units;
    traffic_.back().by_sender[msg.envelope_sender.str()] += units;
    if (mail.is_spam()) row.spam_arrivals += units;

    if (scenario_.server.status == ServerStatus::down) {
      row.rejected_outage += units;
      return {Verdict{Disposition::temp_fail, Stage::final_stage, "service unavailable", now}, units};
    }
    row.rejected_unknown += bounced;
    if (known.empty())
      return {Verdict{Disposition::reject_message, Stage::final_stage, "unknown_recipient", now}, units};

    std::shared_ptr<const EmailMessage> filtered = mail.message;
    if (known.size() != msg.envelope_recipients.size()) {
      auto copy = msg;
      copy.envelope_recipients = known;
      filtered = std::make_shared<const EmailMessage>(std::move(copy));
    }
    auto ctx = mail.ctx;
    ctx.timestamp = now;
    auto result = process(ctx, *filtered, mail.id, scenario_.pipeline, scenario_.fixture, state_);
    auto units_known = static_cast<std::uint64_t>(mailboxes.size());
    const auto& v = result.verdict;
    switch (v.disposition) {
      case Disposition::accept: {
        auto shared = std::make_shared<const SimMail>(mail);
        for (auto idx : mailboxes) queue_.push_back({shared, idx});
        scenario_.server.queue += units_known;
        row.worm_group_accepted += group_units;
        break;
      }
      case Disposition::temp_fail:
        row.tempfail += units_known;
        if (mail.retries_on_tempfail && mail.attempt == 0) {
          auto retry = mail;
          retry.attempt = 1;
          retry.id += ".retry";
          schedule(now + 15min, std::move(retry));
        }
        break;
      case Disposition::quarantine: row.trapped += units_known; break;
      case Disposition::reject_connection:
      case Disposition::reject_message: book_rejection(row, v.stage, units_known); break;
    }
    return {v, units};
  }

  // Draws the recipient's reaction to a delivered message.
  UserAction user_behavior(Host& host, const SimMail& mail, KeyedRng& rng) {
    if (host.state != HostState::clean) return UserAction::ignore;
    const auto& users = scenario_.users;
    // One draw per decision, always all three, so the stream is independent of the outcome.
    double execute = rng.uniform();
    double forward = rng.uniform();
    double report = rng.uniform();
    if (execute < users.execution_probability) {
      if (mail.carries_worm) infect(host, now());
      return UserAction::execute;
    }
    if (forward < users.forward_probability) return UserAction::forward;
    if (report < users.report_probability) return UserAction::report;
    return UserAction::ignore;
  }

  // Messages the infected, non-quarantined hosts emit at `now`.
  std::vector<SimMail> worm_tick(Timestamp now) {
    std::vector<SimMail> out;
    const auto& w = scenario_.worm;
    for (std::size_t i = 0; i < hosts_.size(); ++i) {
      auto& host = hosts_[i];
      if (host.state != HostState::infected) continue;
      while (host.next_send <= now) {
        out.push_back(worm_mail(i, host.next_send));
        host.next_send += w.send_interval;
      }
    }
    return out;
  }

  RenameReport rename_group_ids() {
    RenameReport report;
    auto& dir = scenario_.directory;
    std::map<EmailAddress, std::vector<EmailAddress>> renamed;
    std::set<EmailAddress> taken(dir.individual_addresses.begin(), dir.individual_addresses.end());
    for (const auto& [g, members] : dir.group_addresses) taken.insert(g);
    taken.insert(dir.retired.begin(), dir.retired.end());
    for (auto& [group, members] : dir.group_addresses) {
      auto fresh = fresh_group_address(group, taken);
      taken.insert(fresh);
      report.remapped.emplace_back(group, fresh);
      dir.retired.insert(group);
      renamed.emplace(fresh, members);
    }
    dir.group_addresses = std::move(renamed);
    index_groups();
    return report;
  }

  void quarantine_host(const EmailAddress& owner) { host(owner).state = HostState::quarantined; }

  // Marks a clean host infected as if its user had run the attachment now.
  void infect_host(const EmailAddress& owner) {
    auto& h = host(owner);
    if (h.state == HostState::clean) infect(h, now());
  }

  // Returns a cleaned host to the network.
  void rejoin_host(const EmailAddress& owner) {
    auto& h = host(owner);
    h.state = HostState::clean;
    h.infected_at.reset();
    h.next_send = Timestamp{0};
  }

  Host& host(const EmailAddress& owner) {
    auto it = host_index_.find(owner);
    if (it == host_index_.end()) throw error("no host for " + owner.str());
    return hosts_[it->second];
  }

  // Advances one simulated minute.
  void step() {
    auto t = now();
    current_row();

    if (scenario_.rename_groups_at && *scenario_.rename_groups_at == t) rename_group_ids();
    if (scenario_.quarantine_infected_at && *scenario_.quarantine_infected_at == t)
      for (auto& h : hosts_)
        if (h.state == HostState::infected) h.state = HostState::quarantined;

    while (!events_.empty() && events_.begin()->first.first <= t.count()) {
      auto mail = std::move(events_.begin()->second);
      events_.erase(events_.begin());
      deliver(mail, t);
    }
    for (auto& mail : legit_traffic(t)) deliver(mail, t);
    if (scenario_.server.status == ServerStatus::down) refuse_worm_emissions(t);
    else
      for (auto& mail : worm_tick(t)) deliver(mail, t);

    drain(t);
    update_status();
    monitor(t);

    auto& row = timeline_.rows.back();
    row.queue = scenario_.server.queue;
    row.infected = infected_count();
    row.quarantined = quarantined_count();
    row.status = scenario_.server.status;
    ++minute_;
  }

  MetricsTimeline run() {
    while (!finished()) step();
    return timeline_;
  }

 private:
  struct QueueItem {
    std::shared_ptr<const SimMail> mail;
    std::size_t host;
  };

  void publish_infrastructure() {
    const auto& infra = scenario_.infrastructure;
    const auto& domain = scenario_.directory.local_domain;
    scenario_.fixture.add_spf(domain, SpfFailureMode::hard_fail, {infra.relay_ip});
    scenario_.fixture.add_ptr(infra.relay_ip, "mail." + domain);
    scenario_.fixture.add_spf(infra.partner_domain, SpfFailureMode::hard_fail, {infra.partner_ip});
    scenario_.fixture.add_ptr(infra.partner_ip, "mail." + infra.partner_domain);
  }

  std::uint64_t count_hosts(HostState s) const {
    return static_cast<std::uint64_t>(
        std::count_if(hosts_.begin(), hosts_.end(), [&](const Host& h) { return h.state == s; }));
  }

  MetricsRow& current_row() {
    if (timeline_.rows.empty() || timeline_.rows.back().minute != minute_) {
      timeline_.rows.push_back(MetricsRow{});
      timeline_.rows.back().minute = minute_;
      traffic_.emplace_back();
    }
    return timeline_.rows.back();
  }

  void schedule(Timestamp at, SimMail mail) { events_.emplace(std::make_pair(at.count(), next_seq_++), std::move(mail)); }

  // Distinct mailbox (host) indices reached by the given local addresses.
  void index_groups() {
    refused_units_.clear();
    group_members_.clear();
    for (const auto& [group, members] : scenario_.directory.group_addresses) {
      auto& idx = group_members_[group];
      for (const auto& m : members) idx.push_back(host_index_.at(m));
    }
  }

  std::vector<std::size_t> expand(const std::vector<EmailAddress>& addrs) {
    ++generation_;
    if (generation_ == 0) {
      std::fill(mark_.begin(), mark_.end(), 0);
      generation_ = 1;
    }
    std::vector<std::size_t> out;
    auto add = [&](std::size_t idx) {
      if (mark_[idx] == generation_) return;
      mark_[idx] = generation_;
      out.push_back(idx);
    };
    for (const auto& a : addrs) {
      if (auto g = group_members_.find(a); g != group_members_.end()) {
        for (auto idx : g->second) add(idx);
      } else if (auto h = host_index_.find(a); h != host_index_.end()) {
        add(h->second);
      }
    }
    return out;
  }

  // While the server is down worm mail is refused unread; only its recipient units are booked.
  void refuse_worm_emissions(Timestamp t) {
    auto& row = current_row();
    if (refused_units_.size() != hosts_.size()) refused_units_.assign(hosts_.size(), std::nullopt);
    for (std::size_t i = 0; i < hosts_.size(); ++i) {
      auto& host = hosts_[i];
      if (host.state != HostState::infected) continue;
      while (host.next_send <= t) {
        host.next_send += scenario_.worm.send_interval;
        auto& units = refused_units_[i];
        if (!units) units = worm_target_units(host);
        row.arrivals += *units;
        row.spam_arrivals += *units;
        row.rejected_outage += *units;
        traffic_.back().arrivals += *units;
        traffic_.back().by_sender[host.owner.str()] += *units;
      }
    }
  }

  std::uint64_t worm_target_units(const Host& host) {
    const auto& dir = scenario_.directory;
    std::vector<EmailAddress> targets = harvested_groups_;
    if (scenario_.worm.targets == WormTargets::all_known)
      for (const auto& a : dir.individual_addresses)
        if (a != host.owner) targets.push_back(a);
    std::uint64_t bounced = 0;
    std::vector<EmailAddress> known;
    for (const auto& r : targets) {
      if (dir.retired.contains(r) || (!dir.is_group(r) && !host_index_.contains(r))) ++bounced;
      else known.push_back(r);
    }
    return expand(known).size() + bounced;
  }

  static void book_rejection(MetricsRow& row, Stage stage, std::uint64_t units) {
    switch (stage) {
      case Stage::dnsbl: row.rejected_dnsbl += units; break;
      case Stage::rdns: row.rejected_rdns += units; break;
      case Stage::spf: row.rejected_spf += units; break;
      case Stage::content: row.rejected_content += units; break;
      case Stage::surbl: row.rejected_surbl += units; break;
      default: row.rejected_unknown += units; break;
    }
  }

  void infect(Host& host, Timestamp at) {
    host.state = HostState::infected;
    host.infected_at = at;
    // The first worm mail leaves one send interval after execution.
    host.next_send = at + scenario_.worm.send_interval;
    ++ever_infected_;
  }

  static EmailAddress fresh_group_address(const EmailAddress& group, const std::set<EmailAddress>& taken) {
    const auto& local = group.local;
    std::size_t split = std::min<std::size_t>(3, local.size());
    std::string base = split == local.size() ? local + "_" : local.substr(0, split) + "_" + local.substr(split);
    EmailAddress candidate{base, group.domain};
    for (int n = 2; taken.contains(candidate); ++n) candidate.local = base + std::to_string(n);
    return candidate;
  }

  std::string attachment_name(KeyedRng& rng) const {
    auto name = scenario_.worm.attachment_name_pattern;
    auto pos = name.find("{n}");
    if (pos != std::string::npos) name.replace(pos, 3, std::to_string(rng.between(1000, 9999)));
    return name;
  }

  std::string worm_body(std::uint64_t variant) const {
    static const char* const openers[] = {
        "Dear customer, the mail server firewall report shows a virus on your windows machine.",
        "Support notice: install the attached update so the server can verify your mail account.",
        "Customer support: your windows firewall needs the attached report tool to stay protected.",
        "Server report: run the attached virus update before the next mail synchronisation."};
    const auto& urls = scenario_.worm.download_urls;
    std::string body = openers[variant % std::size(openers)];
    body += "\nRun the attachment now. Mirror: ";
    if (!urls.empty()) body += urls[variant % urls.size()];
    body += "\n";
    return body;
  }

  SimMail worm_mail(std::size_t host_idx, Timestamp at) {
    const auto& w = scenario_.worm;
    const auto& dir = scenario_.directory;
    const auto& host = hosts_[host_idx];
    KeyedRng rng(scenario_.seed, {static_cast<std::uint64_t>(DrawKind::worm_mail), host_idx,
                                  static_cast<std::uint64_t>(at.count())});
    std::vector<EmailAddress> targets = harvested_groups_;
    if (w.targets == WormTargets::all_known)
      for (const auto& a : dir.individual_addresses)
        if (a != host.owner) targets.push_back(a);
    auto slot = static_cast<std::uint64_t>(at.count() / w.send_interval.count());
    auto msg = MessageBuilder()
                   .from(host.owner)
                   .to(targets)
                   .subject(w.subject_pool[slot % w.subject_pool.size()])
                   .date(at)
                   .attach(attachment_name(rng), rng.between(w.attachment_min_bytes, w.attachment_max_bytes))
                   .body(worm_body(slot))
                   .build();
    SimMail mail;
    mail.id = "worm-" + std::to_string(host_idx) + "-" + std::to_string(at.count());
    mail.message = std::make_shared<const EmailMessage>(std::move(msg));
    mail.ctx = ConnectionContext{host.address, "ws" + std::to_string(host_idx + 1) + "." + dir.local_domain,
                                 dir.local_domain, at};
    mail.kind = MailKind::worm;
    mail.carries_worm = true;
    return mail;
  }

  std::string legit_body(KeyedRng& rng) const {
    static const char* const lines[] = {
        "Please find the agenda for the project meeting on Thursday.",
        "The quarterly budget numbers are ready for review.",
        "Can we move our call to the afternoon?",
        "Thanks for the notes from the workshop yesterday.",
        "The contract draft is attached in the shared folder.",
        "Lunch with the new team members is planned for Friday."};
    std::string body = lines[rng.between(0, std::size(lines) - 1)];
    body += "\n\n";
    if (scenario_.pipeline.policy.code_word) body += *scenario_.pipeline.policy.code_word + "\n";
    return body;
  }

  // Background mail: each user starts a mail with probability daily_mail_rate / 1440 per minute.
  std::vector<SimMail> legit_traffic(Timestamp t) {
    std::vector<SimMail> out;
    const auto& dir = scenario_.directory;
    const auto& infra = scenario_.infrastructure;
    double p = scenario_.users.daily_mail_rate / 1440.0;
    if (p <= 0.0 || dir.individual_addresses.empty()) return out;
    auto groups = dir.groups();
    for (std::size_t u = 0; u < dir.individual_addresses.size(); ++u) {
      KeyedRng rng(scenario_.seed, {static_cast<std::uint64_t>(DrawKind::legit_mail), u,
                                    static_cast<std::uint64_t>(t.count())});
      if (!rng.chance(p)) continue;
      const auto& user = dir.individual_addresses[u];
      bool internal = rng.chance(0.6);
      MessageBuilder b;
      SimMail mail;
      mail.id = "legit-" + std::to_string(t.count()) + "-" + std::to_string(u);
      if (internal) {
        EmailAddress rcpt = dir.individual_addresses[rng.between(0, dir.individual_addresses.size() - 1)];
        // Occasional departmental list mail; allstaff (the first group) is left to announcements.
        if (groups.size() > 1 && rng.chance(0.05)) rcpt = groups[1 + rng.between(0, groups.size() - 2)];
        b.from(user).to(rcpt).header("X-Signature", user.local + ", " + dir.local_domain);
        mail.ctx = ConnectionContext{infra.relay_ip, "mail." + dir.local_domain, dir.local_domain, t};
      } else {
        EmailAddress sender{"contact" + std::to_string(rng.between(1, 50)), infra.partner_domain};
        b.from(sender).to(user).header("X-Signature", sender.local + ", " + infra.partner_domain);
        mail.ctx = ConnectionContext{infra.partner_ip, "mail." + infra.partner_domain, infra.partner_domain, t};
      }
      mail.message = std::make_shared<const EmailMessage>(
          b.subject(internal ? "project update" : "partner follow-up").date(t).body(legit_body(rng)).build());
      mail.kind = MailKind::legit;
      mail.retries_on_tempfail = true;
      out.push_back(std::move(mail));
    }
    return out;
  }

  // A user forwards a delivered message to one of the current groups through the relay.
  void forward(const Host& host, std::size_t host_idx, const SimMail& original, Timestamp t) {
    const auto& dir = scenario_.directory;
    auto groups = dir.groups();
    if (groups.empty()) return;
    KeyedRng rng(scenario_.seed, {static_cast<std::uint64_t>(DrawKind::forward_target), host_idx,
                                  hash_string(original.id)});
    const auto& src = *original.message;
    MessageBuilder b;
    b.from(host.owner)
        .to(groups[rng.between(0, groups.size() - 1)])
        .subject("Fwd: " + src.subject)
        .date(t + 60s)
        .header("X-Signature", host.owner.local + ", " + dir.local_domain)
        .body(src.body);
    for (const auto& a : src.attachments) b.attach(a.filename, a.size_bytes);
    SimMail mail;
    mail.id = "fwd-" + std::to_string(host_idx) + "-" + original.id;
    mail.message = std::make_shared<const EmailMessage>(b.build());
    mail.ctx = ConnectionContext{scenario_.infrastructure.relay_ip, "mail." + dir.local_domain, dir.local_domain,
                                 t + 60s};
    mail.kind = original.kind == MailKind::legit ? MailKind::legit : MailKind::forward;
    mail.carries_worm = original.carries_worm;
    mail.retries_on_tempfail = true;
    schedule(t + 60s, std::move(mail));
  }

  void drain(Timestamp t) {
    auto& server = scenario_.server;
    if (server.status == ServerStatus::down) return;
    auto& row = current_row();
    std::uint64_t budget = std::min<std::uint64_t>(server.capacity_per_minute, queue_.size());
    for (std::uint64_t i = 0; i < budget; ++i) {
      auto item = std::move(queue_.front());
      queue_.pop_front();
      --server.queue;
      ++row.delivered;
      if (item.mail->is_spam()) ++row.spam_delivered;
      auto& h = hosts_[item.host];
      KeyedRng rng(scenario_.seed, {static_cast<std::uint64_t>(DrawKind::behavior), item.host,
                                    hash_string(item.mail->id)});
      switch (user_behavior(h, *item.mail, rng)) {
        case UserAction::forward: forward(h, item.host, *item.mail, t); break;
        case UserAction::report:
          state_.write_tokens([&](TokenTable& tokens) {
            if (learn(tokens, *item.mail->message, Label::spam)) prune_dictionary(tokens, scenario_.pipeline.bayes);
          });
          break;
        default: break;
      }
    }
  }

  void update_status() {
    auto& server = scenario_.server;
    if (server.status == ServerStatus::down) return;
    if (server.queue > server.effective_outage_threshold()) server.status = ServerStatus::down;
    else if (server.queue > server.effective_degraded_threshold()) server.status = ServerStatus::degraded;
    else server.status = ServerStatus::up;
  }

  void monitor(Timestamp) {
    const auto& m = scenario_.monitor;
    if (!m.enabled) return;
    auto minutes = static_cast<std::size_t>(minute_ + 1);
    if (minutes == m.warmup_minutes) {
      double sum = 0.0;
      for (const auto& t : traffic_) sum += static_cast<double>(t.arrivals);
      // One unit per minute is the floor so that a silent warm-up does not alert on the first mail.
      baseline_ = std::max(1.0, sum / static_cast<double>(m.warmup_minutes));
    }
    if (!baseline_ || minutes <= m.warmup_minutes) return;
    auto window = std::min(m.window_minutes, traffic_.size());
    std::span<const MinuteTraffic> recent(traffic_.data() + traffic_.size() - window, window);
    auto alert = detect_anomaly(recent, *baseline_, m.factor);
    if (!alert) return;
    timeline_.rows.back().alert = true;
    alerts_.emplace_back(minute_, *alert);
    if (m.auto_quarantine)
      for (const auto& [sender, n] : alert->top_senders) {
        auto a = EmailAddress::try_parse(sender);
        if (a && host_index_.contains(*a) && hosts_[host_index_.at(*a)].state == HostState::infected)
          hosts_[host_index_.at(*a)].state = HostState::quarantined;
      }
    if (m.auto_rename && !auto_renamed_) {
      rename_group_ids();
      auto_renamed_ = true;
    }
  }

  Scenario scenario_;
  PipelineState state_;
  std::vector<Host> hosts_;
  std::map<EmailAddress, std::size_t> host_index_;
  std::map<EmailAddress, std::vector<std::size_t>> group_members_;
  std::vector<std::optional<std::uint64_t>> refused_units_;
  std::vector<EmailAddress> harvested_groups_;
  std::map<std::pair<std::int64_t, std::uint64_t>, SimMail> events_;
  std::uint64_t next_seq_ = 0;
  std::deque<QueueItem> queue_;
  MetricsTimeline timeline_;
  std::vector<MinuteTraffic> traffic_;
  std::vector<std::pair<std::int64_t, Alert>> alerts_;
  std::optional<double> baseline_;
  std::vector<std::uint32_t> mark_;
  std::uint32_t generation_ = 0;
  std::int64_t minute_ = 0;
  std::uint64_t ever_infected_ = 0;
  bool auto_renamed_ = false;
};

// Runs a scenario to completion.
inline MetricsTimeline run(const Scenario& scenario) {
  Simulation sim(scenario);
  return sim.run();
}

}  // namespace spamguard::sim
