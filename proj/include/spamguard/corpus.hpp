#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spamguard/bayes.hpp"
#include "spamguard/config.hpp"
#include "spamguard/lookup.hpp"
#include "spamguard/message.hpp"
#include "spamguard/pipeline.hpp"
#include "spamguard/random.hpp"

namespace spamguard::corpus {

// The filter layer a constructed spam message is built to trip. residual evades every layer.
enum class SpamKind { residual, dnsbl, rdns, spf, content, surbl, bayes, policy };

inline std::string_view to_string(SpamKind k) {
  switch (k) {
    case SpamKind::residual: return "residual";
    case SpamKind::dnsbl: return "dnsbl";
    case SpamKind::rdns: return "rdns";
    case SpamKind::spf: return "spf";
    case SpamKind::content: return "content";
    case SpamKind::surbl: return "surbl";
    case SpamKind::bayes: return "bayes";
    case SpamKind::policy: return "policy";
  }
  return "residual";
}

// Layers other than DNSBL, cycled over spam that a later stage should catch.
inline constexpr SpamKind later_layers[] = {SpamKind::rdns,  SpamKind::spf,   SpamKind::content,
                                            SpamKind::surbl, SpamKind::bayes, SpamKind::policy};

struct CorpusSpec {
  std::uint64_t seed = 2009;
  Timestamp start{1230768000};
  std::string local_domain = "corp.example";
  std::size_t users = 200;
  std::vector<std::string> zones{"relays.ordb.org", "bl.spamcop.net", "sbl.spamhaus.org"};
  std::size_t spam_recipients = 24;

  // DNSBL corpus: zone 1 alone lists zone1_unique_share of the spam sources, zones 2 and 3
  // (overlapping with zone 1 in part) another other_zones_share, the rest is unlisted.
  std::size_t dnsbl_spam = 1000;
  std::size_t dnsbl_ham = 300;
  std::int64_t dnsbl_days = 7;
  double zone1_unique_share = 0.45;
  double other_zones_share = 0.35;
  // Fractions of the zone-1-only and unlisted spam that no later layer catches.
  double zone1_residual = 0.10;
  double unlisted_residual = 0.50;

  // Mixed corpus: each share is the fraction of spam built to trip that layer; the rest is residual.
  std::size_t mixed_spam = 1000;
  std::size_t mixed_ham = 300;
  std::int64_t sessions = 5;
  double share_dnsbl = 0.20;
  double share_rdns = 0.05;
  double share_spf = 0.05;
  double share_content = 0.10;
  double share_surbl = 0.05;
  double share_bayes = 0.05;
  double share_policy = 0.05;

  void validate() const {
    if (zones.size() != 3) throw config_error("corpus: exactly three dnsbl zones are required");
    if (users == 0 || spam_recipients == 0 || spam_recipients > users)
      throw config_error("corpus: need 0 < spam_recipients <= users");
    if (dnsbl_days <= 0 || sessions <= 0) throw config_error("corpus: days and sessions must be positive");
    auto share = [](double v) { return v >= 0.0 && v <= 1.0; };
    for (double v : {zone1_unique_share, other_zones_share, zone1_residual, unlisted_residual, share_dnsbl,
                     share_rdns, share_spf, share_content, share_surbl, share_bayes, share_policy})
      if (!share(v)) throw config_error("corpus: shares must lie in [0, 1]");
    if (zone1_unique_share + other_zones_share > 1.0)
      throw config_error("corpus: zone shares exceed 1");
    if (share_dnsbl + share_rdns + share_spf + share_content + share_surbl + share_bayes + share_policy > 1.0)
      throw config_error("corpus: layer shares exceed 1");
  }
};

inline CorpusSpec read_corpus_spec(const KeyValueFile& f) {
  CorpusSpec s;
  f.read("corpus", "seed", s.seed);
  std::int64_t start = s.start.count();
  f.read("corpus", "start", start);
  s.start = Timestamp{start};
  f.read("corpus", "local_domain", s.local_domain);
  s.local_domain = detail::lowercase(s.local_domain);
  f.read("corpus", "users", s.users);
  f.read("corpus", "zones", s.zones);
  f.read("corpus", "spam_recipients", s.spam_recipients);
  f.read("dnsbl_corpus", "spam", s.dnsbl_spam);
  f.read("dnsbl_corpus", "ham", s.dnsbl_ham);
  f.read("dnsbl_corpus", "days", s.dnsbl_days);
  f.read("dnsbl_corpus", "zone1_unique_share", s.zone1_unique_share);
  f.read("dnsbl_corpus", "other_zones_share", s.other_zones_share);
  f.read("dnsbl_corpus", "zone1_residual", s.zone1_residual);
  f.read("dnsbl_corpus", "unlisted_residual", s.unlisted_residual);
  f.read("mixed_corpus", "spam", s.mixed_spam);
  f.read("mixed_corpus", "ham", s.mixed_ham);
  f.read("mixed_corpus", "sessions", s.sessions);
  f.read("mixed_corpus", "share_dnsbl", s.share_dnsbl);
  f.read("mixed_corpus", "share_rdns", s.share_rdns);
  f.read("mixed_corpus", "share_spf", s.share_spf);
  f.read("mixed_corpus", "share_content", s.share_content);
  f.read("mixed_corpus", "share_surbl", s.share_surbl);
  f.read("mixed_corpus", "share_bayes", s.share_bayes);
  f.read("mixed_corpus", "share_policy", s.share_policy);
  s.validate();
  return s;
}

inline CorpusSpec load_corpus_spec(const std::filesystem::path& path) {
  auto f = KeyValueFile::load(path);
  auto s = read_corpus_spec(f);
  f.check_consumed();
  return s;
}

namespace detail {

// Shortest text that reads back to the same double.
inline std::string shortest(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline void write_corpus_spec(std::ostream& out, const CorpusSpec& s) {
  using detail::shortest;
  out << "[corpus]\nseed = " << s.seed << "\nstart = " << s.start.count() << "\nlocal_domain = " << s.local_domain
      << "\nusers = " << s.users << "\nzones = " << spamguard::detail::join(s.zones, ", ")
      << "\nspam_recipients = " << s.spam_recipients << "\n\n";
  out << "[dnsbl_corpus]\nspam = " << s.dnsbl_spam << "\nham = " << s.dnsbl_ham << "\ndays = " << s.dnsbl_days
      << "\nzone1_unique_share = " << shortest(s.zone1_unique_share)
      << "\nother_zones_share = " << shortest(s.other_zones_share)
      << "\nzone1_residual = " << shortest(s.zone1_residual)
      << "\nunlisted_residual = " << shortest(s.unlisted_residual) << "\n\n";
  out << "[mixed_corpus]\nspam = " << s.mixed_spam << "\nham = " << s.mixed_ham << "\nsessions = " << s.sessions
      << "\nshare_dnsbl = " << shortest(s.share_dnsbl) << "\nshare_rdns = " << shortest(s.share_rdns)
      << "\nshare_spf = " << shortest(s.share_spf) << "\nshare_content = " << shortest(s.share_content)
      << "\nshare_surbl = " << shortest(s.share_surbl) << "\nshare_bayes = " << shortest(s.share_bayes)
      << "\nshare_policy = " << shortest(s.share_policy) << '\n';
}

inline std::size_t share_count(std::size_t n, double share) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * share));
}

struct GeneratedMessage {
  std::string filename;
  EmailMessage message;
  Label label = Label::ham;
  SpamKind kind = SpamKind::residual;
};

struct Workspace {
  std::vector<GeneratedMessage> dnsbl;
  std::vector<GeneratedMessage> mixed;
  std::vector<std::string> fixture;
  TokenTable tokens;
};

inline const std::vector<std::string>& ham_words() {
  static const std::vector<std::string> words{
      "meeting", "agenda",  "project", "budget",   "schedule", "review",   "quarterly", "draft",
      "contract", "minutes", "workshop", "team",   "deadline", "client",   "proposal",  "lunch",
      "friday",  "monday",  "notes",   "summary", "presentation", "planning", "office", "slides",
      "feedback", "colleagues", "timeline", "milestone"};
  return words;
}

inline const std::vector<std::string>& spam_words() {
  static const std::vector<std::string> words{
      "viagra", "casino",   "lottery",  "jackpot", "pharmacy",  "pills",     "replica",  "cheapest",
      "winner", "prize",    "rolex",    "loans",   "mortgage",  "refinance", "weightloss", "guaranteed",
      "unclaimed", "millionaire", "bargain", "clearance"};
  return words;
}

inline const std::vector<std::string>& common_words() {
  static const std::vector<std::string> words{"please", "the", "and", "for", "your", "this", "with", "regards"};
  return words;
}

// Blocked terms the experiment configs use; generated ham and residual spam never contain them.
inline const std::vector<std::string>& blocked_subject_terms() {
  static const std::vector<std::string> terms{"free money", "act now"};
  return terms;
}

namespace detail {

inline std::string pick_words(KeyedRng& rng, const std::vector<std::string>& pool, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(pool[rng.between(0, pool.size() - 1)]);
  return spamguard::detail::join(out, " ");
}

inline std::string sentence(KeyedRng& rng, const std::vector<std::string>& pool, std::size_t n) {
  return pick_words(rng, common_words(), 2) + " " + pick_words(rng, pool, n) + ".";
}

inline std::string user_local(std::size_t i) {
  std::ostringstream ss;
  ss << "user" << std::setw(3) << std::setfill('0') << i + 1;
  return ss.str();
}

inline std::vector<EmailAddress> pick_users(KeyedRng& rng, const CorpusSpec& spec, std::size_t n) {
  // Partial Fisher-Yates over the user indices.
  std::vector<std::size_t> idx(spec.users);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<EmailAddress> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto j = rng.between(i, idx.size() - 1);
    std::swap(idx[i], idx[j]);
    out.push_back({user_local(idx[i]), spec.local_domain});
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline const Ipv4 relay_ip{192, 0, 2, 10};
inline constexpr std::size_t partner_count = 5;

inline Ipv4 partner_ip(std::size_t k) { return Ipv4{198, 51, 100, static_cast<std::uint8_t>(10 + k)}; }
inline std::string partner_domain(std::size_t k) { return "partner" + std::to_string(k + 1) + ".example"; }

// Distinct spam source per message; `pool` separates the two corpora.
inline Ipv4 spam_ip(std::uint8_t pool, std::size_t i) {
  return Ipv4{172, static_cast<std::uint8_t>(16 + pool), static_cast<std::uint8_t>(i / 250),
              static_cast<std::uint8_t>(1 + i % 250)};
}

struct Builder {
  const CorpusSpec& spec;
  std::vector<std::string>& fixture;
  std::uint64_t stream;  // key separating the corpora

  GeneratedMessage ham(std::size_t i, Timestamp at) {
    KeyedRng rng(spec.seed, {stream, 1, i});
    MessageBuilder b;
    std::string helo;
    Ipv4 ip;
    EmailAddress sender;
    auto partner = i % partner_count;
    if (i % 2 == 0) {
      sender = {user_local(rng.between(0, spec.users - 1)), spec.local_domain};
      ip = relay_ip;
      helo = "mail." + spec.local_domain;
    } else {
      sender = {"contact", partner_domain(partner)};
      ip = partner_ip(partner);
      helo = "mail." + partner_domain(partner);
    }
    std::string body = sentence(rng, ham_words(), 6) + "\n" + sentence(rng, ham_words(), 5) + "\n";
    if (i % 5 == 0) body += "Shared copy: http://docs." + partner_domain(partner) + "/files/" + std::to_string(i) + "\n";
    b.from(sender)
        .to(pick_users(rng, spec, 1 + rng.between(0, 2)))
        .subject(pick_words(rng, ham_words(), 3))
        .date(at)
        .body(body)
        .header("X-Client-IP", ip.str())
        .header("X-Helo", helo)
        .header("X-Signature", sender.local + ", " + sender.domain);
    if (i % 7 == 0) b.attach("minutes.pdf", 200 * 1024);
    return {"", b.build(), Label::ham, SpamKind::residual};
  }

  // `zones` lists the DNSBL zones (indices) that carry this message's source address.
  GeneratedMessage spam(std::size_t i, Timestamp at, SpamKind kind, const std::vector<std::size_t>& zones) {
    KeyedRng rng(spec.seed, {stream, 2, i});
    auto ip = spam_ip(static_cast<std::uint8_t>(stream), i);
    auto promo = "promo" + std::to_string(i % 40) + ".example";
    EmailAddress sender{"sales" + std::to_string(i % 17), promo};
    if (kind == SpamKind::spf) sender = {"postmaster", spec.local_domain};
    std::string helo = "mta" + std::to_string(i) + "." + promo;
    for (auto z : zones) fixture.push_back("dnsbl " + spec.zones[z] + " " + ip.str());
    if (kind != SpamKind::rdns) fixture.push_back("ptr " + ip.str() + " " + helo);

    const auto& vocab = kind == SpamKind::bayes ? spam_words() : ham_words();
    std::string subject = pick_words(rng, vocab, 3);
    std::string body = sentence(rng, vocab, 6) + "\n" + sentence(rng, vocab, 5) + "\n";
    MessageBuilder b;
    if (kind == SpamKind::content) {
      if (i % 2 == 0) subject = blocked_subject_terms()[i % 4 / 2] + " " + subject;
      else b.attach("invoice" + std::to_string(i) + ".pdf.exe", 60 * 1024);
    }
    if (kind == SpamKind::surbl) {
      auto listed = "deals" + std::to_string(i % 25) + ".example";
      fixture.push_back("surbl sc.surbl.org " + listed);
      body += "Details: http://www." + listed + "/offer?id=" + std::to_string(i) + "\n";
    }
    b.from(sender)
        .to(pick_users(rng, spec, spec.spam_recipients))
        .subject(subject)
        .date(at)
        .body(body)
        .header("X-Client-IP", ip.str())
        .header("X-Helo", helo);
    if (kind != SpamKind::policy) b.header("X-Signature", sender.local + ", " + sender.domain);
    return {"", b.build(), Label::spam, kind};
  }
};

inline void finalize(std::vector<GeneratedMessage>& messages) {
  std::stable_sort(messages.begin(), messages.end(),
                   [](const auto& a, const auto& b) { return a.message.date() < b.message.date(); });
  for (std::size_t i = 0; i < messages.size(); ++i) {
    std::ostringstream name;
    name << std::setw(5) << std::setfill('0') << i + 1 << ".msg";
    messages[i].filename = name.str();
  }
}

inline Timestamp draw_time(const CorpusSpec& spec, std::uint64_t stream, std::uint64_t kind, std::size_t i,
                           Duration span) {
  KeyedRng rng(spec.seed, {stream, 3, kind, i});
  return spec.start + Duration{static_cast<std::int64_t>(rng.between(0, span.count() - 1))};
}

}  // namespace detail

// Token table trained on a synthetic set disjoint from both corpora.
inline TokenTable train_tokens(const CorpusSpec& spec, std::size_t per_class = 200) {
  TokenTable table;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (auto label : {Label::spam, Label::ham}) {
      KeyedRng rng(spec.seed, {99, static_cast<std::uint64_t>(label), i});
      const auto& vocab = label == Label::spam ? spam_words() : ham_words();
      auto msg = MessageBuilder()
                     .from({"trainer", "training.example"})
                     .to({"filter", spec.local_domain})
                     .subject(detail::pick_words(rng, vocab, 3))
                     .body(detail::sentence(rng, vocab, 8))
                     .build();
      learn(table, msg, label);
    }
  }
  return table;
}

inline Workspace generate(const CorpusSpec& spec) {
  spec.validate();
  Workspace ws;
  auto& fx = ws.fixture;
  fx.push_back("spf " + spec.local_domain + " hard " + detail::relay_ip.str());
  fx.push_back("ptr " + detail::relay_ip.str() + " mail." + spec.local_domain);
  for (std::size_t k = 0; k < detail::partner_count; ++k) {
    fx.push_back("spf " + detail::partner_domain(k) + " hard " + detail::partner_ip(k).str());
    fx.push_back("ptr " + detail::partner_ip(k).str() + " mail." + detail::partner_domain(k));
  }

  {
    detail::Builder b{spec, fx, 0};
    Duration span = std::chrono::hours(24) * spec.dnsbl_days;
    std::size_t n = spec.dnsbl_spam;
    std::size_t n_unique = share_count(n, spec.zone1_unique_share);
    std::size_t n_other = std::min(n - n_unique, share_count(n, spec.other_zones_share));
    std::size_t n_unlisted = n - n_unique - n_other;
    std::size_t unique_residual = share_count(n_unique, spec.zone1_residual);
    std::size_t unlisted_residual = share_count(n_unlisted, spec.unlisted_residual);
    std::size_t i = 0;
    auto later = [](std::size_t j) { return later_layers[j % std::size(later_layers)]; };
    for (std::size_t j = 0; j < n_unique; ++j, ++i)
      ws.dnsbl.push_back(b.spam(i, detail::draw_time(spec, 0, 2, i, span),
                                j < unique_residual ? SpamKind::residual : later(j), {0}));
    for (std::size_t j = 0; j < n_other; ++j, ++i) {
      // Zone 2 only, zone 3 only, or all three zones.
      std::vector<std::size_t> zones = j % 3 == 0 ? std::vector<std::size_t>{1}
                                       : j % 3 == 1 ? std::vector<std::size_t>{2}
                                                    : std::vector<std::size_t>{0, 1, 2};
      ws.dnsbl.push_back(b.spam(i, detail::draw_time(spec, 0, 2, i, span),
                                j % 2 == 0 ? SpamKind::residual : later(j), zones));
    }
    for (std::size_t j = 0; j < n_unlisted; ++j, ++i)
      ws.dnsbl.push_back(b.spam(i, detail::draw_time(spec, 0, 2, i, span),
                                j < unlisted_residual ? SpamKind::residual : later(j), {}));
    for (std::size_t h = 0; h < spec.dnsbl_ham; ++h)
      ws.dnsbl.push_back(b.ham(h, detail::draw_time(spec, 0, 1, h, span)));
    detail::finalize(ws.dnsbl);
  }

  {
    detail::Builder b{spec, fx, 1};
    Duration span = 3h * spec.sessions;
    std::size_t n = spec.mixed_spam;
    std::vector<std::pair<SpamKind, double>> layers{
        {SpamKind::dnsbl, spec.share_dnsbl}, {SpamKind::rdns, spec.share_rdns},
        {SpamKind::spf, spec.share_spf},     {SpamKind::content, spec.share_content},
        {SpamKind::surbl, spec.share_surbl}, {SpamKind::bayes, spec.share_bayes},
        {SpamKind::policy, spec.share_policy}};
    std::size_t i = 0;
    for (auto [kind, share] : layers)
      for (std::size_t j = 0, c = share_count(n, share); j < c && i < n; ++j, ++i) {
        std::vector<std::size_t> zones;
        if (kind == SpamKind::dnsbl) zones.push_back(j % 3);
        ws.mixed.push_back(b.spam(i, detail::draw_time(spec, 1, 2, i, span), kind, zones));
      }
    for (; i < n; ++i) ws.mixed.push_back(b.spam(i, detail::draw_time(spec, 1, 2, i, span), SpamKind::residual, {}));
    for (std::size_t h = 0; h < spec.mixed_ham; ++h)
      ws.mixed.push_back(b.ham(h, detail::draw_time(spec, 1, 1, h, span)));
    detail::finalize(ws.mixed);
  }

  std::sort(fx.begin(), fx.end());
  fx.erase(std::unique(fx.begin(), fx.end()), fx.end());
  ws.tokens = train_tokens(spec);
  return ws;
}

enum class Variant { full, ablated, surbl_off, none };

inline std::string_view config_filename(Variant v) {
  switch (v) {
    case Variant::full: return "full.conf";
    case Variant::ablated: return "ablated.conf";
    case Variant::surbl_off: return "surbl-off.conf";
    case Variant::none: return "none.conf";
  }
  return "full.conf";
}

// Pipeline configurations of the corpus experiments. Greylisting stays off: stored corpora
// carry no retries.
inline PipelineConfig experiment_config(const CorpusSpec& spec, Variant v) {
  PipelineConfig c;
  c.stage_order = {Stage::dnsbl, Stage::rdns, Stage::spf, Stage::content, Stage::surbl, Stage::bayes, Stage::policy};
  c.source.greylist_enabled = false;
  c.source.dnsbl_zones = spec.zones;
  c.content.blocked_subject_terms = blocked_subject_terms();
  c.content.blocked_extension_patterns = {"*.*.exe", "*.scr"};
  c.content.max_attachment_bytes = 10 * 1024 * 1024;
  c.policy.require_signature = true;
  c.policy.flagged_display_names = {"Network Administrator"};
  c.policy.local_domain = spec.local_domain;
  c.token_table = "tokens.txt";
  switch (v) {
    case Variant::full: break;
    case Variant::ablated: c.source.dnsbl_zones.erase(c.source.dnsbl_zones.begin()); break;
    case Variant::surbl_off: std::erase(c.stage_order, Stage::surbl); break;
    case Variant::none: c.stage_order.clear(); break;
  }
  return c;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path.string());
  out << text;
}

inline void write_corpus_dir(const std::filesystem::path& dir, const std::vector<GeneratedMessage>& messages) {
  std::filesystem::create_directories(dir);
  std::ostringstream labels;
  for (const auto& m : messages) {
    write_text(dir / m.filename, render_message(m.message));
    labels << m.filename << ' ' << spamguard::to_string(m.label) << '\n';
  }
  write_text(dir / "labels.txt", labels.str());
}

}  // namespace detail

// Layout: corpus.conf, fixture.txt, tokens.txt, {full,ablated,surbl-off,none}.conf,
// dnsbl/ and mixed/ with *.msg plus labels.txt.
inline void write_workspace(const std::filesystem::path& out, const CorpusSpec& spec, const Workspace& ws) {
  std::filesystem::create_directories(out);
  std::ostringstream spec_text;
  write_corpus_spec(spec_text, spec);
  detail::write_text(out / "corpus.conf", spec_text.str());
  detail::write_text(out / "fixture.txt", spamguard::detail::join(ws.fixture, "\n") + "\n");
  std::ostringstream tokens;
  save_token_table(tokens, ws.tokens);
  detail::write_text(out / "tokens.txt", tokens.str());
  for (auto v : {Variant::full, Variant::ablated, Variant::surbl_off, Variant::none}) {
    std::ostringstream conf;
    write_pipeline_config(conf, experiment_config(spec, v));
    detail::write_text(out / config_filename(v), conf.str());
  }
  detail::write_corpus_dir(out / "dnsbl", ws.dnsbl);
  detail::write_corpus_dir(out / "mixed", ws.mixed);
}

}  // namespace spamguard::corpus
