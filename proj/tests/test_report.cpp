#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "helpers.hpp"

using namespace spamguard;
using testing_support::TempDir;

namespace {

// Ten stored messages: six spam from 172.16.0.x, four signed partner ham.
std::vector<CorpusEntry> small_corpus() {
  std::vector<CorpusEntry> out;
  for (int i = 0; i < 10; ++i) {
    bool spam = i % 5 < 3;
    MessageBuilder b;
    if (spam) {
      b.from({"promo" + std::to_string(i), "deals.example"})
          .header("X-Client-IP", "172.16.0." + std::to_string(i + 1))
          .header("X-Helo", "host" + std::to_string(i) + ".deals.example")
          .subject("offer")
          .body("cheap prize");
    } else {
      b.from({"ann", "partner.example"})
          .header("X-Client-IP", "198.51.100.20")
          .header("X-Helo", "mail.partner.example")
          .header("X-Signature", "ann")
          .subject("notes")
          .body("meeting notes attached");
    }
    b.to(EmailAddress{"user" + std::to_string(i), "corp.example"}).date(Timestamp{1000 + i * 3600});
    char name[16];
    std::snprintf(name, sizeof name, "%03d.msg", i);
    out.push_back({name, b.build()});
  }
  return out;
}

Labels small_labels() {
  Labels l;
  for (int i = 0; i < 10; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%03d.msg", i);
    l[name] = i % 5 < 3 ? Label::spam : Label::ham;
  }
  return l;
}

std::string report_csv(const RunReport& r) {
  std::ostringstream out;
  write_report_csv(out, r);
  write_sessions_csv(out, r);
  write_recipients_csv(out, r);
  return out.str();
}

struct GeneratedWorkspace {
  TempDir dir{"workspace"};
  corpus::CorpusSpec spec;

  explicit GeneratedWorkspace(corpus::CorpusSpec s = {}) : spec(std::move(s)) {
    corpus::write_workspace(dir.path(), spec, corpus::generate(spec));
  }
};

}  // namespace

TEST(Labels, ParseAndErrors) {
  std::istringstream in("# labels\na.msg spam\n\nb.msg ham\n");
  auto l = parse_labels(in);
  EXPECT_EQ(l.at("a.msg"), Label::spam);
  EXPECT_EQ(l.at("b.msg"), Label::ham);
  std::istringstream bad("a.msg maybe\n");
  EXPECT_THROW(parse_labels(bad), parse_error);
  std::istringstream dup("a.msg spam\na.msg ham\n");
  EXPECT_THROW(parse_labels(dup), parse_error);
}

TEST(FilterCorpus, AllStagesOffAcceptsEverything) {
  PipelineConfig cfg;
  cfg.stage_order.clear();
  auto run = filter_corpus(small_corpus(), cfg, FixtureProvider{}, TokenTable{}, small_labels());
  EXPECT_EQ(run.report.total, 10u);
  EXPECT_EQ(run.report.count(Disposition::accept), 10u);
  EXPECT_EQ(run.report.labeled_spam, 6u);
  EXPECT_EQ(run.report.false_negatives, 6u);
  EXPECT_EQ(run.report.false_positives, 0u);
  EXPECT_EQ(run.logs.size(), 10u);
}

TEST(FilterCorpus, DnsblFixtureListingEverySpamSource) {
  FixtureProvider fx;
  for (int i = 0; i < 10; ++i)
    if (i % 5 < 3) fx.add_dnsbl("bl.example", Ipv4::parse("172.16.0." + std::to_string(i + 1)));
  PipelineConfig cfg;
  cfg.stage_order = {Stage::dnsbl};
  cfg.source.dnsbl_zones = {"bl.example"};
  auto run = filter_corpus(small_corpus(), cfg, fx, TokenTable{}, small_labels());
  EXPECT_EQ(run.report.false_negatives, 0u);
  EXPECT_EQ(run.report.by_stage.at(Stage::dnsbl), 6u);
  EXPECT_EQ(run.report.count(Disposition::reject_connection), 6u);
  EXPECT_EQ(run.report.false_positives, 0u);
  // Hourly dates starting at 1000s fall into 3-hour sessions 0..3.
  EXPECT_EQ(run.report.sessions.size(), 4u);
  EXPECT_EQ(run.report.sessions.at(0).messages, 3u);
}

TEST(FilterCorpus, MissingLabelIsAnError) {
  auto labels = small_labels();
  labels.erase("004.msg");
  EXPECT_THROW(filter_corpus(small_corpus(), PipelineConfig{}, FixtureProvider{}, TokenTable{}, labels), error);
}

TEST(FilterCorpus, ConnectionContextFromHeaders) {
  auto m = small_corpus()[0].message;
  auto ctx = connection_for(m);
  EXPECT_EQ(ctx.client_ip.str(), "172.16.0.1");
  EXPECT_EQ(ctx.helo_hostname, "host0.deals.example");
  EXPECT_EQ(ctx.mail_from_domain, "deals.example");
  EXPECT_EQ(ctx.timestamp, Timestamp{1000});
}

TEST(FilterCorpus, TotalsAlwaysSumToCorpusSize) {
  auto corpus = small_corpus();
  FixtureProvider fx;
  fx.add_dnsbl("bl.example", Ipv4::parse("172.16.0.2"));
  fx.add_ptr(Ipv4::parse("198.51.100.20"), "mail.partner.example");
  fx.add_spf("partner.example", SpfFailureMode::hard_fail, {Ipv4::parse("198.51.100.20")});
  for (std::uint64_t i = 0; i < 100; ++i) {
    KeyedRng rng(73, {i});
    PipelineConfig cfg;
    cfg.stage_order.clear();
    for (auto s : all_filter_stages)
      if (rng.chance(0.5)) cfg.stage_order.push_back(s);
    cfg.source.dnsbl_zones = {"bl.example"};
    cfg.source.greylist_enabled = rng.chance(0.5);
    cfg.content.blocked_subject_terms = {"offer"};
    cfg.policy.require_signature = rng.chance(0.5);
    auto r = filter_corpus(corpus, cfg, fx, TokenTable{}, small_labels()).report;
    std::uint64_t sum = 0;
    for (const auto& [d, n] : r.by_disposition) sum += n;
    ASSERT_EQ(sum, corpus.size());
    ASSERT_EQ(r.total, corpus.size());
    std::uint64_t session_sum = 0;
    for (const auto& [idx, s] : r.sessions) session_sum += s.messages;
    ASSERT_EQ(session_sum, corpus.size());
    ASSERT_EQ(report_csv(r), report_csv(filter_corpus(corpus, cfg, fx, TokenTable{}, small_labels()).report));
  }
}

TEST(CorpusSpecFile, RoundTrip) {
  corpus::CorpusSpec s;
  s.seed = 7;
  s.share_surbl = 0.0;
  std::ostringstream out;
  corpus::write_corpus_spec(out, s);
  std::istringstream in(out.str());
  auto f = KeyValueFile::parse(in);
  auto back = corpus::read_corpus_spec(f);
  f.check_consumed();
  EXPECT_EQ(back.seed, 7u);
  EXPECT_EQ(back.share_surbl, 0.0);
  EXPECT_EQ(back.zones, s.zones);
  EXPECT_EQ(back.zone1_unique_share, s.zone1_unique_share);
  std::istringstream bad("[corpus]\nzones = a, b\n");
  auto bf = KeyValueFile::parse(bad);
  EXPECT_THROW(corpus::read_corpus_spec(bf), config_error);
}

TEST(CorpusConstruction, DnsblListingMatchesShares) {
  corpus::CorpusSpec spec;
  auto ws = corpus::generate(spec);
  std::istringstream fixture_text(detail::join(ws.fixture, "\n"));
  auto fx = FixtureProvider::parse(fixture_text);
  std::size_t only_zone1 = 0, other = 0, none = 0, spam = 0, ham = 0;
  for (const auto& m : ws.dnsbl) {
    if (m.label == Label::ham) {
      ++ham;
      continue;
    }
    ++spam;
    auto ip = connection_for(m.message).client_ip;
    bool z1 = fx.dnsbl_listed(ip, spec.zones[0]);
    bool z23 = fx.dnsbl_listed(ip, spec.zones[1]) || fx.dnsbl_listed(ip, spec.zones[2]);
    if (z1 && !z23) ++only_zone1;
    else if (z23) ++other;
    else ++none;
  }
  EXPECT_EQ(spam, 1000u);
  EXPECT_EQ(ham, 300u);
  EXPECT_EQ(only_zone1, 450u);
  EXPECT_EQ(other, 350u);
  EXPECT_EQ(none, 200u);
}

TEST(Experiments, DnsblAblationMatchesHandComputedOracle) {
  GeneratedWorkspace g;
  const auto& s = g.spec;
  auto r = run_experiment("dnsbl-ablation", g.dir.path());
  // Unlisted residual spam gets through both runs; zone-1-only residual only the ablated one.
  auto n = static_cast<double>(s.dnsbl_spam);
  auto unlisted = n * (1.0 - s.zone1_unique_share - s.other_zones_share);
  auto expected_full = std::llround(unlisted * s.unlisted_residual);
  auto expected_ablated = expected_full + std::llround(n * s.zone1_unique_share * s.zone1_residual);
  EXPECT_EQ(static_cast<long long>(r.baseline_delivered()), expected_full);
  EXPECT_EQ(static_cast<long long>(r.variant_delivered()), expected_ablated);
  EXPECT_GE(r.relative_change(), 0.40);
  EXPECT_LE(r.relative_change(), 0.50);
  double fn = r.variant.false_negatives_per_user_day(s.users, static_cast<double>(s.dnsbl_days));
  EXPECT_NEAR(fn, static_cast<double>(expected_ablated * s.spam_recipients) / (s.users * s.dnsbl_days), 1e-12);
  EXPECT_GE(fn, 2.0);
  EXPECT_LE(fn, 3.0);
  EXPECT_EQ(r.baseline.false_positives, 0u);
  EXPECT_EQ(r.variant.false_positives, 0u);
}

TEST(Experiments, DefenseOnOffAndSurbl) {
  GeneratedWorkspace g;
  const auto& s = g.spec;
  auto d = run_experiment("defense-on-off", g.dir.path());
  EXPECT_EQ(d.baseline_delivered(), s.mixed_spam);
  double covered = s.share_dnsbl + s.share_rdns + s.share_spf + s.share_content + s.share_surbl + s.share_bayes +
                   s.share_policy;
  EXPECT_NEAR(-d.relative_change(), covered, 1e-9);
  EXPECT_GE(-d.relative_change(), 0.50);
  EXPECT_LE(-d.relative_change(), 0.60);

  auto u = run_experiment("surbl-sessions", g.dir.path());
  EXPECT_EQ(static_cast<long long>(u.variant_delivered()) - static_cast<long long>(u.baseline_delivered()),
            std::llround(s.mixed_spam * s.share_surbl));
  std::ostringstream sessions;
  write_experiment_sessions_csv(sessions, u);
  auto text = sessions.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + s.sessions);
  EXPECT_THROW(run_experiment("nope", g.dir.path()), error);
}

TEST(Experiments, SurblDeltaZeroWithoutUrlSpam) {
  corpus::CorpusSpec spec;
  spec.share_surbl = 0.0;
  GeneratedWorkspace g(spec);
  auto u = run_experiment("surbl-sessions", g.dir.path());
  EXPECT_EQ(u.variant_delivered(), u.baseline_delivered());
  std::ostringstream sessions;
  write_experiment_sessions_csv(sessions, u);
  std::istringstream lines(sessions.str());
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) EXPECT_EQ(line.substr(line.rfind(',') + 1), "0") << line;
}

TEST(Experiments, ByteIdenticalAcrossRuns) {
  GeneratedWorkspace a, b;
  for (const auto& name : experiment_names()) {
    std::ostringstream x, y;
    auto ra = run_experiment(name, a.dir.path());
    auto rb = run_experiment(name, b.dir.path());
    write_experiment_summary_csv(x, ra);
    write_experiment_sessions_csv(x, ra);
    write_experiment_summary_csv(y, rb);
    write_experiment_sessions_csv(y, rb);
    ASSERT_EQ(x.str(), y.str()) << name;
  }
}
