#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"

using namespace spamguard;
using namespace std::chrono_literals;

namespace {

ConnectionContext ctx_for(const std::string& ip, const std::string& helo = "mail.x.com",
                          const std::string& domain = "x.com", Timestamp t = Timestamp{0}) {
  return {Ipv4::parse(ip), helo, domain, t};
}

FixtureProvider fixture(const std::string& text) {
  std::istringstream in(text);
  return FixtureProvider::parse(in);
}

EmailMessage with_body(const std::string& body) {
  return MessageBuilder().from({"a", "x.com"}).to(EmailAddress{"b", "y.com"}).body(body).build();
}

}  // namespace

TEST(Fixture, ParsesAllRecordTypes) {
  auto fx = fixture(
      "# comment\n"
      "dnsbl bl.example 192.0.2.1\n"
      "surbl sc.surbl.org evil.com\n"
      "spf x.com hard 192.0.2.10,192.0.2.11\n"
      "spf y.com soft\n"
      "ptr 192.0.2.10 Mail.X.com\n"
      "unavailable down.example\n");
  EXPECT_TRUE(fx.dnsbl_listed(Ipv4::parse("192.0.2.1"), "bl.example"));
  EXPECT_TRUE(fx.surbl_listed("evil.com", "sc.surbl.org"));
  EXPECT_EQ(fx.spf_policy("x.com")->authorized_ips.size(), 2u);
  EXPECT_TRUE(fx.spf_policy("y.com")->authorized_ips.empty());
  EXPECT_EQ(fx.spf_policy("y.com")->failure_mode, SpfFailureMode::soft_fail);
  EXPECT_EQ(fx.ptr_record(Ipv4::parse("192.0.2.10")).value(), "Mail.X.com");
  EXPECT_FALSE(fx.available("down.example"));
  EXPECT_TRUE(fx.available("bl.example"));
}

TEST(Fixture, RejectsUnknownRecordsWithLine) {
  try {
    fixture("dnsbl z 1.2.3.4\nmx foo\n");
    FAIL();
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(fixture("dnsbl z notanip\n"), parse_error);
  EXPECT_THROW(fixture("spf x.com maybe 1.2.3.4\n"), parse_error);
}

TEST(Dnsbl, FirstListingZoneInOrder) {
  auto fx = fixture("dnsbl b 192.0.2.1\ndnsbl a 192.0.2.2\ndnsbl c 192.0.2.2\n");
  SourceFilterConfig c;
  c.dnsbl_zones = {"a", "b", "c"};
  auto r = dnsbl_check(ctx_for("192.0.2.1"), c, fx);
  ASSERT_TRUE(r.rejected());
  EXPECT_EQ(r.rejection->detail, "b");
  EXPECT_FALSE(dnsbl_check(ctx_for("192.0.2.9"), c, fx).rejected());
  auto both = dnsbl_check(ctx_for("192.0.2.2"), c, fx);
  EXPECT_EQ(both.rejection->detail, "a");
}

TEST(Dnsbl, UnavailableZonesAreSkipped) {
  auto fx = fixture("dnsbl a 192.0.2.1\nunavailable a\nunavailable b\n");
  SourceFilterConfig c;
  c.dnsbl_zones = {"a", "b"};
  auto r = dnsbl_check(ctx_for("192.0.2.1"), c, fx);
  EXPECT_FALSE(r.rejected());
  ASSERT_EQ(r.warnings.size(), 3u);
  EXPECT_NE(r.warnings.back().find("degraded"), std::string::npos);
}

TEST(Dnsbl, ZoneOrderNeverChangesTheDecision) {
  FixtureProvider fx;
  std::vector<std::string> zones{"z1", "z2", "z3", "z4"};
  for (std::uint32_t ip = 1; ip < 200; ++ip)
    for (std::size_t z = 0; z < zones.size(); ++z)
      if ((ip * 7 + z * 13) % 5 == 0) fx.add_dnsbl(zones[z], Ipv4{ip});
  for (std::uint32_t ip = 1; ip < 200; ++ip) {
    SourceFilterConfig c;
    c.dnsbl_zones = zones;
    bool decision = dnsbl_check({Ipv4{ip}, "", "", Timestamp{0}}, c, fx).rejected();
    std::sort(c.dnsbl_zones.begin(), c.dnsbl_zones.end());
    do {
      ASSERT_EQ(dnsbl_check({Ipv4{ip}, "", "", Timestamp{0}}, c, fx).rejected(), decision);
    } while (std::next_permutation(c.dnsbl_zones.begin(), c.dnsbl_zones.end()));
  }
}

TEST(Surbl, ListedDomainRejects) {
  auto fx = fixture("surbl sc.surbl.org evil.com\n");
  SourceFilterConfig c;
  auto r = surbl_check(with_body("see http://evil.com/x"), c, fx);
  ASSERT_TRUE(r.rejected());
  EXPECT_EQ(r.rejection->detail, "evil.com sc.surbl.org");
}

TEST(Surbl, AnyOfSeveralDomains) {
  auto fx = fixture("surbl ob.surbl.org b.example\n");
  SourceFilterConfig c;
  EXPECT_TRUE(surbl_check(with_body("http://a.example http://b.example http://c.example"), c, fx).rejected());
}

TEST(Surbl, ParentDomainOfUrlHostIsQueried) {
  auto fx = fixture("surbl ws.surbl.org evilsite.com\n");
  SourceFilterConfig c;
  auto r = surbl_check(with_body("http://www2.evilsite.com/x"), c, fx);
  ASSERT_TRUE(r.rejected());
  EXPECT_EQ(r.rejection->detail, "evilsite.com ws.surbl.org");
}

TEST(Surbl, WhitelistAndNoUrls) {
  auto fx = fixture("surbl sc.surbl.org evil.com\n");
  SourceFilterConfig c;
  c.surbl_whitelist = {"evil.com"};
  EXPECT_FALSE(surbl_check(with_body("http://www.evil.com/x"), c, fx).rejected());
  EXPECT_FALSE(surbl_check(with_body("no links"), SourceFilterConfig{}, fx).rejected());
}

TEST(Surbl, UnavailableListWarnsAndSkips) {
  auto fx = fixture("surbl sc.surbl.org evil.com\nunavailable sc.surbl.org\n");
  SourceFilterConfig c;
  auto r = surbl_check(with_body("http://evil.com http://evil2.com"), c, fx);
  EXPECT_FALSE(r.rejected());
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(Surbl, FullyWhitelistedBodiesNeverReject) {
  FixtureProvider fx;
  SourceFilterConfig c;
  std::vector<std::string> hosts{"a.example", "b.example", "www.c.example", "d.example"};
  for (const auto& h : hosts) {
    fx.add_surbl("sc.surbl.org", h);
    c.surbl_whitelist.insert(h);
  }
  for (std::uint64_t i = 0; i < 200; ++i) {
    KeyedRng rng(31, {i});
    std::string body;
    for (std::size_t k = 0, n = rng.between(1, 6); k < n; ++k)
      body += "http://" + hosts[rng.between(0, hosts.size() - 1)] + "/" + testing_support::random_word(rng) + " ";
    ASSERT_FALSE(surbl_check(with_body(body), c, fx).rejected()) << body;
  }
}

TEST(Spf, Results) {
  auto fx = fixture("spf x.com hard 192.0.2.10\nspf y.com soft 192.0.2.10\n");
  EXPECT_EQ(spf_check(ctx_for("192.0.2.10"), fx), SpfResult::pass);
  EXPECT_EQ(spf_check(ctx_for("198.51.100.7"), fx), SpfResult::fail);
  EXPECT_EQ(spf_check(ctx_for("198.51.100.7", "h", "y.com"), fx), SpfResult::softfail);
  EXPECT_EQ(spf_check(ctx_for("198.51.100.7", "h", "z.com"), fx), SpfResult::none);
  EXPECT_FALSE(SourceFilterConfig{}.spf_reject_on.contains(SpfResult::none));
}

TEST(Spf, PassImpliesAuthorized) {
  FixtureProvider fx;
  for (std::uint32_t d = 0; d < 20; ++d) {
    std::set<Ipv4> ips;
    for (std::uint32_t k = 0; k < d % 4; ++k) ips.insert(Ipv4{d * 10 + k});
    fx.add_spf("d" + std::to_string(d) + ".example", d % 2 ? SpfFailureMode::soft_fail : SpfFailureMode::hard_fail,
               ips);
  }
  for (std::uint32_t d = 0; d < 20; ++d)
    for (std::uint32_t ip = 0; ip < 250; ++ip) {
      ConnectionContext c{Ipv4{ip}, "", "d" + std::to_string(d) + ".example", Timestamp{0}};
      if (spf_check(c, fx) == SpfResult::pass) {
        ASSERT_TRUE(fx.spf_policy(c.mail_from_domain)->authorized_ips.contains(c.client_ip));
      }
    }
}

TEST(Rdns, Checks) {
  auto fx = fixture("ptr 192.0.2.10 mail.x.com\nptr 192.0.2.11 Mail.X.com\n");
  SourceFilterConfig c;
  auto missing = rdns_check(ctx_for("192.0.2.99"), c, fx);
  ASSERT_TRUE(missing.rejected());
  EXPECT_EQ(missing.rejection->reason, "missing_ptr");

  c.rdns_require_helo_match = true;
  auto mismatch = rdns_check(ctx_for("192.0.2.10", "smtp.y.net"), c, fx);
  ASSERT_TRUE(mismatch.rejected());
  EXPECT_EQ(mismatch.rejection->reason, "helo_mismatch");
  EXPECT_FALSE(rdns_check(ctx_for("192.0.2.11", "mail.x.com"), c, fx).rejected());
  EXPECT_FALSE(rdns_check(ctx_for("192.0.2.11", "mail.x.com."), c, fx).rejected());
}

TEST(SourceFilters, EmptyFixtureFailsOpen) {
  FixtureProvider empty;
  SourceFilterConfig c;
  c.dnsbl_zones = {"a", "b"};
  c.rdns_require_ptr = false;
  for (std::uint64_t i = 0; i < 100; ++i) {
    KeyedRng rng(37, {i});
    auto msg = testing_support::random_message(rng);
    ConnectionContext ctx{Ipv4{static_cast<std::uint32_t>(rng.next())}, "h", msg.envelope_sender.domain, Timestamp{0}};
    ASSERT_FALSE(dnsbl_check(ctx, c, empty).rejected());
    ASSERT_FALSE(surbl_check(msg, c, empty).rejected());
    ASSERT_EQ(spf_check(ctx, empty), SpfResult::none);
    ASSERT_FALSE(rdns_check(ctx, c, empty).rejected());
  }
}

class GreylistTest : public ::testing::Test {
 protected:
  EmailAddress s{"s", "x.com"}, r{"r", "y.com"};
  SourceFilterConfig cfg;
  GreylistStore store;
  GreylistDecision at(Duration t) { return greylist_check(s, r, ctx_for("192.0.2.1", "h", "x.com", Timestamp{t}), cfg, store); }
};

TEST_F(GreylistTest, FirstContactThenRetryInWindow) {
  EXPECT_EQ(at(0s), GreylistDecision::tempfail);
  EXPECT_EQ(at(30min), GreylistDecision::accept);
}

TEST_F(GreylistTest, EarlyRetryKeepsFirstSeen) {
  EXPECT_EQ(at(0s), GreylistDecision::tempfail);
  EXPECT_EQ(at(5s), GreylistDecision::tempfail);
  EXPECT_EQ(store.find(s, r, Ipv4::parse("192.0.2.1"))->first_seen, Timestamp{0});
  EXPECT_EQ(at(20s), GreylistDecision::accept);
}

TEST_F(GreylistTest, ExactWindowBoundaries) {
  EXPECT_EQ(at(0s), GreylistDecision::tempfail);
  EXPECT_EQ(at(9s), GreylistDecision::tempfail);
  EXPECT_EQ(at(10s), GreylistDecision::accept);

  GreylistStore late;
  auto ctx = [&](Duration t) { return ctx_for("192.0.2.1", "h", "x.com", Timestamp{t}); };
  EXPECT_EQ(greylist_check(s, r, ctx(0s), cfg, late), GreylistDecision::tempfail);
  EXPECT_EQ(greylist_check(s, r, ctx(12h), cfg, late), GreylistDecision::accept);

  GreylistStore over;
  EXPECT_EQ(greylist_check(s, r, ctx(0s), cfg, over), GreylistDecision::tempfail);
  EXPECT_EQ(greylist_check(s, r, ctx(12h + 1s), cfg, over), GreylistDecision::tempfail);
  EXPECT_EQ(over.find(s, r, Ipv4::parse("192.0.2.1"))->first_seen, Timestamp{12h + 1s});
  EXPECT_EQ(greylist_check(s, r, ctx(12h + 11s), cfg, over), GreylistDecision::accept);
}

TEST(GreylistProperties, ConfirmedIsAbsorbingAndTripletsUnique) {
  SourceFilterConfig cfg;
  for (std::uint64_t i = 0; i < 200; ++i) {
    KeyedRng rng(41, {i});
    GreylistStore store;
    std::vector<EmailAddress> senders{{"a", "x.com"}, {"b", "x.com"}};
    std::vector<EmailAddress> rcpts{{"c", "y.com"}, {"d", "y.com"}};
    std::vector<Ipv4> ips{Ipv4{1}, Ipv4{2}};
    std::map<std::tuple<EmailAddress, EmailAddress, Ipv4>, bool> confirmed;
    Timestamp now{0};
    for (int step = 0; step < 60; ++step) {
      now += Duration{static_cast<std::int64_t>(rng.between(0, 4 * 3600 * (rng.chance(0.1) ? 5 : 1)))};
      auto& se = senders[rng.between(0, 1)];
      auto& rc = rcpts[rng.between(0, 1)];
      auto ip = ips[rng.between(0, 1)];
      auto d = store.check(se, rc, ip, now, cfg.greylist_min_retry, cfg.greylist_max_retry);
      auto key = std::make_tuple(se, rc, ip);
      if (confirmed[key]) {
        ASSERT_EQ(d, GreylistDecision::accept);
      }
      if (d == GreylistDecision::accept) confirmed[key] = true;
      ASSERT_LE(store.size(), 8u);
      auto entries = store.entries();
      std::set<std::tuple<EmailAddress, EmailAddress, Ipv4>> keys;
      for (const auto& e : entries) keys.insert({e.sender, e.recipient, e.client_ip});
      ASSERT_EQ(keys.size(), entries.size());
    }
  }
}

TEST(GreylistStore, SnapshotRoundTrip) {
  GreylistStore store;
  SourceFilterConfig cfg;
  store.check({"a", "x.com"}, {"b", "y.com"}, Ipv4{5}, Timestamp{0}, cfg.greylist_min_retry, cfg.greylist_max_retry);
  store.check({"a", "x.com"}, {"b", "y.com"}, Ipv4{5}, Timestamp{60}, cfg.greylist_min_retry, cfg.greylist_max_retry);
  store.check({"c", "x.com"}, {"b", "y.com"}, Ipv4{6}, Timestamp{7}, cfg.greylist_min_retry, cfg.greylist_max_retry);
  std::ostringstream out;
  store.save(out);
  EXPECT_EQ(out.str(), "a@x.com b@y.com 0.0.0.5 0 confirmed\nc@x.com b@y.com 0.0.0.6 7 pending\n");
  std::istringstream in(out.str());
  auto back = GreylistStore::load(in);
  std::ostringstream again;
  back.save(again);
  EXPECT_EQ(again.str(), out.str());
  std::istringstream bad("a@x.com b@y.com 0.0.0.5 0 maybe\n");
  EXPECT_THROW(GreylistStore::load(bad), parse_error);
}

TEST(SourceFilterConfig, Validation) {
  SourceFilterConfig c;
  EXPECT_NO_THROW(c.validate());
  c.greylist_min_retry = 12h;
  EXPECT_THROW(c.validate(), config_error);
}
