#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "helpers.hpp"

using namespace spamguard;

namespace {

TokenTable table_with(std::uint64_t spam_total, std::uint64_t ham_total,
                      std::initializer_list<std::tuple<std::string, std::uint64_t, std::uint64_t>> tokens) {
  TokenTable t;
  t.spam_message_total = spam_total;
  t.ham_message_total = ham_total;
  for (const auto& [tok, s, h] : tokens) t.counts[tok] = {s, h};
  return t;
}

EmailMessage body_message(const std::string& body, const std::string& subject = "") {
  return MessageBuilder().from({"a", "x.com"}).to(EmailAddress{"b", "y.com"}).subject(subject).body(body).build();
}

}  // namespace

TEST(TokenProbability, WorkedExample) {
  auto t = table_with(3000, 300, {{"viagra", 400, 5}});
  // Independent evaluation of the same ratio.
  double s = 400.0 / 3000.0;
  double h = 5.0 / 300.0;
  double expected = s / (h + s);
  EXPECT_NEAR(expected, 0.8889, 1e-4);
  EXPECT_NEAR(token_probability("viagra", t, BayesConfig{}), expected, 1e-12);
}

TEST(TokenProbability, SymmetricRates) {
  auto t = table_with(100, 100, {{"x", 10, 10}});
  EXPECT_DOUBLE_EQ(token_probability("x", t, BayesConfig{}), 0.5);
}

TEST(TokenProbability, SpamOnlyTokenClampsToCeiling) {
  auto t = table_with(1000, 500, {{"x", 50, 0}});
  EXPECT_DOUBLE_EQ(token_probability("x", t, BayesConfig{}), 0.99);
  auto u = table_with(1000, 500, {{"y", 0, 50}});
  EXPECT_DOUBLE_EQ(token_probability("y", u, BayesConfig{}), 0.01);
}

TEST(TokenProbability, UnknownTokenIsNeutral) {
  auto t = table_with(10, 10, {});
  EXPECT_DOUBLE_EQ(token_probability("never", t, BayesConfig{}), 0.5);
}

TEST(TokenProbability, ZeroTotalsAreAConfigurationError) {
  EXPECT_THROW(token_probability("x", table_with(0, 10, {}), BayesConfig{}), config_error);
  EXPECT_THROW(token_probability("x", table_with(10, 0, {}), BayesConfig{}), config_error);
}

TEST(CombineProbabilities, HandComputedProduct) {
  std::vector<double> p{0.9, 0.9, 0.1};
  double num = 0.9 * 0.9 * 0.1;
  double den = num + 0.1 * 0.1 * 0.9;
  EXPECT_NEAR(num / den, 0.9, 1e-12);
  EXPECT_NEAR(combine_probabilities(p), num / den, 1e-12);
}

TEST(ScoreMessage, NeutralCases) {
  auto t = table_with(10, 10, {{"even", 3, 3}});
  EXPECT_DOUBLE_EQ(score_message(body_message("even even"), t, BayesConfig{}), 0.5);
  EXPECT_DOUBLE_EQ(score_message(body_message(""), t, BayesConfig{}), 0.5);
  EXPECT_DOUBLE_EQ(score_message(body_message("unseen words only"), t, BayesConfig{}), 0.5);
}

TEST(ScoreMessage, UsesMostExtremeTokens) {
  auto t = table_with(100, 100, {{"aa", 90, 10}, {"bb", 90, 10}, {"cc", 10, 90}, {"dd", 55, 45}});
  BayesConfig c;
  c.max_tokens_scored = 3;
  // dd (0.55) is least extreme and drops out.
  std::vector<double> kept{0.9, 0.9, 0.1};
  EXPECT_NEAR(score_message(body_message("aa bb cc dd"), t, c), combine_probabilities(kept), 1e-12);
}

TEST(ScoreMessage, SubjectIsTokenized) {
  auto t = table_with(100, 100, {{"viagra", 90, 1}});
  EXPECT_GT(score_message(body_message("", "ViAgRa"), t, BayesConfig{}), 0.7);
}

TEST(Tokenize, Rules) {
  EXPECT_EQ(tokenize("Mail, server-REPORT a 1x"), (std::vector<std::string>{"mail", "server", "report", "1x"}));
}

TEST(Classify, StrictThreshold) {
  BayesConfig c;
  EXPECT_EQ(classify(0.8889, c), Label::spam);
  EXPECT_EQ(classify(0.7, c), Label::ham);
  EXPECT_EQ(classify(0.0, c), Label::ham);
}

TEST(Learn, CountsOccurrences) {
  TokenTable t;
  EXPECT_TRUE(learn(t, body_message("viagra and viagra"), Label::spam));
  EXPECT_EQ(t.lookup("viagra").spam, 2u);
  EXPECT_EQ(t.spam_message_total, 1u);
  EXPECT_TRUE(learn(t, body_message("viagra and viagra"), Label::spam));
  EXPECT_EQ(t.lookup("viagra").spam, 4u);
  EXPECT_EQ(t.lookup("and").spam, 2u);
  EXPECT_EQ(t.spam_message_total, 2u);
}

TEST(Learn, DisabledToggleLeavesTableUnchanged) {
  auto t = table_with(3, 4, {{"x", 1, 1}});
  t.ham_learning_enabled = false;
  auto before = t;
  EXPECT_FALSE(learn(t, body_message("hello world"), Label::ham));
  EXPECT_EQ(t, before);
}

TEST(Prune, Examples) {
  BayesConfig c;
  c.dictionary_cap = 5;
  auto small = table_with(1, 1, {{"a", 1, 0}, {"b", 1, 0}, {"c", 1, 0}});
  auto before = small;
  prune_dictionary(small, c);
  EXPECT_EQ(small, before);

  c.dictionary_cap = 2;
  auto t = table_with(1, 1, {{"a", 6, 4}, {"b", 5, 0}, {"c", 0, 1}});
  prune_dictionary(t, c);
  EXPECT_EQ(t.counts.size(), 2u);
  EXPECT_TRUE(t.counts.contains("a"));
  EXPECT_TRUE(t.counts.contains("b"));

  c.dictionary_cap = 1;
  auto tie = table_with(1, 1, {{"b", 5, 0}, {"a", 0, 5}});
  prune_dictionary(tie, c);
  ASSERT_EQ(tie.counts.size(), 1u);
  EXPECT_TRUE(tie.counts.contains("a"));
}

TEST(Prune, MatchesSortOracle) {
  for (std::uint64_t i = 0; i < 100; ++i) {
    KeyedRng rng(17, {i});
    TokenTable t;
    t.spam_message_total = t.ham_message_total = 1;
    auto n = rng.between(0, 60);
    for (std::size_t k = 0; k < n; ++k)
      t.counts[testing_support::random_word(rng, 1, 3)] = {rng.between(0, 5), rng.between(0, 5)};
    BayesConfig c;
    c.dictionary_cap = rng.between(1, 40);
    // Oracle: sort (-total, token), keep the prefix.
    std::vector<std::pair<std::int64_t, std::string>> order;
    for (const auto& [tok, cnt] : t.counts) order.emplace_back(-static_cast<std::int64_t>(cnt.total()), tok);
    std::sort(order.begin(), order.end());
    std::set<std::string> expected;
    for (std::size_t k = 0; k < std::min<std::size_t>(c.dictionary_cap, order.size()); ++k)
      expected.insert(order[k].second);
    auto pruned = t;
    prune_dictionary(pruned, c);
    std::set<std::string> got;
    for (const auto& [tok, cnt] : pruned.counts) got.insert(tok);
    ASSERT_EQ(got, expected);
    auto again = pruned;
    prune_dictionary(again, c);
    ASSERT_EQ(again, pruned);
    ASSERT_LE(pruned.size(), t.size());
  }
}

TEST(TokenTablePersistence, FormatAndRoundTrip) {
  auto t = table_with(3000, 300, {{"viagra", 400, 5}, {"agenda", 1, 80}});
  std::ostringstream out;
  save_token_table(out, t);
  EXPECT_EQ(out.str(), "totals 3000 300\nagenda 1 80\nviagra 400 5\n");
  std::istringstream in(out.str());
  auto back = load_token_table(in);
  EXPECT_EQ(back, t);
  std::ostringstream again;
  save_token_table(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(TokenTablePersistence, RejectsMalformed) {
  auto load = [](const std::string& s) {
    std::istringstream in(s);
    return load_token_table(in);
  };
  EXPECT_THROW(load("viagra 1 2\n"), parse_error);
  EXPECT_THROW(load("totals 1 1\nx 1\n"), parse_error);
  EXPECT_THROW(load("totals 1 1\nx 1 1\nx 2 2\n"), parse_error);
  EXPECT_THROW(load("totals 1 1\nx -1 1\n"), parse_error);
}

TEST(BayesConfig, Validation) {
  BayesConfig c;
  EXPECT_NO_THROW(c.validate());
  c.threshold = 0.4;
  EXPECT_THROW(c.validate(), config_error);
  c = {};
  c.probability_floor = 0.6;
  EXPECT_THROW(c.validate(), config_error);
}

TEST(BayesProperties, ProbabilityMonotoneInCounts) {
  BayesConfig c;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    KeyedRng rng(19, {i});
    auto S = rng.between(1, 50), H = rng.between(1, 50);
    auto s = rng.between(0, 60), h = rng.between(0, 60);
    auto p = token_probability("t", table_with(S, H, {{"t", s, h}}), c);
    ASSERT_GE(token_probability("t", table_with(S, H, {{"t", s + 1, h}}), c), p);
    ASSERT_LE(token_probability("t", table_with(S, H, {{"t", s, h + 1}}), c), p);
    ASSERT_GE(p, c.probability_floor);
    ASSERT_LE(p, c.probability_ceiling);
  }
}

TEST(BayesProperties, ScoreBoundsAndPermutationInvariance) {
  BayesConfig c;
  for (std::uint64_t i = 0; i < 300; ++i) {
    KeyedRng rng(23, {i});
    TokenTable t;
    t.spam_message_total = rng.between(1, 20);
    t.ham_message_total = rng.between(1, 20);
    std::vector<std::string> words;
    for (int k = 0; k < 30; ++k) {
      auto w = detail::lowercase(testing_support::random_word(rng, 2, 5));
      words.push_back(w);
      if (rng.chance(0.7)) t.counts[w] = {rng.between(0, 25), rng.between(0, 25)};
    }
    std::vector<std::string> body;
    for (int k = 0; k < 25; ++k) body.push_back(words[rng.between(0, words.size() - 1)]);
    double score = score_message(body_message(detail::join(body, " ")), t, c);
    // Bounds implied by the clamp and the scored-token cap.
    double lo_p = std::pow(c.probability_floor, 15), hi_p = std::pow(1 - c.probability_floor, 15);
    ASSERT_GE(score, lo_p / (lo_p + hi_p) - 1e-12);
    ASSERT_LE(score, hi_p / (lo_p + hi_p) + 1e-12);
    for (int r = 0; r < 5; ++r) {
      for (std::size_t k = body.size() - 1; k > 0; --k) std::swap(body[k], body[rng.between(0, k)]);
      double permuted = score_message(body_message(detail::join(body, " ")), t, c);
      ASSERT_DOUBLE_EQ(permuted, score);
      ASSERT_EQ(classify(permuted, c), classify(score, c));
    }
  }
}

TEST(BayesProperties, LearningSpamNeverLowersTokenProbability) {
  BayesConfig c;
  for (std::uint64_t i = 0; i < 500; ++i) {
    KeyedRng rng(29, {i});
    TokenTable t;
    t.spam_message_total = rng.between(1, 10);
    t.ham_message_total = rng.between(1, 10);
    std::vector<std::string> vocab;
    for (int k = 0; k < 12; ++k) vocab.push_back(detail::lowercase(testing_support::random_word(rng, 2, 4)));
    for (const auto& w : vocab)
      if (rng.chance(0.8)) t.counts[w] = {rng.between(0, 30), rng.between(0, 30)};
    std::vector<std::string> body;
    for (int k = 0; k < 10; ++k) body.push_back(vocab[rng.between(0, vocab.size() - 1)]);
    auto msg = body_message(detail::join(body, " "));
    std::map<std::string, double> before;
    for (const auto& tok : message_tokens(msg)) before[tok] = token_probability(tok, t, c);
    learn(t, msg, Label::spam);
    for (const auto& [tok, p] : before) ASSERT_GE(token_probability(tok, t, c), p - 1e-15) << tok;
  }
}
