#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spamguard/error.hpp"
#include "spamguard/message.hpp"

namespace spamguard {

enum class Label { spam, ham };

inline std::string_view to_string(Label l) { return l == Label::spam ? "spam" : "ham"; }

struct TokenCounts {
  std::uint64_t spam = 0;
  std::uint64_t ham = 0;

  std::uint64_t total() const { return spam + ham; }
  friend bool operator==(const TokenCounts&, const TokenCounts&) = default;
};

// The classifier dictionary. Tokens are kept sorted so persistence is canonical.
struct TokenTable {
  std::map<std::string, TokenCounts, std::less<>> counts;
  std::uint64_t spam_message_total = 0;
  std::uint64_t ham_message_total = 0;
  bool spam_learning_enabled = true;
  bool ham_learning_enabled = true;

  std::size_t size() const { return counts.size(); }

  TokenCounts lookup(std::string_view token) const {
    auto it = counts.find(token);
    return it == counts.end() ? TokenCounts{} : it->second;
  }

  friend bool operator==(const TokenTable&, const TokenTable&) = default;
};

struct BayesConfig {
  double threshold = 0.7;
  std::size_t dictionary_cap = 50000;
  double probability_floor = 0.01;
  double probability_ceiling = 0.99;
  std::size_t max_tokens_scored = 15;

  void validate() const {
    if (!(probability_floor > 0.0 && probability_floor < 0.5 && 0.5 < probability_ceiling &&
          probability_ceiling < 1.0))
      throw config_error("bayes: require 0 < probability_floor < 0.5 < probability_ceiling < 1");
    if (!(threshold >= 0.5 && threshold <= 1.0))
      throw config_error("bayes: threshold must lie in [0.5, 1.0]");
    if (max_tokens_scored == 0) throw config_error("bayes: max_tokens_scored must be positive");
  }
};

// Lowercased runs of alphanumerics (bytes >= 0x80 count as word characters), length >= 2.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  auto word_char = [](unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
  };
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !word_char(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && word_char(static_cast<unsigned char>(text[i]))) ++i;
    if (i - start >= 2) tokens.push_back(detail::lowercase(text.substr(start, i - start)));
  }
  return tokens;
}

// Subject and body only; other headers are not scored.
inline std::vector<std::string> message_tokens(const EmailMessage& msg) {
  auto tokens = tokenize(msg.subject);
  auto body = tokenize(msg.body);
  tokens.insert(tokens.end(), std::make_move_iterator(body.begin()), std::make_move_iterator(body.end()));
  return tokens;
}

// p = s / (s + h) with s, h the per-message occurrence rates, clamped to the configured band.
// A rate is capped at 1: a token cannot be more typical than "present in every message".
inline double token_probability(std::string_view token, const TokenTable& table,
                                const BayesConfig& config) {
  if (table.spam_message_total == 0 || table.ham_message_total == 0)
    throw config_error("bayes: token table needs spam and ham message totals > 0");
  auto counts = table.lookup(token);
  double s = std::min(1.0, static_cast<double>(counts.spam) / static_cast<double>(table.spam_message_total));
  double h = std::min(1.0, static_cast<double>(counts.ham) / static_cast<double>(table.ham_message_total));
  if (s + h == 0.0) return 0.5;
  return std::clamp(s / (s + h), config.probability_floor, config.probability_ceiling);
}

// P = prod(p) / (prod(p) + prod(1 - p)), evaluated in log space.
inline double combine_probabilities(std::span<const double> probabilities) {
  if (probabilities.empty()) return 0.5;
  double log_spam = 0.0;
  double log_ham = 0.0;
  for (double p : probabilities) {
    log_spam += std::log(p);
    log_ham += std::log1p(-p);
  }
  return 1.0 / (1.0 + std::exp(log_ham - log_spam));
}

inline double score_message(const EmailMessage& msg, const TokenTable& table, const BayesConfig& config) {
  auto tokens = message_tokens(msg);
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());

  std::vector<std::pair<double, std::string_view>> scored;
  for (const auto& t : tokens) {
    double p = token_probability(t, table, config);
    if (p != 0.5) scored.emplace_back(p, t);
  }
  // Most extreme first; token order breaks ties so the selection is deterministic.
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return std::abs(a.first - 0.5) > std::abs(b.first - 0.5);
  });
  if (scored.size() > config.max_tokens_scored) scored.resize(config.max_tokens_scored);

  std::vector<double> probabilities;
  probabilities.reserve(scored.size());
  for (const auto& [p, t] : scored) probabilities.push_back(p);
  return combine_probabilities(probabilities);
}

inline Label classify(double score, const BayesConfig& config) {
  return score > config.threshold ? Label::spam : Label::ham;
}

// Adds the message to the table. Returns false (table untouched) when learning for the label is off.
inline bool learn(TokenTable& table, const EmailMessage& msg, Label label) {
  bool enabled = label == Label::spam ? table.spam_learning_enabled : table.ham_learning_enabled;
  if (!enabled) return false;
  for (const auto& token : message_tokens(msg)) {
    auto& counts = table.counts[token];
    (label == Label::spam ? counts.spam : counts.ham) += 1;
  }
  (label == Label::spam ? table.spam_message_total : table.ham_message_total) += 1;
  return true;
}

// Keeps the dictionary_cap tokens with the highest spam+ham count; ties go to the smaller token.
inline void prune_dictionary(TokenTable& table, const BayesConfig& config) {
  if (table.counts.size() <= config.dictionary_cap) return;
  std::vector<std::pair<std::string_view, std::uint64_t>> ranked;
  ranked.reserve(table.counts.size());
  for (const auto& [token, c] : table.counts) ranked.emplace_back(token, c.total());
  // counts is already in lexicographic order, so a stable sort on total keeps the tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::map<std::string, TokenCounts, std::less<>> kept;
  for (std::size_t i = 0; i < config.dictionary_cap; ++i) {
    auto it = table.counts.find(ranked[i].first);
    kept.emplace(it->first, it->second);
  }
  table.counts = std::move(kept);
}

inline void save_token_table(std::ostream& out, const TokenTable& table) {
  out << "totals " << table.spam_message_total << ' ' << table.ham_message_total << '\n';
  for (const auto& [token, c] : table.counts) out << token << ' ' << c.spam << ' ' << c.ham << '\n';
}

inline TokenTable load_token_table(std::istream& in) {
  TokenTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_totals = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_whitespace(line);
    if (fields.size() != 3) throw parse_error("expected three fields", line_no);
    auto a = detail::parse_int<std::uint64_t>(fields[1]);
    auto b = detail::parse_int<std::uint64_t>(fields[2]);
    if (!a || !b) throw parse_error("counts must be non-negative integers", line_no);
    if (!have_totals) {
      if (fields[0] != "totals") throw parse_error("first line must be 'totals <spam> <ham>'", line_no);
      table.spam_message_total = *a;
      table.ham_message_total = *b;
      have_totals = true;
      continue;
    }
    if (*a == 0 && *b == 0) throw parse_error("token with zero counts", line_no);
    if (!table.counts.emplace(std::string(fields[0]), TokenCounts{*a, *b}).second)
      throw parse_error("duplicate token '" + std::string(fields[0]) + "'", line_no);
  }
  if (!have_totals) throw parse_error("token table is empty");
  return table;
}

}  // namespace spamguard
