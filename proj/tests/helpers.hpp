#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "spamguard/spamguard.hpp"

namespace testing_support {

using namespace spamguard;

// Wraps a fixture and counts every query, to observe short-circuiting.
class CountingProvider : public LookupProvider {
 public:
  explicit CountingProvider(const FixtureProvider& inner) : inner_(inner) {}

  bool available(std::string_view z) const override { return inner_.available(z); }
  bool dnsbl_listed(Ipv4 ip, std::string_view zone) const override {
    ++dnsbl;
    return inner_.dnsbl_listed(ip, zone);
  }
  bool surbl_listed(std::string_view d, std::string_view list) const override {
    ++surbl;
    return inner_.surbl_listed(d, list);
  }
  std::optional<SpfPolicy> spf_policy(std::string_view domain) const override {
    ++spf;
    return inner_.spf_policy(domain);
  }
  std::optional<std::string> ptr_record(Ipv4 ip) const override {
    ++ptr;
    return inner_.ptr_record(ip);
  }

  int total() const { return dnsbl + surbl + spf + ptr; }

  mutable std::atomic<int> dnsbl{0};
  mutable std::atomic<int> surbl{0};
  mutable std::atomic<int> spf{0};
  mutable std::atomic<int> ptr{0};

 private:
  const FixtureProvider& inner_;
};

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("spamguard-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  static std::atomic<int>& counter() {
    static std::atomic<int> n{0};
    return n;
  }
  std::filesystem::path path_;
};

inline std::string random_word(KeyedRng& rng, std::size_t min_len = 1, std::size_t max_len = 8) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  std::string w;
  auto n = rng.between(min_len, max_len);
  for (std::size_t i = 0; i < n; ++i) w += alphabet[rng.between(0, alphabet.size() - 1)];
  return w;
}

inline std::string random_text(KeyedRng& rng, std::size_t words) {
  static const char* const seps[] = {" ", "  ", ", ", ". ", "\n", "-", "!"};
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += seps[rng.between(0, std::size(seps) - 1)];
    out += random_word(rng);
  }
  return out;
}

// Single-line text for header values.
inline std::string random_line(KeyedRng& rng, std::size_t words) {
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += ' ';
    out += random_word(rng);
  }
  return out;
}

inline EmailAddress random_address(KeyedRng& rng) {
  return {detail::lowercase(random_word(rng, 1, 6)), detail::lowercase(random_word(rng, 1, 6)) + ".example"};
}

// Random well-formed message. Bodies never start with a newline pair so the header block stays intact.
inline EmailMessage random_message(KeyedRng& rng) {
  MessageBuilder b;
  b.from(random_address(rng));
  auto n = rng.between(1, 4);
  for (std::size_t i = 0; i < n; ++i) b.to(random_address(rng));
  b.subject(random_line(rng, rng.between(0, 4)));
  if (rng.chance(0.7)) b.date(Timestamp{static_cast<std::int64_t>(rng.between(0, 2000000000))});
  auto attachments = rng.between(0, 2);
  for (std::size_t i = 0; i < attachments; ++i)
    b.attach(random_word(rng) + "." + random_word(rng, 1, 3) + (rng.chance(0.5) ? ".exe" : ""),
             rng.between(0, 500000));
  if (rng.chance(0.5)) b.header("X-Signature", random_line(rng, 3));
  b.body(random_text(rng, rng.between(0, 40)) + "\n");
  return b.build();
}

}  // namespace testing_support
