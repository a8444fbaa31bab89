#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spamguard/detail/text.hpp"
#include "spamguard/error.hpp"

namespace spamguard {

// Seconds since the scenario (or corpus) epoch.
using Timestamp = std::chrono::seconds;
using Duration = std::chrono::seconds;

namespace detail {

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
  Int value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

}  // namespace detail

class Ipv4 {
 public:
  constexpr Ipv4() = default;
  constexpr explicit Ipv4(std::uint32_t value) : value_(value) {}
  constexpr Ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d)
      : value_((std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) | (std::uint32_t{c} << 8) |
               std::uint32_t{d}) {}

  static std::optional<Ipv4> try_parse(std::string_view text) {
    auto parts = detail::split(text, '.');
    if (parts.size() != 4) return std::nullopt;
    std::uint32_t value = 0;
    for (auto part : parts) {
      if (part.empty() || part.size() > 3) return std::nullopt;
      auto octet = detail::parse_int<unsigned>(part);
      if (!octet || *octet > 255) return std::nullopt;
      value = (value << 8) | *octet;
    }
    return Ipv4{value};
  }

  static Ipv4 parse(std::string_view text) {
    auto ip = try_parse(text);
    if (!ip) throw parse_error("invalid IPv4 address '" + std::string(text) + "'");
    return *ip;
  }

  constexpr std::uint32_t value() const noexcept { return value_; }

  std::string str() const {
    return std::to_string(value_ >> 24) + '.' + std::to_string((value_ >> 16) & 0xff) + '.' +
           std::to_string((value_ >> 8) & 0xff) + '.' + std::to_string(value_ & 0xff);
  }

  friend constexpr auto operator<=>(Ipv4, Ipv4) = default;

 private:
  std::uint32_t value_ = 0;
};

// Both parts are case-folded, so address comparison is case-insensitive.
struct EmailAddress {
  std::string local;
  std::string domain;

  // Accepts a bare "local@domain" or a display form "Name <local@domain>".
  static std::optional<EmailAddress> try_parse(std::string_view text) {
    text = detail::trim(text);
    auto open = text.rfind('<');
    if (open != std::string_view::npos) {
      auto close = text.find('>', open);
      if (close == std::string_view::npos) return std::nullopt;
      text = detail::trim(text.substr(open + 1, close - open - 1));
    }
    auto at = text.find('@');
    if (at == std::string_view::npos || text.find('@', at + 1) != std::string_view::npos)
      return std::nullopt;
    auto local = text.substr(0, at);
    auto domain = text.substr(at + 1);
    if (local.empty() || domain.empty()) return std::nullopt;
    for (char c : text)
      if (detail::is_space(c) || c == ',' || c == '<' || c == '>') return std::nullopt;
    return EmailAddress{detail::lowercase(local), detail::lowercase(domain)};
  }

  static EmailAddress parse(std::string_view text) {
    auto address = try_parse(text);
    if (!address) throw parse_error("invalid email address '" + std::string(text) + "'");
    return *address;
  }

  std::string str() const { return local + '@' + domain; }

  friend auto operator<=>(const EmailAddress&, const EmailAddress&) = default;
};

// Lowercased dot-separated segments after the base name: "update.doc.exe" -> {doc, exe}.
inline std::vector<std::string> extension_chain(std::string_view filename) {
  std::vector<std::string> chain;
  auto segments = detail::split(filename, '.');
  for (std::size_t i = 1; i < segments.size(); ++i) chain.push_back(detail::lowercase(segments[i]));
  return chain;
}

struct AttachmentMeta {
  std::string filename;
  std::uint64_t size_bytes = 0;
  std::vector<std::string> declared_extensions;

  AttachmentMeta() = default;
  AttachmentMeta(std::string name, std::uint64_t size)
      : filename(std::move(name)), size_bytes(size), declared_extensions(extension_chain(filename)) {}

  friend bool operator==(const AttachmentMeta&, const AttachmentMeta&) = default;
};

struct Header {
  std::string name;
  std::string value;

  friend bool operator==(const Header&, const Header&) = default;
};

struct EmailMessage {
  EmailAddress envelope_sender;
  std::vector<EmailAddress> envelope_recipients;
  std::string subject;
  std::vector<Header> headers;
  std::string body;
  std::vector<AttachmentMeta> attachments;

  // First header with the given name (case-insensitive).
  std::optional<std::string_view> header(std::string_view name) const {
    for (const auto& h : headers)
      if (detail::iequals(h.name, name)) return std::string_view(h.value);
    return std::nullopt;
  }

  bool has_header(std::string_view name) const { return header(name).has_value(); }

  // Value of the Date header, or the epoch when absent.
  Timestamp date() const {
    auto value = header("Date");
    if (!value) return Timestamp{0};
    auto seconds = detail::parse_int<std::int64_t>(detail::trim(*value));
    return Timestamp{seconds.value_or(0)};
  }

  friend bool operator==(const EmailMessage&, const EmailMessage&) = default;
};

struct ConnectionContext {
  Ipv4 client_ip;
  std::string helo_hostname;
  std::string mail_from_domain;
  Timestamp timestamp{0};
};

namespace detail {

inline AttachmentMeta parse_attachment(std::string_view value, std::size_t line) {
  auto sep = value.rfind(';');
  if (sep == std::string_view::npos)
    throw parse_error("X-Attachment must be 'filename;size_bytes'", line);
  auto name = trim(value.substr(0, sep));
  auto size = parse_int<std::uint64_t>(trim(value.substr(sep + 1)));
  if (name.empty() || !size) throw parse_error("X-Attachment must be 'filename;size_bytes'", line);
  return AttachmentMeta(std::string(name), *size);
}

}  // namespace detail

// Parses the corpus message format: "Name: value" header lines, a blank line, then the body.
inline EmailMessage parse_message(std::string_view raw) {
  EmailMessage msg;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool have_from = false;
  bool have_to = false;
  std::size_t from_line = 0;
  std::string from_value;
  while (pos < raw.size()) {
    auto eol = raw.find('\n', pos);
    auto next = eol == std::string_view::npos ? raw.size() : eol + 1;
    auto line = raw.substr(pos, (eol == std::string_view::npos ? raw.size() : eol) - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    pos = next;
    if (line.empty()) {
      msg.body = std::string(raw.substr(pos));
      break;
    }
    auto colon = line.find(':');
    if (colon == std::string_view::npos || colon == 0)
      throw parse_error("malformed header line '" + std::string(line) + "'", line_no);
    Header h{std::string(line.substr(0, colon)), std::string(detail::trim(line.substr(colon + 1)))};

    if (detail::iequals(h.name, "From")) {
      if (!have_from) {
        have_from = true;
        from_line = line_no;
        from_value = h.value;
      }
    } else if (detail::iequals(h.name, "To")) {
      have_to = true;
      for (const auto& item : detail::split_list(h.value)) {
        auto rcpt = EmailAddress::try_parse(item);
        if (!rcpt) throw parse_error("invalid recipient '" + item + "'", line_no);
        msg.envelope_recipients.push_back(std::move(*rcpt));
      }
    } else if (detail::iequals(h.name, "Subject")) {
      msg.subject = h.value;
    } else if (detail::iequals(h.name, "Date")) {
      if (!detail::parse_int<std::int64_t>(h.value))
        throw parse_error("Date must be integer seconds", line_no);
    } else if (detail::iequals(h.name, "X-Attachment")) {
      msg.attachments.push_back(detail::parse_attachment(h.value, line_no));
    }
    msg.headers.push_back(std::move(h));
  }
  if (!have_from) throw parse_error("missing From header");
  if (!have_to) throw parse_error("missing To header");
  auto sender = EmailAddress::try_parse(from_value);
  if (!sender) throw parse_error("invalid sender '" + from_value + "'", from_line);
  msg.envelope_sender = std::move(*sender);
  if (msg.envelope_recipients.empty()) throw parse_error("To header lists no recipients");
  return msg;
}

inline std::string render_message(const EmailMessage& msg) {
  std::string out;
  for (const auto& h : msg.headers) {
    out += h.name;
    out += ": ";
    out += h.value;
    out += '\n';
  }
  out += '\n';
  out += msg.body;
  return out;
}

// Assembles a message whose structured fields and header block agree.
class MessageBuilder {
 public:
  MessageBuilder& from(const EmailAddress& sender, std::string_view display_name = {}) {
    msg_.envelope_sender = sender;
    from_display_ = display_name;
    return *this;
  }
  MessageBuilder& to(const EmailAddress& rcpt) {
    msg_.envelope_recipients.push_back(rcpt);
    return *this;
  }
  MessageBuilder& to(const std::vector<EmailAddress>& rcpts) {
    for (const auto& r : rcpts) to(r);
    return *this;
  }
  MessageBuilder& subject(std::string s) {
    msg_.subject = std::move(s);
    return *this;
  }
  MessageBuilder& date(Timestamp t) {
    date_ = t;
    return *this;
  }
  MessageBuilder& header(std::string name, std::string value) {
    extra_.push_back({std::move(name), std::move(value)});
    return *this;
  }
  MessageBuilder& attach(std::string filename, std::uint64_t size) {
    msg_.attachments.emplace_back(std::move(filename), size);
    return *this;
  }
  MessageBuilder& body(std::string text) {
    msg_.body = std::move(text);
    return *this;
  }

  EmailMessage build() const {
    if (msg_.envelope_recipients.empty()) throw error("message needs at least one recipient");
    EmailMessage m = msg_;
    m.headers.clear();
    std::string from = from_display_.empty() ? m.envelope_sender.str()
                                             : from_display_ + " <" + m.envelope_sender.str() + ">";
    m.headers.push_back({"From", std::move(from)});
    std::vector<std::string> rcpts;
    for (const auto& r : m.envelope_recipients) rcpts.push_back(r.str());
    m.headers.push_back({"To", detail::join(rcpts, ", ")});
    m.headers.push_back({"Subject", m.subject});
    if (date_) m.headers.push_back({"Date", std::to_string(date_->count())});
    for (const auto& a : m.attachments)
      m.headers.push_back({"X-Attachment", a.filename + ';' + std::to_string(a.size_bytes)});
    for (const auto& h : extra_) m.headers.push_back(h);
    return m;
  }

 private:
  EmailMessage msg_;
  std::string from_display_;
  std::optional<Timestamp> date_;
  std::vector<Header> extra_;
};

// Distinct hosts of http:// and https:// URLs in first-appearance order, lowercased.
inline std::vector<std::string> extract_url_domains(std::string_view body) {
  std::vector<std::string> hosts;
  auto is_terminator = [](char c) {
    return detail::is_space(c) || c == '/' || c == '?' || c == '#' || c == '"' || c == '\'' ||
           c == '<' || c == '>' || c == ')' || c == '(' || c == ']' || c == '[' || c == ',' ||
           c == ';' || c == '\\';
  };
  std::size_t pos = 0;
  while (pos < body.size()) {
    auto http = detail::ifind(body, "http", pos);
    if (http == std::string_view::npos) break;
    std::size_t after = http + 4;
    if (after < body.size() && detail::to_lower(body[after]) == 's') ++after;
    if (body.substr(after, 3) != "://") {
      pos = http + 4;
      continue;
    }
    std::size_t start = after + 3;
    std::size_t end = start;
    while (end < body.size() && !is_terminator(body[end])) ++end;
    pos = end;

    auto authority = body.substr(start, end - start);
    if (auto at = authority.rfind('@'); at != std::string_view::npos) authority.remove_prefix(at + 1);
    if (auto colon = authority.find(':'); colon != std::string_view::npos)
      authority = authority.substr(0, colon);
    while (!authority.empty() && authority.back() == '.') authority.remove_suffix(1);
    if (authority.empty() || authority.front() == '.' || authority.find("..") != std::string_view::npos)
      continue;
    bool valid = std::all_of(authority.begin(), authority.end(), [](char c) {
      return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
             c == '-';
    });
    if (!valid) continue;
    auto host = detail::lowercase(authority);
    if (std::find(hosts.begin(), hosts.end(), host) == hosts.end()) hosts.push_back(std::move(host));
  }
  return hosts;
}

struct CorpusEntry {
  std::string filename;
  EmailMessage message;
};

// Reads every *.msg file of a corpus directory in filename order.
inline std::vector<CorpusEntry> load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw error("corpus directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".msg") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<CorpusEntry> corpus;
  corpus.reserve(files.size());
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
      corpus.push_back({path.filename().string(), parse_message(buf.str())});
    } catch (const parse_error& e) {
      throw parse_error(path.filename().string() + ": " + e.what());
    }
  }
  return corpus;
}

}  // namespace spamguard
