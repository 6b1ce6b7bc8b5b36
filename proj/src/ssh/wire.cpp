#include "decoysh/ssh/wire.hpp"

namespace decoysh::ssh {

Writer& Writer::byte(std::uint8_t v) {
  buf_.push_back(static_cast<char>(v));
  return *this;
}

Writer& Writer::u32(std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) buf_.push_back(static_cast<char>((v >> shift) & 0xFF));
  return *this;
}

Writer& Writer::string(std::string_view v) {
  u32(static_cast<std::uint32_t>(v.size()));
  buf_.append(v);
  return *this;
}

Writer& Writer::mpint(std::string_view v) {
  std::size_t first = 0;
  while (first < v.size() && v[first] == 0) ++first;
  std::string body(v.substr(first));
  if (!body.empty() && (static_cast<unsigned char>(body[0]) & 0x80)) body.insert(body.begin(), '\0');
  return string(body);
}

Writer& Writer::name_list(const std::vector<std::string>& names) { return string(join_names(names)); }

Writer& Writer::raw(std::string_view v) {
  buf_.append(v);
  return *this;
}

std::string_view Reader::take(std::size_t n) {
  if (n > remaining()) throw WireError("truncated message");
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t Reader::byte() { return static_cast<std::uint8_t>(take(1)[0]); }

std::uint32_t Reader::u32() {
  const auto b = take(4);
  std::uint32_t v = 0;
  for (char c : b) v = (v << 8) | static_cast<unsigned char>(c);
  return v;
}

std::string Reader::string() {
  const std::uint32_t n = u32();
  return std::string(take(n));
}

std::vector<std::string> Reader::name_list() { return split_names(string()); }

std::string_view Reader::rest() { return take(remaining()); }

std::vector<std::string> split_names(std::string_view list) {
  std::vector<std::string> out;
  if (list.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = list.find(',', start);
    out.emplace_back(list.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out.push_back(',');
    out += names[i];
  }
  return out;
}

}  // namespace decoysh::ssh
