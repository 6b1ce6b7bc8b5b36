#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace decoysh::ssh {

/// Malformed or truncated protocol data.
class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// SSH data type encoders (RFC 4251 section 5).
class Writer {
 public:
  Writer& byte(std::uint8_t v);
  Writer& boolean(bool v) { return byte(v ? 1 : 0); }
  Writer& u32(std::uint32_t v);
  Writer& string(std::string_view v);
  /// v is an unsigned big-endian magnitude.
  Writer& mpint(std::string_view v);
  Writer& name_list(const std::vector<std::string>& names);
  Writer& raw(std::string_view v);

  const std::string& data() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::uint8_t byte();
  bool boolean() { return byte() != 0; }
  std::uint32_t u32();
  std::string string();
  std::vector<std::string> name_list();
  std::string_view rest();

  bool empty() const { return pos_ >= data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view take(std::size_t n);
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::vector<std::string> split_names(std::string_view list);
std::string join_names(const std::vector<std::string>& names);

}  // namespace decoysh::ssh
