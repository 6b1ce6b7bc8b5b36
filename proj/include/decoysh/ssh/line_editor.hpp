#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace decoysh::ssh {

/// Cooked-mode line discipline for a channel. With a pty the client sends
/// raw keystrokes and expects the server to echo them; without one the
/// client sends whole lines and expects no echo.
class LineEditor {
 public:
  enum class Kind { line, interrupt, eof };
  struct Event {
    Kind kind;
    std::string line;  // without the terminator
  };

  static constexpr std::size_t kMaxLine = 64 * 1024;

  explicit LineEditor(bool tty) : tty_(tty) {}

  void push(std::string_view bytes) { pending_.append(bytes); }

  /// Consumes pending bytes up to the next event. Bytes to echo back are
  /// appended to echo.
  std::optional<Event> poll(std::string& echo);

  /// Input of an unterminated last line when the channel sees EOF.
  std::optional<std::string> flush();

  bool tty() const { return tty_; }

 private:
  bool tty_;
  std::string pending_;
  std::string line_;
  bool last_cr_ = false;
  int escape_ = 0;  // 0 none, 1 after ESC, 2 inside a CSI sequence
};

}  // namespace decoysh::ssh
