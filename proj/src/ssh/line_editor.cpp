#include "decoysh/ssh/line_editor.hpp"

namespace decoysh::ssh {

namespace {

void erase_last_char(std::string& s) {
  while (!s.empty()) {
    const auto c = static_cast<unsigned char>(s.back());
    s.pop_back();
    if ((c & 0xC0) != 0x80) break;  // stop after the lead byte
  }
}

}  // namespace

std::optional<LineEditor::Event> LineEditor::poll(std::string& echo) {
  std::size_t i = 0;
  std::optional<Event> ev;
  while (i < pending_.size() && !ev) {
    const char ch = pending_[i++];
    const auto c = static_cast<unsigned char>(ch);

    if (!tty_) {
      if (ch == '\n') {
        if (!line_.empty() && line_.back() == '\r') line_.pop_back();
        ev = Event{Kind::line, std::move(line_)};
        line_.clear();
      } else if (line_.size() < kMaxLine) {
        line_ += ch;
      }
      continue;
    }

    if (escape_ == 1) {
      escape_ = (ch == '[' || ch == 'O') ? 2 : 0;
      continue;
    }
    if (escape_ == 2) {
      if (c >= 0x40 && c <= 0x7E) escape_ = 0;
      continue;
    }
    const bool after_cr = last_cr_;
    last_cr_ = false;
    switch (c) {
      case '\r':
      case '\n':
        if (c == '\n' && after_cr) break;  // second half of CRLF
        last_cr_ = c == '\r';
        echo += "\r\n";
        ev = Event{Kind::line, std::move(line_)};
        line_.clear();
        break;
      case 0x7F:
      case 0x08:
        if (!line_.empty()) {
          erase_last_char(line_);
          echo += "\b \b";
        }
        break;
      case 0x03:
        echo += "^C\r\n";
        line_.clear();
        ev = Event{Kind::interrupt, {}};
        break;
      case 0x04:
        if (line_.empty()) ev = Event{Kind::eof, {}};
        break;
      case 0x15:
        for (std::size_t n = line_.size(); n > 0; --n) {
          if ((static_cast<unsigned char>(line_[n - 1]) & 0xC0) != 0x80) echo += "\b \b";
        }
        line_.clear();
        break;
      case 0x1B:
        escape_ = 1;
        break;
      default:
        if (c < 0x20) break;  // tab and other controls are ignored
        if (line_.size() < kMaxLine) {
          line_ += ch;
          echo += ch;
        }
    }
  }
  pending_.erase(0, i);
  return ev;
}

std::optional<std::string> LineEditor::flush() {
  if (line_.empty()) return std::nullopt;
  std::string out = std::move(line_);
  line_.clear();
  if (!out.empty() && out.back() == '\r') out.pop_back();
  return out;
}

}  // namespace decoysh::ssh
