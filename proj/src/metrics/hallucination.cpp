#include "decoysh/metrics/hallucination.hpp"

#include <algorithm>
#include <vector>

namespace decoysh::metrics {

namespace {

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f';
  });
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

bool ascii_word(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '_';
}

char fold(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : c; }

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

}  // namespace

std::string strip_fences(std::string_view raw) {
  auto lines = split_lines(raw);
  auto drop_blank_edges = [&lines] {
    while (!lines.empty() && is_blank(lines.front())) lines.erase(lines.begin());
    while (!lines.empty() && is_blank(lines.back())) lines.pop_back();
  };
  drop_blank_edges();
  if (!lines.empty() && trim(lines.front()).substr(0, 3) == "```") {
    lines.erase(lines.begin());
    if (!lines.empty() && trim(lines.back()) == "```") lines.pop_back();
  } else if (!lines.empty() && trim(lines.back()) == "```") {
    lines.pop_back();
  }
  drop_blank_edges();

  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    std::string_view line = lines[i];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.append(line);
  }
  return out;
}

std::string_view program_name(std::string_view command) {
  const std::string_view t = trim(command);
  const auto end = t.find_first_of(" \t");
  return t.substr(0, end);
}

bool contains_command(std::string_view text, std::string_view command) {
  const std::string_view needle = trim(command);
  if (needle.empty()) return false;
  const bool check_before = ascii_word(needle.front());
  const bool check_after = ascii_word(needle.back());
  for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + 1)) {
    const bool before_ok = !check_before || pos == 0 || !ascii_word(text[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool after_ok = !check_after || end == text.size() || !ascii_word(text[end]);
    if (before_ok && after_ok) return true;
  }
  return false;
}

bool contains_role_break(std::string_view text) {
  std::string folded(text.size(), '\0');
  std::transform(text.begin(), text.end(), folded.begin(), fold);
  return std::any_of(kRoleBreakPhrases.begin(), kRoleBreakPhrases.end(),
                     [&](std::string_view p) { return folded.find(p) != std::string::npos; });
}

BreakScan scan_output(std::string_view command, std::string_view raw) {
  BreakScan scan;
  const std::string_view program = program_name(command);
  const bool echo_family =
      std::find(kEchoFamily.begin(), kEchoFamily.end(), program) != kEchoFamily.end();
  scan.command_echo = !echo_family && contains_command(raw, command);
  scan.role_break = contains_role_break(raw);
  scan.residual_fence = strip_fences(raw).find("```") != std::string::npos;
  return scan;
}

bool hallucination_flag(std::string_view command, std::string_view actual) {
  return scan_output(command, actual).any();
}

}  // namespace decoysh::metrics
