#pragma once

#include <array>
#include <string>
#include <string_view>

namespace decoysh::metrics {

/// Phrases that betray a model stepping out of the shell role. Matched
/// case-insensitively (ASCII folding) anywhere in the raw output.
inline constexpr std::array<std::string_view, 5> kRoleBreakPhrases{
    "as an ai", "language model", "i cannot", "i'm sorry", "i\xE2\x80\x99m sorry"};

/// Commands whose legitimate output repeats their own arguments.
inline constexpr std::array<std::string_view, 2> kEchoFamily{"echo", "printf"};

struct BreakScan {
  bool command_echo = false;
  bool role_break = false;
  bool residual_fence = false;

  bool any() const { return command_echo || role_break || residual_fence; }
};

/// Removes the outer markdown fence pair (an opening ``` line with optional
/// language tag, and a closing ``` line) plus leading and trailing blank lines.
std::string strip_fences(std::string_view raw);

/// First whitespace-delimited token of the trimmed command line.
std::string_view program_name(std::string_view command);

/// True when the trimmed command occurs in text as a whole word sequence,
/// i.e. not glued to surrounding word characters.
bool contains_command(std::string_view text, std::string_view command);

bool contains_role_break(std::string_view text);

/// Runs every rule: command echo (skipped for echo-family programs), role-break
/// phrases, and fence markers that survive strip_fences.
BreakScan scan_output(std::string_view command, std::string_view raw);

/// Offline counterpart of the session sanitizer's flag.
bool hallucination_flag(std::string_view command, std::string_view actual);

}  // namespace decoysh::metrics
