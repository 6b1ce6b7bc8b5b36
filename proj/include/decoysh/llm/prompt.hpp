#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace decoysh::llm {

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(std::size_t length, std::size_t budget)
      : std::runtime_error("prompt is " + std::to_string(length) + " characters, budget " +
                           std::to_string(budget)),
        length_(length),
        budget_(budget) {}
  std::size_t length() const { return length_; }
  std::size_t budget() const { return budget_; }

 private:
  std::size_t length_;
  std::size_t budget_;
};

/// Three text blocks. `state` must contain {state} and `command` must contain
/// {command}, each exactly once.
struct PromptTemplate {
  std::string system;
  std::string state;
  std::string command;
  bool operator==(const PromptTemplate&) const = default;
};

/// File format: a "# decoysh prompt template v1" header line, then [system],
/// [state] and [command] section markers each on a line of their own.
PromptTemplate parse_prompt_template(std::string_view text);
PromptTemplate load_prompt_template(const std::filesystem::path& path);
const PromptTemplate& default_prompt_template();
std::string serialize_prompt_template(const PromptTemplate& tmpl);

struct PromptBundle {
  std::string system;   // role instruction
  std::string state;    // state block with the digest filled in
  std::string command;  // the attacker's line, verbatim
  std::string frame;    // command block; {command} not yet substituted

  /// Everything after the system instruction.
  std::string user_text() const;
  /// system + user_text, the length the budget applies to.
  std::string serialized() const;
};

/// Throws std::invalid_argument for an empty command and BudgetExceeded when
/// the serialized prompt is longer than budget code points.
PromptBundle build_prompt(std::string_view state_digest, std::string_view command,
                          const PromptTemplate& tmpl, std::size_t budget = 8000);

/// Counts UTF-8 code points; malformed bytes count one each.
std::size_t utf8_length(std::string_view text);
/// Keeps the first max_chars code points.
std::string truncate_utf8(std::string_view text, std::size_t max_chars);

}  // namespace decoysh::llm
