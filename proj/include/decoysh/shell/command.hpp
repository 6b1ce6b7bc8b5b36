#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace decoysh::shell {

class CommandSyntaxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Blank or whitespace-only input; the caller re-prompts.
class EmptyLine : public CommandSyntaxError {
 public:
  EmptyLine() : CommandSyntaxError("empty command line") {}
};

class UnterminatedQuote : public CommandSyntaxError {
 public:
  explicit UnterminatedQuote(char quote)
      : CommandSyntaxError(std::string("unterminated ") + quote + " quote"), quote_(quote) {}
  char quote() const { return quote_; }

 private:
  char quote_;
};

struct Redirect {
  std::string target;
  bool append = false;
  bool operator==(const Redirect&) const = default;
};

struct ParsedCommand {
  std::string program;
  std::vector<std::string> args;
  std::optional<Redirect> redirect;
  std::string raw;
  /// Set when the line uses grammar the builtins do not interpret (pipes,
  /// chaining, globbing, command substitution, other redirections). Such
  /// lines go to the model whole.
  bool complex = false;
};

/// Splits one line into words. Single quotes are literal; double quotes allow
/// \" \\ \$ escapes; a backslash outside quotes escapes the next character.
/// $NAME, ${NAME} and $? expand from env when it is given. Only a single
/// trailing `>` or `>>` redirection is recognised.
ParsedCommand parse_command_line(std::string_view line,
                                 const std::map<std::string, std::string>* env = nullptr,
                                 int last_exit_code = 0);

}  // namespace decoysh::shell
