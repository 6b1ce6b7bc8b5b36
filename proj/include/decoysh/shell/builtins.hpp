#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "decoysh/shell/command.hpp"
#include "decoysh/shell/vfs.hpp"

namespace decoysh::shell {

struct BuiltinResult {
  std::string output;  // what the terminal shows, "\n" line endings
  int exit_code = 0;
  bool end_session = false;
};

/// The uname -a line for a given hostname; the cache fixture carries the same text.
std::string kernel_banner(std::string_view hostname);

bool is_builtin(std::string_view program);

/// Runs cmd against state when its program is a builtin and the line uses no
/// grammar the builtins do not model. Returns nullopt to hand the line to the
/// next tier. Emulated failures come back as output with a nonzero exit code;
/// this function does not throw.
std::optional<BuiltinResult> execute_builtin(VfsState& state, const ParsedCommand& cmd);

}  // namespace decoysh::shell
