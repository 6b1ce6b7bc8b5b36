#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace decoysh::shell {

enum class NodeKind { directory, file };

struct VfsNode {
  std::string name;
  NodeKind kind = NodeKind::directory;
  std::map<std::string, VfsNode> children;  // directories only
  std::string content;                      // files only
  std::string owner = "root";
  std::string group = "root";
  std::uint16_t mode = 0755;  // low 9 permission bits
  std::int64_t mtime = 0;     // seconds since the epoch, UTC

  bool is_dir() const { return kind == NodeKind::directory; }

  static VfsNode directory(std::string name, std::uint16_t mode = 0755, std::int64_t mtime = 0);
  static VfsNode file(std::string name, std::string content, std::uint16_t mode = 0644,
                      std::int64_t mtime = 0);

  bool operator==(const VfsNode&) const = default;
};

struct RecentPath {
  std::string path;
  NodeKind kind;
};

/// Everything one emulated login shell remembers between commands.
struct VfsState {
  VfsNode root;
  std::string cwd = "/";
  std::string user = "root";
  std::string hostname = "svr04";
  std::map<std::string, std::string> env;
  int last_exit_code = 0;
  std::deque<RecentPath> recent;      // oldest first
  std::vector<std::string> history;   // lines entered this session
  bool tty = true;                    // false for exec requests and pty-less shells
  std::function<std::int64_t()> now;  // session clock, epoch seconds
};

inline constexpr std::size_t kRecentCapacity = 32;

std::string home_directory(std::string_view user);

/// Builds a fresh session state from a seed image. The user's home directory
/// is created if the image lacks it, and cwd starts there. /etc/hostname is
/// rewritten and an unknown user gets passwd and group entries so that later
/// `cat` and `id` agree with the login.
VfsState make_state(const VfsNode& seed, std::string user, std::string hostname,
                    std::function<std::int64_t()> now = {});

/// Lexical normalisation: joins relative paths to cwd, expands a leading "~",
/// collapses "." and "..". Never climbs above "/".
std::string resolve_path(const VfsState& state, std::string_view path);

std::vector<std::string> split_path(std::string_view absolute);
std::string parent_path(std::string_view absolute);
std::string base_name(std::string_view absolute);

const VfsNode* find_node(const VfsNode& root, std::string_view absolute);
VfsNode* find_node(VfsNode& root, std::string_view absolute);

/// Records a created or modified path for the prompt digest.
void note_recent(VfsState& state, std::string path, NodeKind kind);
void forget_recent(VfsState& state, std::string_view path_or_prefix);

/// Compact digest for prompt injection, at most max_len characters; the
/// oldest recent paths are dropped first.
std::string state_summary(const VfsState& state, std::size_t max_len);

std::int64_t now_seconds(const VfsState& state);

}  // namespace decoysh::shell
