#include "decoysh/shell/vfs.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

namespace decoysh::shell {

VfsNode VfsNode::directory(std::string name, std::uint16_t mode, std::int64_t mtime) {
  VfsNode n;
  n.name = std::move(name);
  n.kind = NodeKind::directory;
  n.mode = mode;
  n.mtime = mtime;
  return n;
}

VfsNode VfsNode::file(std::string name, std::string content, std::uint16_t mode,
                      std::int64_t mtime) {
  VfsNode n;
  n.name = std::move(name);
  n.kind = NodeKind::file;
  n.content = std::move(content);
  n.mode = mode;
  n.mtime = mtime;
  return n;
}

std::string home_directory(std::string_view user) {
  return user == "root" ? "/root" : "/home/" + std::string(user);
}

std::int64_t now_seconds(const VfsState& state) {
  if (state.now) return state.now();
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

namespace {

bool has_entry(const std::string& db, const std::string& name) {
  std::istringstream in(db);
  for (std::string line; std::getline(in, line);) {
    if (line.compare(0, name.size() + 1, name + ":") == 0) return true;
  }
  return false;
}

int next_id(const std::string& db, int field) {
  int best = 999;
  std::istringstream in(db);
  for (std::string line; std::getline(in, line);) {
    std::istringstream cols(line);
    std::string col;
    for (int i = 0; i <= field && std::getline(cols, col, ':'); ++i) {
    }
    try {
      const int id = std::stoi(col);
      if (id >= 1000 && id < 60000) best = std::max(best, id);
    } catch (const std::exception&) {
    }
  }
  return best + 1;
}

void register_account(VfsNode& root, const std::string& user, const std::string& home) {
  VfsNode* passwd = find_node(root, "/etc/passwd");
  if (passwd == nullptr || passwd->is_dir() || has_entry(passwd->content, user)) return;
  const int id = next_id(passwd->content, 2);
  if (!passwd->content.empty() && passwd->content.back() != '\n') passwd->content += '\n';
  passwd->content += user + ":x:" + std::to_string(id) + ":" + std::to_string(id) + ":,,,:" +
                     home + ":/bin/bash\n";
  VfsNode* group = find_node(root, "/etc/group");
  if (group != nullptr && !group->is_dir() && !has_entry(group->content, user)) {
    if (!group->content.empty() && group->content.back() != '\n') group->content += '\n';
    group->content += user + ":x:" + std::to_string(id) + ":\n";
  }
}

}  // namespace

VfsState make_state(const VfsNode& seed, std::string user, std::string hostname,
                    std::function<std::int64_t()> now) {
  VfsState st;
  st.root = seed;
  st.root.name.clear();
  st.root.kind = NodeKind::directory;
  st.user = std::move(user);
  st.hostname = std::move(hostname);
  st.now = std::move(now);

  const std::string home = home_directory(st.user);
  VfsNode* dir = &st.root;
  for (const auto& part : split_path(home)) {
    auto it = dir->children.find(part);
    if (it == dir->children.end() || !it->second.is_dir()) {
      VfsNode d = VfsNode::directory(part, 0755, dir->mtime);
      d.owner = d.group = st.user == "root" ? "root" : st.user;
      it = dir->children.insert_or_assign(part, std::move(d)).first;
    }
    dir = &it->second;
  }
  register_account(st.root, st.user, home);
  if (VfsNode* etc_hostname = find_node(st.root, "/etc/hostname");
      etc_hostname != nullptr && !etc_hostname->is_dir()) {
    etc_hostname->content = st.hostname + "\n";
  }

  st.cwd = home;
  st.env = {
      {"HOME", home},
      {"HOSTNAME", st.hostname},
      {"LANG", "C.UTF-8"},
      {"LOGNAME", st.user},
      {"PATH", "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin"},
      {"PWD", home},
      {"SHELL", "/bin/bash"},
      {"SHLVL", "1"},
      {"TERM", "xterm-256color"},
      {"USER", st.user},
  };
  return st;
}

std::vector<std::string> split_path(std::string_view absolute) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos < absolute.size()) {
    const std::size_t slash = absolute.find('/', pos);
    const std::size_t end = slash == std::string_view::npos ? absolute.size() : slash;
    if (end > pos) parts.emplace_back(absolute.substr(pos, end - pos));
    pos = end + 1;
  }
  return parts;
}

std::string resolve_path(const VfsState& state, std::string_view path) {
  std::string joined;
  if (path == "~" || path.rfind("~/", 0) == 0) {
    joined = home_directory(state.user) + std::string(path.substr(1));
  } else if (!path.empty() && path.front() == '/') {
    joined = path;
  } else {
    joined = state.cwd + "/" + std::string(path);
  }
  std::vector<std::string> stack;
  for (auto& part : split_path(joined)) {
    if (part == ".") continue;
    if (part == "..") {
      if (!stack.empty()) stack.pop_back();
      continue;
    }
    stack.push_back(std::move(part));
  }
  if (stack.empty()) return "/";
  std::string out;
  for (const auto& part : stack) out += "/" + part;
  return out;
}

std::string parent_path(std::string_view absolute) {
  const auto slash = absolute.find_last_of('/');
  if (slash == 0 || slash == std::string_view::npos) return "/";
  return std::string(absolute.substr(0, slash));
}

std::string base_name(std::string_view absolute) {
  const auto slash = absolute.find_last_of('/');
  return std::string(slash == std::string_view::npos ? absolute : absolute.substr(slash + 1));
}

const VfsNode* find_node(const VfsNode& root, std::string_view absolute) {
  const VfsNode* node = &root;
  for (const auto& part : split_path(absolute)) {
    if (!node->is_dir()) return nullptr;
    const auto it = node->children.find(part);
    if (it == node->children.end()) return nullptr;
    node = &it->second;
  }
  return node;
}

VfsNode* find_node(VfsNode& root, std::string_view absolute) {
  return const_cast<VfsNode*>(find_node(static_cast<const VfsNode&>(root), absolute));
}

void note_recent(VfsState& state, std::string path, NodeKind kind) {
  std::erase_if(state.recent, [&](const RecentPath& r) { return r.path == path; });
  state.recent.push_back({std::move(path), kind});
  while (state.recent.size() > kRecentCapacity) state.recent.pop_front();
}

void forget_recent(VfsState& state, std::string_view path) {
  const std::string prefix = std::string(path) + "/";
  std::erase_if(state.recent, [&](const RecentPath& r) {
    return r.path == path || r.path.rfind(prefix, 0) == 0;
  });
}

std::string state_summary(const VfsState& state, std::size_t max_len) {
  const std::string head = "user=" + state.user + " host=" + state.hostname + " cwd=" + state.cwd;
  const std::string tail = " last_exit=" + std::to_string(state.last_exit_code);
  std::vector<std::string> items;
  for (const auto& r : state.recent) {
    items.push_back(r.path + (r.kind == NodeKind::directory ? " (dir)" : " (file)"));
  }
  std::size_t first = 0;
  while (true) {
    std::string recent = " recent=[";
    for (std::size_t i = first; i < items.size(); ++i) {
      if (i > first) recent += ", ";
      recent += items[i];
    }
    recent += "]";
    std::string out = head + recent + tail;
    if (out.size() <= max_len) return out;
    if (first == items.size()) return out.substr(0, max_len);
    ++first;
  }
}

}  // namespace decoysh::shell
