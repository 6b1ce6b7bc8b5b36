#include "decoysh/shell/builtins.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <functional>
#include <set>
#include <sstream>
#include <unordered_map>
#include <vector>

namespace decoysh::shell {

namespace {

// GNU tools quote operands with U+2018/U+2019 in some messages under a UTF-8
// locale and with plain apostrophes in others.
const std::string kLq = "\xE2\x80\x98";
const std::string kRq = "\xE2\x80\x99";

constexpr std::string_view kKernelRelease = "5.15.0-78-generic";
constexpr std::string_view kKernelVersion = "#85-Ubuntu SMP Fri Jul 7 15:25:09 UTC 2023";

struct Io {
  std::string out;
  std::string err;
  std::string both;  // interleaved, what an unredirected terminal shows
  int code = 0;
  bool end_session = false;

  void print(std::string_view s) {
    out += s;
    both += s;
  }
  void error(std::string_view s) {
    err += s;
    both += s;
  }
  void fail(std::string_view s, int c = 1) {
    error(s);
    code = c;
  }
};

using Args = std::vector<std::string>;

// ---- permission helpers ----

bool allowed(const VfsState& st, const VfsNode& node, int bit) {
  if (st.user == "root") return true;
  if (node.owner == st.user) return (node.mode >> 6) & bit;
  if (node.group == st.user) return (node.mode >> 3) & bit;
  return node.mode & bit;
}
bool can_read(const VfsState& st, const VfsNode& n) { return allowed(st, n, 4); }
bool can_write(const VfsState& st, const VfsNode& n) { return allowed(st, n, 2); }
bool can_enter(const VfsState& st, const VfsNode& n) { return allowed(st, n, 1); }

enum class Lookup { ok, missing, not_dir, denied };

// Walks to path, reporting the first failure the way the kernel would.
Lookup lookup(const VfsState& st, const std::string& abs, const VfsNode** out) {
  const VfsNode* node = &st.root;
  for (const auto& part : split_path(abs)) {
    if (!node->is_dir()) return Lookup::not_dir;
    if (!can_enter(st, *node)) return Lookup::denied;
    auto it = node->children.find(part);
    if (it == node->children.end()) return Lookup::missing;
    node = &it->second;
  }
  *out = node;
  return Lookup::ok;
}

std::string_view reason(Lookup l) {
  switch (l) {
    case Lookup::missing: return "No such file or directory";
    case Lookup::not_dir: return "Not a directory";
    case Lookup::denied: return "Permission denied";
    case Lookup::ok: break;
  }
  return "Success";
}

struct Target {
  Lookup status = Lookup::ok;
  VfsNode* parent = nullptr;
  std::string abs;
  std::string name;
};

// Locates the directory that would hold a new entry at path.
Target creation_target(VfsState& st, std::string_view path) {
  Target t;
  t.abs = resolve_path(st, path);
  t.name = base_name(t.abs);
  const VfsNode* parent = nullptr;
  t.status = lookup(st, parent_path(t.abs), &parent);
  if (t.status == Lookup::ok && !parent->is_dir()) t.status = Lookup::not_dir;
  if (t.status == Lookup::ok) t.parent = const_cast<VfsNode*>(parent);
  return t;
}

void touch_dir(VfsState& st, VfsNode& dir) { dir.mtime = now_seconds(st); }

// ---- option parsing ----

struct Options {
  std::set<char> flags;
  std::vector<std::string> long_flags;
  Args operands;
  std::string bad;   // first unknown short option
  std::string bad_long;
};

Options parse_options(const Args& args, std::string_view known) {
  Options o;
  bool done = false;
  for (const auto& a : args) {
    if (done || a.size() < 2 || a[0] != '-') {
      o.operands.push_back(a);
      continue;
    }
    if (a == "--") {
      done = true;
      continue;
    }
    if (a.rfind("--", 0) == 0) {
      o.long_flags.push_back(a.substr(2));
      continue;
    }
    for (std::size_t i = 1; i < a.size(); ++i) {
      if (known.find(a[i]) == std::string_view::npos) {
        if (o.bad.empty()) o.bad = std::string(1, a[i]);
      } else {
        o.flags.insert(a[i]);
      }
    }
  }
  return o;
}

void invalid_option(Io& io, std::string_view prog, const Options& o, int code) {
  if (!o.bad.empty()) {
    io.fail(std::string(prog) + ": invalid option -- '" + o.bad + "'\n", code);
  } else {
    io.fail(std::string(prog) + ": unrecognized option '--" + o.bad_long + "'\n", code);
  }
  io.error("Try '" + std::string(prog) + " --help' for more information.\n");
}

void missing_operand(Io& io, std::string_view prog, std::string_view what = "operand") {
  io.fail(std::string(prog) + ": missing " + std::string(what) + "\nTry '" + std::string(prog) +
          " --help' for more information.\n");
}

// Maps long options onto short ones; anything unmapped becomes bad_long.
bool map_long(Options& o, const std::unordered_map<std::string, char>& table) {
  for (const auto& l : o.long_flags) {
    auto it = table.find(l);
    if (it == table.end()) {
      o.bad_long = l;
      return false;
    }
    if (it->second != 0) o.flags.insert(it->second);
  }
  return o.bad.empty();
}

bool parse_count(const std::string& s, long& n) {
  if (s.empty()) return false;
  std::size_t i = s[0] == '-' || s[0] == '+' ? 1 : 0;
  if (i == s.size()) return false;
  for (std::size_t k = i; k < s.size(); ++k) {
    if (s[k] < '0' || s[k] > '9') return false;
  }
  try {
    n = std::stol(s);
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

std::vector<std::string_view> split_lines(std::string_view content) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(content.substr(pos));
      break;
    }
    lines.push_back(content.substr(pos, nl - pos + 1));
    pos = nl + 1;
  }
  return lines;
}

// ---- passwd / group ----

struct Account {
  std::string name;
  int uid = 0;
  int gid = 0;
  std::string home;
};

std::vector<std::vector<std::string>> read_db(const VfsState& st, std::string_view path) {
  std::vector<std::vector<std::string>> rows;
  const VfsNode* node = find_node(st.root, path);
  if (node == nullptr || node->is_dir()) return rows;
  std::istringstream in(node->content);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
      auto c = line.find(':', pos);
      cols.push_back(line.substr(pos, c == std::string::npos ? std::string::npos : c - pos));
      if (c == std::string::npos) break;
      pos = c + 1;
    }
    rows.push_back(std::move(cols));
  }
  return rows;
}

std::optional<Account> find_account(const VfsState& st, std::string_view user) {
  for (const auto& row : read_db(st, "/etc/passwd")) {
    if (row.size() >= 6 && row[0] == user) {
      try {
        return Account{row[0], std::stoi(row[2]), std::stoi(row[3]), row[5]};
      } catch (const std::exception&) {
        return std::nullopt;
      }
    }
  }
  return std::nullopt;
}

std::string group_name(const VfsState& st, int gid) {
  for (const auto& row : read_db(st, "/etc/group")) {
    if (row.size() >= 3 && row[2] == std::to_string(gid)) return row[0];
  }
  return std::to_string(gid);
}

std::vector<std::pair<int, std::string>> supplementary_groups(const VfsState& st,
                                                              const std::string& user) {
  std::vector<std::pair<int, std::string>> out;
  for (const auto& row : read_db(st, "/etc/group")) {
    if (row.size() < 4) continue;
    std::istringstream members(row[3]);
    for (std::string m; std::getline(members, m, ',');) {
      if (m == user) {
        try {
          out.emplace_back(std::stoi(row[2]), row[0]);
        } catch (const std::exception&) {
        }
      }
    }
  }
  return out;
}

// ---- individual builtins ----

void cmd_cd(VfsState& st, const Args& args, Io& io) {
  Args ops;
  for (const auto& a : args) {
    if (a == "-L" || a == "-P" || a == "--") continue;
    ops.push_back(a);
  }
  if (ops.size() > 1) return io.fail("bash: cd: too many arguments\n");
  std::string target;
  bool print = false;
  if (ops.empty()) {
    auto it = st.env.find("HOME");
    if (it == st.env.end()) return io.fail("bash: cd: HOME not set\n");
    target = it->second;
  } else if (ops[0] == "-") {
    auto it = st.env.find("OLDPWD");
    if (it == st.env.end()) return io.fail("bash: cd: OLDPWD not set\n");
    target = it->second;
    print = true;
  } else {
    target = ops[0];
  }
  if (target.empty()) return;
  const std::string abs = resolve_path(st, target);
  const VfsNode* node = nullptr;
  Lookup l = lookup(st, abs, &node);
  if (l == Lookup::ok && !node->is_dir()) l = Lookup::not_dir;
  if (l == Lookup::ok && !can_enter(st, *node)) l = Lookup::denied;
  if (l != Lookup::ok) {
    return io.fail("bash: cd: " + target + ": " + std::string(reason(l)) + "\n");
  }
  st.env["OLDPWD"] = st.cwd;
  st.cwd = abs;
  st.env["PWD"] = abs;
  if (print) io.print(abs + "\n");
}

std::string mode_string(const VfsNode& n) {
  std::string s = n.is_dir() ? "d" : "-";
  const char* rwx = "rwx";
  for (int i = 8; i >= 0; --i) s += (n.mode >> i) & 1 ? rwx[(8 - i) % 3] : '-';
  return s;
}

std::size_t node_size(const VfsNode& n) { return n.is_dir() ? 4096 : n.content.size(); }

std::size_t node_blocks_k(const VfsNode& n) {
  const std::size_t size = node_size(n);
  return (size + 4095) / 4096 * 4;
}

std::size_t link_count(const VfsNode& n) {
  if (!n.is_dir()) return 1;
  std::size_t links = 2;
  for (const auto& [_, c] : n.children) links += c.is_dir();
  return links;
}

std::string human_size(double bytes) {
  if (bytes < 1024) return std::to_string(static_cast<long long>(bytes));
  const char* units = "KMGTPE";
  int u = -1;
  while (bytes >= 1024 && u < 5) {
    bytes /= 1024;
    ++u;
  }
  // ls rounds up; rounding may carry into the next unit
  double shown = bytes < 10 ? std::ceil(bytes * 10) / 10 : std::ceil(bytes);
  if (shown >= 1024 && u < 5) {
    shown = 1.0;
    ++u;
  }
  char buf[32];
  if (shown < 10) {
    std::snprintf(buf, sizeof buf, "%.1f%c", shown, units[u]);
  } else {
    std::snprintf(buf, sizeof buf, "%.0f%c", shown, units[u]);
  }
  return buf;
}

std::string format_mtime(std::int64_t t) {
  std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%b %e %H:%M", &tm);
  return buf;
}

bool needs_quotes(std::string_view name) {
  return name.find_first_of(" \t'\"$`\\!&|;()<>*?[]{}#~") != std::string_view::npos;
}

std::string display_name(const VfsState& st, std::string_view name) {
  if (!st.tty || !needs_quotes(name)) return std::string(name);
  if (name.find('\'') == std::string_view::npos) return "'" + std::string(name) + "'";
  return "\"" + std::string(name) + "\"";
}

// GNU ls -C: fill columns top to bottom, use the most columns whose total
// width stays under the terminal width; two spaces between columns.
std::string columns(const std::vector<std::string>& names, std::size_t width = 80) {
  if (names.empty()) return {};
  const std::size_t n = names.size();
  std::size_t best_cols = 1;
  std::vector<std::size_t> best_widths{0};
  for (std::size_t cols = 1; cols <= n; ++cols) {
    const std::size_t rows = (n + cols - 1) / cols;
    if ((n + rows - 1) / rows != cols) continue;  // would leave an empty column
    std::vector<std::size_t> widths(cols, 0);
    for (std::size_t i = 0; i < n; ++i) {
      widths[i / rows] = std::max(widths[i / rows], names[i].size());
    }
    std::size_t total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += widths[c] + (c + 1 < cols ? 2 : 0);
    if (total < width) {
      best_cols = cols;
      best_widths = widths;
    }
  }
  const std::size_t rows = (n + best_cols - 1) / best_cols;
  std::string out;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < best_cols; ++c) {
      const std::size_t i = c * rows + r;
      if (i >= n) break;
      out += names[i];
      const bool last = c + 1 == best_cols || (c + 1) * rows + r >= n;
      if (!last) out.append(best_widths[c] + 2 - names[i].size(), ' ');
    }
    out += '\n';
  }
  return out;
}

struct LsEntry {
  std::string name;
  const VfsNode* node;
};

std::string ls_render(const VfsState& st, std::vector<LsEntry> entries,
                      const std::set<char>& flags, bool with_total) {
  if (flags.count('r')) std::reverse(entries.begin(), entries.end());
  std::string out;
  if (flags.count('l')) {
    std::size_t links_w = 0, owner_w = 0, group_w = 0, size_w = 0, total = 0;
    std::vector<std::string> sizes;
    for (const auto& e : entries) {
      links_w = std::max(links_w, std::to_string(link_count(*e.node)).size());
      owner_w = std::max(owner_w, e.node->owner.size());
      group_w = std::max(group_w, e.node->group.size());
      sizes.push_back(flags.count('h') ? human_size(static_cast<double>(node_size(*e.node)))
                                       : std::to_string(node_size(*e.node)));
      size_w = std::max(size_w, sizes.back().size());
      total += node_blocks_k(*e.node);
    }
    if (with_total) {
      out += "total " + (flags.count('h') ? human_size(static_cast<double>(total) * 1024)
                                         : std::to_string(total)) +
             "\n";
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      const std::string links = std::to_string(link_count(*e.node));
      std::string line = mode_string(*e.node) + " ";
      line += std::string(links_w - links.size(), ' ') + links + " ";
      line += e.node->owner + std::string(owner_w - e.node->owner.size(), ' ') + " ";
      line += e.node->group + std::string(group_w - e.node->group.size(), ' ') + " ";
      line += std::string(size_w - sizes[i].size(), ' ') + sizes[i] + " ";
      line += format_mtime(e.node->mtime) + " " + display_name(st, e.name);
      out += line + "\n";
    }
    return out;
  }
  std::vector<std::string> names;
  for (const auto& e : entries) names.push_back(display_name(st, e.name));
  if (flags.count('1') || !st.tty) {
    for (const auto& n : names) out += n + "\n";
    return out;
  }
  return columns(names);
}

void cmd_ls(VfsState& st, const Args& args, Io& io) {
  Options o = parse_options(args, "aAlh1rdC");
  if (!map_long(o, {{"all", 'a'},
                    {"almost-all", 'A'},
                    {"human-readable", 'h'},
                    {"reverse", 'r'},
                    {"directory", 'd'},
                    {"color", 0},
                    {"color=auto", 0},
                    {"color=never", 0}})) {
    return invalid_option(io, "ls", o, 2);
  }
  if (o.operands.empty()) o.operands.push_back(".");

  std::vector<LsEntry> files;
  std::vector<std::pair<std::string, const VfsNode*>> dirs;
  for (const auto& operand : o.operands) {
    const std::string abs = resolve_path(st, operand);
    const VfsNode* node = nullptr;
    Lookup l = lookup(st, abs, &node);
    if (l != Lookup::ok) {
      io.fail("ls: cannot access '" + operand + "': " + std::string(reason(l)) + "\n", 2);
      continue;
    }
    if (node->is_dir() && !o.flags.count('d')) {
      dirs.emplace_back(operand, node);
    } else {
      files.push_back({operand, node});
    }
  }
  std::sort(files.begin(), files.end(),
            [](const LsEntry& a, const LsEntry& b) { return a.name < b.name; });
  std::sort(dirs.begin(), dirs.end());

  std::string out = ls_render(st, files, o.flags, false);
  const bool headers = o.operands.size() > 1;
  bool first = files.empty();
  for (const auto& [label, dir] : dirs) {
    if (!first) out += "\n";
    first = false;
    if (headers) out += label + ":\n";
    if (!can_read(st, *dir)) {
      io.print(out);
      out.clear();
      io.fail("ls: cannot open directory '" + label + "': Permission denied\n", 2);
      continue;
    }
    std::vector<LsEntry> entries;
    if (o.flags.count('a')) {
      const std::string abs = resolve_path(st, label);
      entries.push_back({".", dir});
      entries.push_back({"..", find_node(st.root, parent_path(abs))});
    }
    for (const auto& [name, child] : dir->children) {
      if (name.front() == '.' && !o.flags.count('a') && !o.flags.count('A')) continue;
      entries.push_back({name, &child});
    }
    out += ls_render(st, entries, o.flags, true);
  }
  io.print(out);
}

// Opens a file operand for reading, printing "<prog>: <msg>" on failure.
const VfsNode* open_for_read(VfsState& st, const std::string& operand, Io& io,
                             const std::function<std::string(std::string_view)>& message) {
  const VfsNode* node = nullptr;
  Lookup l = lookup(st, resolve_path(st, operand), &node);
  if (l == Lookup::ok && !node->is_dir() && !can_read(st, *node)) l = Lookup::denied;
  if (l != Lookup::ok) {
    io.fail(message(reason(l)));
    return nullptr;
  }
  return node;
}

void cmd_cat(VfsState& st, const Args& args, Io& io) {
  Options o = parse_options(args, "nAbesTuv");
  if (!map_long(o, {{"number", 'n'}})) return invalid_option(io, "cat", o, 1);
  std::size_t line_no = 0;
  for (const auto& operand : o.operands) {
    if (operand == "-") continue;
    const VfsNode* node = open_for_read(st, operand, io, [&](std::string_view why) {
      return "cat: " + operand + ": " + std::string(why) + "\n";
    });
    if (node == nullptr) continue;
    if (node->is_dir()) {
      io.fail("cat: " + operand + ": Is a directory\n");
      continue;
    }
    if (!o.flags.count('n')) {
      io.print(node->content);
      continue;
    }
    for (auto line : split_lines(node->content)) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%6zu\t", ++line_no);
      io.print(buf);
      io.print(line);
    }
  }
}

std::string echo_escapes(std::string_view s, bool& stop) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 >= s.size()) {
      out += s[i];
      continue;
    }
    const char c = s[++i];
    switch (c) {
      case 'a': out += '\a'; break;
      case 'b': out += '\b'; break;
      case 'c': stop = true; return out;
      case 'e': case 'E': out += '\x1b'; break;
      case 'f': out += '\f'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 't': out += '\t'; break;
      case 'v': out += '\v'; break;
      case '\\': out += '\\'; break;
      case '0': {
        int v = 0, k = 0;
        while (k < 3 && i + 1 < s.size() && s[i + 1] >= '0' && s[i + 1] <= '7') {
          v = v * 8 + (s[++i] - '0');
          ++k;
        }
        out += static_cast<char>(v);
        break;
      }
      case 'x': {
        int v = 0, k = 0;
        while (k < 2 && i + 1 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1]))) {
          const char h = s[++i];
          v = v * 16 + (std::isdigit(static_cast<unsigned char>(h)) ? h - '0'
                                                                     : (std::tolower(h) - 'a' + 10));
          ++k;
        }
        if (k == 0) {
          out += "\\x";
        } else {
          out += static_cast<char>(v);
        }
        break;
      }
      default: out += '\\'; out += c;
    }
  }
  return out;
}

void cmd_echo(VfsState&, const Args& args, Io& io) {
  bool newline = true, escapes = false;
  std::size_t i = 0;
  for (; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a.size() < 2 || a[0] != '-' ||
        a.find_first_not_of("neE", 1) != std::string::npos) {
      break;
    }
    for (char c : a.substr(1)) {
      if (c == 'n') newline = false;
      if (c == 'e') escapes = true;
      if (c == 'E') escapes = false;
    }
  }
  std::string out;
  bool stop = false;
  for (std::size_t k = i; k < args.size() && !stop; ++k) {
    if (k > i) out += ' ';
    out += escapes ? echo_escapes(args[k], stop) : args[k];
  }
  if (newline && !stop) out += '\n';
  io.print(out);
}

VfsNode* make_dir(VfsState& st, Target& t) {
  VfsNode d = VfsNode::directory(t.name, 0755, now_seconds(st));
  d.owner = d.group = st.user;
  touch_dir(st, *t.parent);
  note_recent(st, t.abs, NodeKind::directory);
  return &t.parent->children.insert_or_assign(t.name, std::move(d)).first->second;
}

void cmd_mkdir(VfsState& st, const Args& args, Io& io) {
  Options o = parse_options(args, "pv");
  if (!map_long(o, {{"parents", 'p'}, {"verbose", 'v'}})) return invalid_option(io, "mkdir", o, 1);
  if (o.operands.empty()) return missing_operand(io, "mkdir");
  const bool parents = o.flags.count('p');
  for (const auto& operand : o.operands) {
    auto cannot = [&](std::string_view why) {
      io.fail("mkdir: cannot create directory " + kLq + operand + kRq + ": " + std::string(why) +
              "\n");
    };
    const std::string abs = resolve_path(st, operand);
    if (parents) {
      // walk the operand as typed so messages name the failing prefix
      std::string typed = operand.front() == '/' ? "/" : "";
      for (const auto& part : split_path(operand)) {
        if (!typed.empty() && typed.back() != '/') typed += '/';
        typed += part;
        const std::string path = resolve_path(st, typed);
        const VfsNode* existing = find_node(st.root, path);
        auto fail_at = [&](std::string_view why) {
          io.fail("mkdir: cannot create directory " + kLq + typed + kRq + ": " +
                  std::string(why) + "\n");
        };
        if (existing != nullptr) {
          if (!existing->is_dir()) {
            fail_at(path == abs ? "File exists" : "Not a directory");
            break;
          }
          continue;
        }
        Target t = creation_target(st, path);
        if (t.status != Lookup::ok || !can_write(st, *t.parent)) {
          fail_at(t.status != Lookup::ok ? reason(t.status) : "Permission denied");
          break;
        }
        make_dir(st, t);
        if (o.flags.count('v')) io.print("mkdir: created directory '" + typed + "'\n");
      }
      continue;
    }
    Target t = creation_target(st, operand);
    if (t.status != Lookup::ok) {
      cannot(reason(t.status));
      continue;
    }
    if (abs == "/" || t.parent->children.count(t.name)) {
      cannot("File exists");
      continue;
    }
    if (!can_write(st, *t.parent)) {
      cannot("Permission denied");
      continue;
    }
    make_dir(st, t);
    if (o.flags.count('v')) io.print("mkdir: created directory '" + operand + "'\n");
  }
}

void cmd_touch(VfsState& st, const Args& args, Io& io) {
  Options o = parse_options(args, "acm");
  if (!map_long(o, {{"no-create", 'c'}})) return invalid_option(io, "touch", o, 1);
  if (o.operands.empty()) return missing_operand(io, "touch", "file operand");
  for (const auto& operand : o.operands) {
    Target t = creation_target(st, operand);
    if (t.status != Lookup::ok) {
      io.fail("touch: cannot touch '" + operand + "': " + std::string(reason(t.status)) + "\n");
      continue;
    }
    if (t.abs == "/") {
      st.root.mtime = now_seconds(st);
      continue;
    }
    auto it = t.parent->children.find(t.name);
    if (it != t.parent->children.end()) {
      if (!can_write(st, it->second) && it->second.owner != st.user) {
        io.fail("touch: cannot touch '" + operand + "': Permission denied\n");
        continue;
      }
      it->second.mtime = now_seconds(st);
      note_recent(st, t.abs, it->second.kind);
      continue;
    }
    if (o.flags.count('c')) continue;
    if (!can_write(st, *t.parent)) {
      io.fail("touch: cannot touch '" + operand + "': Permission denied\n");
      continue;
    }
    VfsNode f = VfsNode::file(t.name, "", 0644, now_seconds(st));
    f.owner = f.group = st.user;
    t.parent->children.insert_or_assign(t.name, std::move(f));
    touch_dir(st, *t.parent);
    note_recent(st, t.abs, NodeKind::file);
  }
}

// After removing a directory that contained cwd, fall back to the nearest
// ancestor that still exists so cwd keeps resolving.
void repair_cwd(VfsState& st) {
  std::string path = st.cwd;
  while (true) {
    const VfsNode* node = find_node(st.root, path);
    if (node != nullptr && node->is_dir()) break;
    path = parent_path(path);
  }
  if (path != st.cwd) {
    st.cwd = path;
    st.env["PWD"] = path;
  }
}

void cmd_rm(VfsState& st, const Args& args, Io& io) {
  Options o = parse_options(args, "rRfivd");
  if (!map_long(o, {{"recursive", 'r'}, {"force", 'f'}, {"verbose", 'v'}, {"dir", 'd'},
                    {"interactive", 0}, {"no-preserve-root", 0}, {"preserve-root", 0}})) {
    return invalid_option(io, "rm", o, 1);
  }
  const bool recursive = o.flags.count('r') || o.flags.count('R');
  const bool force = o.flags.count('f');
  const bool no_preserve =
      std::find(o.long_flags.begin(), o.long_flags.end(), "no-preserve-root") != o.long_flags.end();
  if (o.operands.empty()) {
    if (!force) missing_operand(io, "rm");
    return;
  }
  for (const auto& operand : o.operands) {
    const std::string abs = resolve_path(st, operand);
    const std::string base = base_name(operand.back() == '/' && operand.size() > 1
                                           ? operand.substr(0, operand.find_last_not_of('/') + 1)
                                           : operand);
    if (base == "." || base == "..") {
      io.fail("rm: refusing to remove '.' or '..' directory: skipping '" + operand + "'\n");
      continue;
    }
    if (abs == "/") {
      if (!recursive) {
        io.fail("rm: cannot remove '" + operand + "': Is a directory\n");
      } else if (!no_preserve) {
        io.fail("rm: it is dangerous to operate recursively on '/'\n"
                "rm: use --no-preserve-root to override this failsafe\n");
      } else {
        io.fail("rm: cannot remove '/': Device or resource busy\n");
      }
      continue;
    }
    Target t = creation_target(st, operand);
    auto it = t.status == Lookup::ok ? t.parent->children.find(t.name)
                                     : decltype(t.parent->children.end()){};
    if (t.status != Lookup::ok || it == t.parent->children.end()) {
      if (!force) {
        io.fail("rm: cannot remove '" + operand + "': " +
                std::string(reason(t.status == Lookup::ok ? Lookup::missing : t.status)) + "\n");
      }
      continue;
    }
    if (it->second.is_dir() && !recursive &&
        !(o.flags.count('d') && it->second.children.empty())) {
      io.fail("rm: cannot remove '" + operand + "': Is a directory\n");
      continue;
    }
    if (!can_write(st, *t.parent)) {
      io.fail("rm: cannot remove '" + operand + "': Permission denied\n");
      continue;
    }
    if (o.flags.count('v')) {
      io.print((it->second.is_dir() ? "removed directory '" : "removed '") + operand + "'\n");
    }
    t.parent->children.erase(it);
    touch_dir(st, *t.parent);
    forget_recent(st, t.abs);
  }
  repair_cwd(st);
}

void cmd_uname(VfsState& st, const Args& args, Io& io) {
  Options o = parse_options(args, "asnrvmpio");
  if (!map_long(o, {{"all", 'a'},
                    {"kernel-name", 's'},
                    {"nodename", 'n'},
                    {"kernel-release", 'r'},
                    {"kernel-version", 'v'},
                    {"machine", 'm'},
                    {"processor", 'p'},
                    {"hardware-platform", 'i'},
                    {"operating-system", 'o'}})) {
    return invalid_option(io, "uname", o, 1);
  }
  if (!o.operands.empty()) {
    io.fail("uname: extra operand " + kLq + o.operands[0] + kRq + "\n");
    io.error("Try 'uname --help' for more information.\n");
    return;
  }
  if (o.flags.count('a')) return io.print(kernel_banner(st.hostname) + "\n");
  if (o.flags.empty()) o.flags.insert('s');
  std::vector<std::string> parts;
  for (char f : std::string_view("snrvmpio")) {
    if (!o.flags.count(f)) continue;
    switch (f) {
      case 's': parts.emplace_back("Linux"); break;
      case 'n': parts.push_back(st.hostname); break;
      case 'r': parts.emplace_back(kKernelRelease); break;
      case 'v': parts.emplace_back(kKernelVersion); break;
      case 'o': parts.emplace_back("GNU/Linux"); break;
      default: parts.emplace_back("x86_64");
    }
  }
  std::string line;
  for (const auto& p : parts) line += (line.empty() ? "" : " ") + p;
  io.print(line + "\n");
}

void cmd_id(VfsState& st, const Args& args, Io& io) {
  Options o = parse_options(args, "ugnGr");
  if (!map_long(o, {{"user", 'u'}, {"group", 'g'}, {"name", 'n'}, {"groups", 'G'}})) {
    return invalid_option(io, "id", o, 1);
  }
  if (o.operands.size() > 1) {
    io.fail("id: extra operand " + kLq + o.operands[1] + kRq + "\n");
    io.error("Try 'id --help' for more information.\n");
    return;
  }
  const std::string user = o.operands.empty() ? st.user : o.operands[0];
  auto acct = find_account(st, user);
  if (!acct) return io.fail("id: " + kLq + user + kRq + ": no such user\n");
  const std::string gname = group_name(st, acct->gid);
  const auto extra = supplementary_groups(st, acct->name);
  const bool names = o.flags.count('n');
  if (o.flags.count('u')) {
    return io.print((names ? acct->name : std::to_string(acct->uid)) + "\n");
  }
  if (o.flags.count('g')) return io.print((names ? gname : std::to_string(acct->gid)) + "\n");
  if (o.flags.count('G')) {
    std::string line = names ? gname : std::to_string(acct->gid);
    for (const auto& [gid, name] : extra) {
      if (gid != acct->gid) line += " " + (names ? name : std::to_string(gid));
    }
    return io.print(line + "\n");
  }
  std::string line = "uid=" + std::to_string(acct->uid) + "(" + acct->name + ") gid=" +
                     std::to_string(acct->gid) + "(" + gname + ") groups=" +
                     std::to_string(acct->gid) + "(" + gname + ")";
  for (const auto& [gid, name] : extra) {
    if (gid != acct->gid) line += "," + std::to_string(gid) + "(" + name + ")";
  }
  io.print(line + "\n");
}

void cmd_exit(VfsState& st, const Args& args, Io& io) {
  io.end_session = true;
  io.code = st.last_exit_code;
  if (!args.empty()) {
    long n = 0;
    if (parse_count(args[0], n)) {
      io.code = static_cast<int>(n & 0xff);
    } else {
      io.error("bash: exit: " + args[0] + ": numeric argument required\n");
      io.code = 2;
    }
  }
}

void cmd_history(VfsState& st, const Args& args, Io& io) {
  std::size_t first = 0;
  if (!args.empty()) {
    if (args[0] == "-c") {
      st.history.clear();
      return;
    }
    long n = 0;
    if (!parse_count(args[0], n) || n < 0) {
      return io.fail("bash: history: " + args[0] + ": numeric argument required\n");
    }
    if (static_cast<std::size_t>(n) < st.history.size()) first = st.history.size() - n;
  }
  for (std::size_t i = first; i < st.history.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%5zu  ", i + 1);
    io.print(buf + st.history[i] + "\n");
  }
}

void cmd_env(VfsState& st, const Args&, Io& io) {
  for (const auto& [k, v] : st.env) io.print(k + "=" + v + "\n");
}

void cmd_printenv(VfsState& st, const Args& args, Io& io) {
  if (args.empty()) return cmd_env(st, args, io);
  for (const auto& name : args) {
    auto it = st.env.find(name);
    if (it == st.env.end()) {
      io.code = 1;
    } else {
      io.print(it->second + "\n");
    }
  }
}

void cmd_export(VfsState& st, const Args& args, Io& io) {
  if (args.empty() || args[0] == "-p") {
    for (const auto& [k, v] : st.env) io.print("declare -x " + k + "=\"" + v + "\"\n");
    return;
  }
  for (const auto& a : args) {
    const auto eq = a.find('=');
    const std::string name = a.substr(0, eq);
    if (name.empty() || !(std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_') ||
        !std::all_of(name.begin(), name.end(), [](char c) {
          return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
        })) {
      io.fail("bash: export: `" + a + "': not a valid identifier\n");
      continue;
    }
    if (eq != std::string::npos) {
      st.env[name] = a.substr(eq + 1);
    } else {
      st.env.try_emplace(name, "");
    }
  }
}

void cmd_unset(VfsState& st, const Args& args, Io&) {
  for (const auto& a : args) st.env.erase(a);
}

void cmd_which(VfsState& st, const Args& args, Io& io) {
  Options o = parse_options(args, "a");
  if (o.operands.empty()) {
    io.code = 1;
    return;
  }
  std::string path = "/usr/bin:/bin";
  if (auto it = st.env.find("PATH"); it != st.env.end()) path = it->second;
  std::vector<std::string> dirs;
  std::istringstream in(path);
  for (std::string d; std::getline(in, d, ':');) dirs.push_back(d.empty() ? "." : d);
  for (const auto& name : o.operands) {
    bool found = false;
    if (name.find('/') != std::string::npos) {
      const VfsNode* node = find_node(st.root, resolve_path(st, name));
      if (node != nullptr && !node->is_dir() && (node->mode & 0111)) {
        io.print(name + "\n");
        found = true;
      }
    } else {
      for (const auto& d : dirs) {
        const std::string candidate = resolve_path(st, d) + "/" + name;
        const VfsNode* node = find_node(st.root, candidate);
        if (node != nullptr && !node->is_dir() && (node->mode & 0111)) {
          io.print((candidate.rfind("//", 0) == 0 ? candidate.substr(1) : candidate) + "\n");
          found = true;
          if (!o.flags.count('a')) break;
        }
      }
    }
    if (!found) io.code = 1;
  }
}

void head_tail(VfsState& st, const Args& args, Io& io, bool tail) {
  const std::string prog = tail ? "tail" : "head";
  long count = 10;
  bool from_start = false;  // tail -n +N
  bool quiet = false, verbose = false;
  Args operands;
  auto set_count = [&](const std::string& value) {
    long n = 0;
    if (!parse_count(value, n)) {
      io.fail(prog + ": invalid number of lines: " + kLq + value + kRq + "\n");
      return false;
    }
    from_start = tail && value[0] == '+';
    count = n < 0 ? -n : n;
    return true;
  };
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a == "-n" || a == "--lines") {
      if (i + 1 >= args.size()) {
        io.fail(prog + ": option requires an argument -- 'n'\nTry '" + prog +
                " --help' for more information.\n");
        return;
      }
      if (!set_count(args[++i])) return;
    } else if (a.rfind("-n", 0) == 0 && a.size() > 2) {
      if (!set_count(a.substr(2))) return;
    } else if (a.rfind("--lines=", 0) == 0) {
      if (!set_count(a.substr(8))) return;
    } else if (a == "-q" || a == "--quiet" || a == "--silent") {
      quiet = true;
    } else if (a == "-v" || a == "--verbose") {
      verbose = true;
    } else if (a.size() > 1 && a[0] == '-' &&
               a.find_first_not_of("0123456789", 1) == std::string::npos) {
      count = std::stol(a.substr(1));
    } else if (a.size() > 1 && a[0] == '-') {
      Options o;
      o.bad = std::string(1, a[1] == '-' ? '-' : a[1]);
      if (a[1] == '-') {
        o.bad.clear();
        o.bad_long = a.substr(2);
      }
      return invalid_option(io, prog, o, 1);
    } else {
      operands.push_back(a);
    }
  }
  const bool headers = verbose || (!quiet && operands.size() > 1);
  bool first = true;
  for (const auto& operand : operands) {
    const VfsNode* node = open_for_read(st, operand, io, [&](std::string_view why) {
      return prog + ": cannot open '" + operand + "' for reading: " + std::string(why) + "\n";
    });
    if (node == nullptr) continue;
    if (headers) {
      io.print((first ? "" : "\n") + std::string("==> ") + operand + " <==\n");
    }
    first = false;
    if (node->is_dir()) {
      io.fail(prog + ": error reading '" + operand + "': Is a directory\n");
      continue;
    }
    const auto lines = split_lines(node->content);
    std::size_t begin = 0, end = lines.size();
    if (!tail) {
      end = std::min<std::size_t>(end, static_cast<std::size_t>(count));
    } else if (from_start) {
      begin = count > 0 ? std::min<std::size_t>(end, static_cast<std::size_t>(count - 1)) : 0;
    } else if (static_cast<std::size_t>(count) < end) {
      begin = end - static_cast<std::size_t>(count);
    }
    for (std::size_t i = begin; i < end; ++i) io.print(lines[i]);
  }
}

struct WcCounts {
  std::size_t lines = 0, words = 0, chars = 0, bytes = 0;
};

WcCounts wc_count(std::string_view s) {
  WcCounts c;
  c.bytes = s.size();
  bool in_word = false;
  for (unsigned char ch : s) {
    if (ch == '\n') ++c.lines;
    if ((ch & 0xC0) != 0x80) ++c.chars;
    const bool space = ch == ' ' || (ch >= '\t' && ch <= '\r');
    if (space) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++c.words;
    }
  }
  return c;
}

void cmd_wc(VfsState& st, const Args& args, Io& io) {
  Options o = parse_options(args, "lwcm");
  if (!map_long(o, {{"lines", 'l'}, {"words", 'w'}, {"bytes", 'c'}, {"chars", 'm'}})) {
    return invalid_option(io, "wc", o, 1);
  }
  if (o.flags.empty()) o.flags = {'l', 'w', 'c'};
  struct Row {
    WcCounts c;
    std::string label;
    bool failed = false;
  };
  std::vector<Row> rows;
  std::size_t regular_total = 0;
  bool irregular = false;
  for (const auto& operand : o.operands) {
    const VfsNode* node = open_for_read(st, operand, io, [&](std::string_view why) {
      return "wc: " + operand + ": " + std::string(why) + "\n";
    });
    if (node == nullptr) {
      rows.push_back({{}, operand, true});
      continue;
    }
    if (node->is_dir()) {
      io.fail("wc: " + operand + ": Is a directory\n");
      rows.push_back({{}, operand, false});
      irregular = true;
      continue;
    }
    regular_total += node->content.size();
    rows.push_back({wc_count(node->content), operand, false});
  }
  if (o.operands.empty()) return;

  std::size_t width = 1;
  for (std::size_t t = regular_total; t >= 10; t /= 10) ++width;
  if (irregular) width = std::max<std::size_t>(width, 7);
  if (o.flags.size() == 1 && o.operands.size() == 1) width = 1;
  WcCounts total;
  auto emit = [&](const WcCounts& c, const std::string& label) {
    std::string line;
    auto field = [&](std::size_t v) {
      const std::string s = std::to_string(v);
      if (!line.empty()) line += ' ';
      if (s.size() < width) line.append(width - s.size(), ' ');
      line += s;
    };
    if (o.flags.count('l')) field(c.lines);
    if (o.flags.count('w')) field(c.words);
    if (o.flags.count('m')) field(c.chars);
    if (o.flags.count('c')) field(c.bytes);
    io.print(line + " " + label + "\n");
  };
  for (const auto& r : rows) {
    if (r.failed) continue;
    emit(r.c, r.label);
    total.lines += r.c.lines;
    total.words += r.c.words;
    total.chars += r.c.chars;
    total.bytes += r.c.bytes;
  }
  if (rows.size() > 1) emit(total, "total");
}

using Handler = void (*)(VfsState&, const Args&, Io&);

const std::unordered_map<std::string_view, Handler>& table() {
  static const std::unordered_map<std::string_view, Handler> t = {
      {"cd", cmd_cd},
      {"pwd", [](VfsState& st, const Args&, Io& io) { io.print(st.cwd + "\n"); }},
      {"ls", cmd_ls},
      {"cat", cmd_cat},
      {"echo", cmd_echo},
      {"mkdir", cmd_mkdir},
      {"touch", cmd_touch},
      {"rm", cmd_rm},
      {"whoami", [](VfsState& st, const Args&, Io& io) { io.print(st.user + "\n"); }},
      {"hostname", [](VfsState& st, const Args&, Io& io) { io.print(st.hostname + "\n"); }},
      {"uname", cmd_uname},
      {"id", cmd_id},
      {"exit", cmd_exit},
      {"logout", cmd_exit},
      {"history", cmd_history},
      {"env", cmd_env},
      {"printenv", cmd_printenv},
      {"export", cmd_export},
      {"unset", cmd_unset},
      {"which", cmd_which},
      {"head", [](VfsState& st, const Args& a, Io& io) { head_tail(st, a, io, false); }},
      {"tail", [](VfsState& st, const Args& a, Io& io) { head_tail(st, a, io, true); }},
      {"wc", cmd_wc},
      {"true", [](VfsState&, const Args&, Io&) {}},
      {"false", [](VfsState&, const Args&, Io& io) { io.code = 1; }},
      {"clear", [](VfsState&, const Args&, Io& io) { io.print("\x1b[H\x1b[2J\x1b[3J"); }},
  };
  return t;
}

// Shell keywords and builtins have no file in /usr/bin.
bool shell_only(std::string_view name) {
  return name == "cd" || name == "exit" || name == "logout" || name == "history" ||
         name == "export" || name == "unset";
}

// Applies a `>`/`>>` redirection: opens the target first like bash does, then
// writes the command's stdout into it.
bool open_redirect(VfsState& st, const Redirect& r, Io& io, std::string* file) {
  Target t = creation_target(st, r.target);
  if (t.status != Lookup::ok) {
    io.fail("bash: " + r.target + ": " + std::string(reason(t.status)) + "\n");
    return false;
  }
  if (t.abs == "/") {
    io.fail("bash: " + r.target + ": Is a directory\n");
    return false;
  }
  auto it = t.parent->children.find(t.name);
  if (it != t.parent->children.end()) {
    if (it->second.is_dir()) {
      io.fail("bash: " + r.target + ": Is a directory\n");
      return false;
    }
    if (!can_write(st, it->second)) {
      io.fail("bash: " + r.target + ": Permission denied\n");
      return false;
    }
    if (!r.append) it->second.content.clear();
    it->second.mtime = now_seconds(st);
  } else {
    if (!can_write(st, *t.parent)) {
      io.fail("bash: " + r.target + ": Permission denied\n");
      return false;
    }
    VfsNode f = VfsNode::file(t.name, "", 0644, now_seconds(st));
    f.owner = f.group = st.user;
    t.parent->children.insert_or_assign(t.name, std::move(f));
    touch_dir(st, *t.parent);
  }
  *file = t.abs;
  note_recent(st, t.abs, NodeKind::file);
  return true;
}

}  // namespace

std::string kernel_banner(std::string_view hostname) {
  return "Linux " + std::string(hostname) + " " + std::string(kKernelRelease) + " " +
         std::string(kKernelVersion) + " x86_64 x86_64 x86_64 GNU/Linux";
}

bool is_builtin(std::string_view program) { return table().count(program) > 0; }

std::optional<BuiltinResult> execute_builtin(VfsState& state, const ParsedCommand& cmd) {
  if (cmd.complex || cmd.program.empty()) return std::nullopt;
  std::string_view program = cmd.program;
  if (program.find('/') != std::string_view::npos) {
    // /bin/ls and friends run the builtin when the binary exists in the image
    const std::string name = base_name(program);
    const VfsNode* node = find_node(state.root, resolve_path(state, program));
    if (node == nullptr || node->is_dir() || shell_only(name) || !is_builtin(name)) {
      return std::nullopt;
    }
    program = table().find(name)->first;
  }
  auto it = table().find(program);
  if (it == table().end()) return std::nullopt;

  try {
    Io io;
    std::string sink;
    if (cmd.redirect && !open_redirect(state, *cmd.redirect, io, &sink)) {
      state.last_exit_code = io.code;
      return BuiltinResult{io.both, io.code, false};
    }
    it->second(state, cmd.args, io);
    BuiltinResult result;
    result.exit_code = io.code;
    result.end_session = io.end_session;
    if (!sink.empty()) {
      // looked up again: the command may have replaced or removed the file
      if (VfsNode* file = find_node(state.root, sink); file != nullptr && !file->is_dir()) {
        file->content += io.out;
      }
      result.output = io.err;
    } else {
      result.output = io.both;
    }
    state.last_exit_code = io.code;
    return result;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace decoysh::shell
