#include "decoysh/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace decoysh {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Backslash escapes for values that may hold control characters (motd).
std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out.push_back(s[i]);
      continue;
    }
    switch (s[++i]) {
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case '\\': out.push_back('\\'); break;
      default: out.push_back('\\'); out.push_back(s[i]); break;
    }
  }
  return out;
}

// Quoted form keeps leading/trailing spaces, which matter for prompts.
std::string text_value(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return unescape(s);
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\\': out += "\\\\"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

struct Entry {
  std::string value;
  std::size_t line;
};

template <typename Int>
Int parse_int(const Entry& e, std::string_view key) {
  Int v{};
  const auto* first = e.value.data();
  const auto* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw ParseError(e.line, "expected an integer for '" + std::string(key) + "'");
  }
  return v;
}

double parse_double(const Entry& e, std::string_view key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(e.value, &used);
    if (used == e.value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError(e.line, "expected a number for '" + std::string(key) + "'");
}

bool parse_bool(const Entry& e, std::string_view key) {
  const std::string v = lower(e.value);
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ParseError(e.line, "expected a boolean for '" + std::string(key) + "'");
}

std::vector<Credential> parse_users(const Entry& e) {
  std::vector<Credential> out;
  std::string_view rest = e.value;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = trim(rest.substr(0, comma));
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError(e.line, "credential '" + std::string(item) + "' is not user:password");
    }
    out.push_back({std::string(item.substr(0, colon)), std::string(item.substr(colon + 1))});
  }
  return out;
}

std::string resolve(const std::string& value, const std::filesystem::path& base) {
  if (value.empty() || base.empty()) return value;
  std::filesystem::path p(value);
  if (p.is_absolute()) return value;
  return (base / p).lexically_normal().string();
}

using Setter = std::function<void(HoneypotConfig&, const Entry&)>;

const std::map<std::string, std::map<std::string, Setter>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>> table{
      {"ssh",
       {
           {"port", [](auto& c, const Entry& e) { c.port = parse_int<int>(e, "port"); }},
           {"host_key", [](auto& c, const Entry& e) { c.host_key_path = e.value; }},
           {"banner", [](auto& c, const Entry& e) { c.banner = e.value; }},
           {"max_connections_per_ip",
            [](auto& c, const Entry& e) {
              c.max_connections_per_ip = parse_int<std::size_t>(e, "max_connections_per_ip");
            }},
           {"max_auth_failures",
            [](auto& c, const Entry& e) {
              c.max_auth_failures = parse_int<std::size_t>(e, "max_auth_failures");
            }},
           {"auth_timeout_s",
            [](auto& c, const Entry& e) { c.auth_timeout_s = parse_double(e, "auth_timeout_s"); }},
       }},
      {"auth",
       {
           {"users", [](auto& c, const Entry& e) { c.credentials = parse_users(e); }},
       }},
      {"llm",
       {
           {"provider",
            [](auto& c, const Entry& e) {
              auto p = llm::parse_provider(lower(e.value));
              if (!p) throw ParseError(e.line, "unknown provider '" + e.value + "'");
              c.backend.provider = *p;
            }},
           {"endpoint", [](auto& c, const Entry& e) { c.backend.endpoint = e.value; }},
           {"model", [](auto& c, const Entry& e) { c.backend.model_id = e.value; }},
           {"api_key_env", [](auto& c, const Entry& e) { c.backend.api_key_env = e.value; }},
           {"timeout_s",
            [](auto& c, const Entry& e) { c.backend.timeout_s = parse_double(e, "timeout_s"); }},
           {"availability_timeout_s",
            [](auto& c, const Entry& e) {
              c.backend.availability_timeout_s = parse_double(e, "availability_timeout_s");
            }},
           {"max_output_chars",
            [](auto& c, const Entry& e) {
              c.backend.max_output_chars = parse_int<std::size_t>(e, "max_output_chars");
            }},
           {"prompt_budget_chars",
            [](auto& c, const Entry& e) {
              c.backend.prompt_budget_chars = parse_int<std::size_t>(e, "prompt_budget_chars");
            }},
           {"max_in_flight",
            [](auto& c, const Entry& e) {
              c.backend.max_in_flight = parse_int<std::size_t>(e, "max_in_flight");
            }},
           {"temperature",
            [](auto& c, const Entry& e) { c.backend.temperature = parse_double(e, "temperature"); }},
           {"max_tokens",
            [](auto& c, const Entry& e) { c.backend.max_tokens = parse_int<int>(e, "max_tokens"); }},
           {"reset_hook", [](auto& c, const Entry& e) { c.backend.reset_hook = e.value; }},
           {"prompt_template", [](auto& c, const Entry& e) { c.prompt_template_path = e.value; }},
       }},
      {"shell",
       {
           {"hostname", [](auto& c, const Entry& e) { c.hostname = e.value; }},
           {"prompt", [](auto& c, const Entry& e) { c.shell_prompt = text_value(e.value); }},
           {"motd", [](auto& c, const Entry& e) { c.motd = text_value(e.value); }},
           {"cache_file", [](auto& c, const Entry& e) { c.cache_path = e.value; }},
           {"seed_image", [](auto& c, const Entry& e) { c.seed_image_path = e.value; }},
       }},
      {"logging",
       {
           {"log_dir", [](auto& c, const Entry& e) { c.log_dir = e.value; }},
           {"max_log_bytes",
            [](auto& c, const Entry& e) {
              c.max_log_bytes = parse_int<std::size_t>(e, "max_log_bytes");
            }},
           {"max_archives",
            [](auto& c, const Entry& e) {
              c.max_log_archives = parse_int<std::size_t>(e, "max_archives");
            }},
           {"fsync", [](auto& c, const Entry& e) { c.fsync = parse_bool(e, "fsync"); }},
       }},
  };
  return table;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view llm::to_string(Provider p) {
  return p == Provider::local_server ? "local_server" : "cloud_api";
}

std::optional<llm::Provider> llm::parse_provider(std::string_view name) {
  if (name == "local_server" || name == "ollama" || name == "local") return Provider::local_server;
  if (name == "cloud_api" || name == "gemini" || name == "cloud") return Provider::cloud_api;
  return std::nullopt;
}

HoneypotConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  HoneypotConfig cfg;
  std::string section;
  std::set<std::pair<std::string, std::string>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#' || line.front() == ';') {
      if (end == text.size()) break;
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(line_no, "unterminated section header");
      section = lower(trim(line.substr(1, line.size() - 2)));
      if (!schema().count(section)) throw ParseError(line_no, "unknown section [" + section + "]");
    } else {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'key = value'");
      if (section.empty()) throw ParseError(line_no, "key outside of any section");
      const std::string key = lower(trim(line.substr(0, eq)));
      const auto& keys = schema().at(section);
      const auto it = keys.find(key);
      if (it == keys.end()) throw ParseError(line_no, "unknown key '" + key + "' in [" + section + "]");
      if (!seen.emplace(section, key).second) throw ParseError(line_no, "duplicate key '" + key + "'");
      it->second(cfg, Entry{std::string(trim(line.substr(eq + 1))), line_no});
    }
    if (end == text.size()) break;
  }
  cfg.host_key_path = resolve(cfg.host_key_path, base_dir);
  cfg.prompt_template_path = resolve(cfg.prompt_template_path, base_dir);
  cfg.cache_path = resolve(cfg.cache_path, base_dir);
  cfg.seed_image_path = resolve(cfg.seed_image_path, base_dir);
  cfg.log_dir = resolve(cfg.log_dir, base_dir);
  validate(cfg);
  return cfg;
}

HoneypotConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

void validate(const HoneypotConfig& cfg) {
  if (cfg.port < 1 || cfg.port > 65535) throw ValidationError("port", "must be in [1, 65535]");
  if (cfg.credentials.empty()) throw ValidationError("credentials", "at least one user required");
  for (const auto& c : cfg.credentials) {
    if (c.username.empty()) throw ValidationError("credentials", "empty username");
    if (c.username.find_first_of(":,") != std::string::npos ||
        c.password.find(',') != std::string::npos) {
      throw ValidationError("credentials", "':' in usernames and ',' are not representable");
    }
  }
  if (!(cfg.backend.timeout_s > 0)) throw ValidationError("backend.timeout_s", "must be > 0");
  if (!(cfg.backend.availability_timeout_s > 0)) {
    throw ValidationError("backend.availability_timeout_s", "must be > 0");
  }
  if (cfg.backend.max_output_chars == 0) {
    throw ValidationError("backend.max_output_chars", "must be > 0");
  }
  if (cfg.backend.max_in_flight == 0) throw ValidationError("backend.max_in_flight", "must be > 0");
  if (cfg.backend.provider == llm::Provider::cloud_api && cfg.backend.api_key_env.empty()) {
    throw ValidationError("backend.api_key_env", "cloud_api needs an environment variable name");
  }
  if (cfg.host_key_path.empty()) throw ValidationError("host_key_path", "must be non-empty");
  if (cfg.banner.rfind("SSH-2.0-", 0) != 0 || cfg.banner.find_first_of("\r\n") != std::string::npos) {
    throw ValidationError("banner", "must be a single line starting with SSH-2.0-");
  }
  if (cfg.hostname.empty()) throw ValidationError("hostname", "must be non-empty");
  if (cfg.max_connections_per_ip == 0) throw ValidationError("max_connections_per_ip", "must be > 0");
  if (cfg.max_auth_failures == 0) throw ValidationError("max_auth_failures", "must be > 0");
  if (cfg.max_log_bytes == 0) throw ValidationError("max_log_bytes", "must be > 0");
}

std::string to_ini(const HoneypotConfig& cfg) {
  std::ostringstream os;
  os << "[ssh]\n"
     << "port = " << cfg.port << "\n"
     << "host_key = " << cfg.host_key_path << "\n"
     << "banner = " << cfg.banner << "\n"
     << "max_connections_per_ip = " << cfg.max_connections_per_ip << "\n"
     << "max_auth_failures = " << cfg.max_auth_failures << "\n"
     << "auth_timeout_s = " << format_double(cfg.auth_timeout_s) << "\n\n";
  os << "[auth]\nusers = ";
  for (std::size_t i = 0; i < cfg.credentials.size(); ++i) {
    if (i) os << ",";
    os << cfg.credentials[i].username << ":" << cfg.credentials[i].password;
  }
  const auto& b = cfg.backend;
  os << "\n\n[llm]\n"
     << "provider = " << llm::to_string(b.provider) << "\n"
     << "endpoint = " << b.endpoint << "\n"
     << "model = " << b.model_id << "\n"
     << "api_key_env = " << b.api_key_env << "\n"
     << "timeout_s = " << format_double(b.timeout_s) << "\n"
     << "availability_timeout_s = " << format_double(b.availability_timeout_s) << "\n"
     << "max_output_chars = " << b.max_output_chars << "\n"
     << "prompt_budget_chars = " << b.prompt_budget_chars << "\n"
     << "max_in_flight = " << b.max_in_flight << "\n";
  if (b.temperature) os << "temperature = " << format_double(*b.temperature) << "\n";
  if (b.max_tokens) os << "max_tokens = " << *b.max_tokens << "\n";
  if (!b.reset_hook.empty()) os << "reset_hook = " << b.reset_hook << "\n";
  if (!cfg.prompt_template_path.empty()) os << "prompt_template = " << cfg.prompt_template_path << "\n";
  os << "\n[shell]\n"
     << "hostname = " << cfg.hostname << "\n"
     << "prompt = \"" << escape(cfg.shell_prompt) << "\"\n"
     << "motd = \"" << escape(cfg.motd) << "\"\n";
  if (!cfg.cache_path.empty()) os << "cache_file = " << cfg.cache_path << "\n";
  if (!cfg.seed_image_path.empty()) os << "seed_image = " << cfg.seed_image_path << "\n";
  os << "\n[logging]\n"
     << "log_dir = " << cfg.log_dir << "\n"
     << "max_log_bytes = " << cfg.max_log_bytes << "\n"
     << "max_archives = " << cfg.max_log_archives << "\n"
     << "fsync = " << (cfg.fsync ? "true" : "false") << "\n";
  return os.str();
}

bool validate_credentials(const HoneypotConfig& cfg, std::string_view user, std::string_view pass) {
  return std::any_of(cfg.credentials.begin(), cfg.credentials.end(), [&](const Credential& c) {
    return c.username == user && c.password == pass;
  });
}

}  // namespace decoysh
