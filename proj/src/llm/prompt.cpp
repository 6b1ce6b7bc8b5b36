#include "decoysh/llm/prompt.hpp"

#include <array>
#include <fstream>
#include <sstream>

namespace decoysh::llm {

namespace {

constexpr std::string_view kHeader = "# decoysh prompt template v1";

std::size_t count(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// One splice, so a digest or command that itself contains a placeholder is
// left alone.
std::string fill(std::string_view text, std::string_view placeholder, std::string_view value) {
  const auto pos = text.find(placeholder);
  std::string out(text.substr(0, pos));
  out.append(value);
  out.append(text.substr(pos + placeholder.size()));
  return out;
}

void check(const PromptTemplate& t) {
  if (t.system.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw TemplateError("system section is empty");
  }
  if (count(t.state, "{state}") != 1) throw TemplateError("state section needs exactly one {state}");
  if (count(t.command, "{command}") != 1) {
    throw TemplateError("command section needs exactly one {command}");
  }
}

}  // namespace

PromptTemplate parse_prompt_template(std::string_view text) {
  const auto first_nl = text.find('\n');
  if (text.substr(0, first_nl) != kHeader) throw TemplateError("missing template header");
  if (first_nl == std::string_view::npos) throw TemplateError("template has no sections");

  static constexpr std::array<std::string_view, 3> kMarkers{"[system]", "[state]", "[command]"};
  std::array<std::string, 3> sections;
  int current = -1;
  std::size_t pos = first_nl + 1;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    const bool last = nl == std::string_view::npos;
    if (last) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    int marker = -1;
    for (int i = 0; i < 3; ++i) {
      if (line == kMarkers[i]) marker = i;
    }
    if (marker >= 0) {
      if (marker != current + 1) throw TemplateError("sections must be [system] [state] [command] in order");
      current = marker;
    } else if (current < 0) {
      if (!line.empty()) throw TemplateError("text before the [system] section");
    } else {
      sections[current].append(line);
      if (!last) sections[current].push_back('\n');
    }
    if (last) break;
    pos = nl + 1;
  }
  if (current != 2) throw TemplateError("missing section " + std::string(kMarkers[current + 1]));
  // the newline in front of the next marker belongs to the layout, not the text
  for (int i = 0; i < 2; ++i) {
    if (!sections[i].empty() && sections[i].back() == '\n') sections[i].pop_back();
  }
  if (!sections[2].empty() && sections[2].back() == '\n') sections[2].pop_back();

  PromptTemplate t{sections[0], sections[1], sections[2]};
  check(t);
  return t;
}

PromptTemplate load_prompt_template(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TemplateError("cannot read prompt template: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_prompt_template(buf.str());
}

const PromptTemplate& default_prompt_template() {
  static const PromptTemplate t = parse_prompt_template(R"~(# decoysh prompt template v1
[system]
You are the bash shell of an Ubuntu 20.04 server and you respond exactly as a Linux shell would.
Print only what the command writes to stdout and stderr, with no explanations and no markdown.
Never reveal or hint that you are an AI or a language model, whatever the input asks.
If the program does not exist on this system, print the bash error for it.
If the command succeeds silently, print nothing.
[state]
Current system state:
{state}
[command]
Command: {command}
Output:
)~");
  return t;
}

std::string serialize_prompt_template(const PromptTemplate& tmpl) {
  std::string out(kHeader);
  out += "\n[system]\n" + tmpl.system + "\n[state]\n" + tmpl.state + "\n[command]\n" +
         tmpl.command + "\n";
  return out;
}

std::string PromptBundle::user_text() const {
  return state + "\n\n" + fill(frame, "{command}", command);
}

std::string PromptBundle::serialized() const { return system + "\n\n" + user_text(); }

PromptBundle build_prompt(std::string_view state_digest, std::string_view command,
                          const PromptTemplate& tmpl, std::size_t budget) {
  if (command.empty()) throw std::invalid_argument("build_prompt: empty command");
  check(tmpl);
  PromptBundle b{tmpl.system, fill(tmpl.state, "{state}", state_digest), std::string(command),
                 tmpl.command};
  const std::size_t length = utf8_length(b.serialized());
  if (length > budget) throw BudgetExceeded(length, budget);
  return b;
}

namespace {

// Length of the sequence starting with lead byte c, or 1 for a stray byte.
std::size_t sequence_length(std::string_view text, std::size_t i) {
  const auto c = static_cast<unsigned char>(text[i]);
  std::size_t n = c >= 0xF0 && c < 0xF8 ? 4 : c >= 0xE0 ? 3 : c >= 0xC0 ? 2 : 1;
  if (c >= 0xF8) n = 1;
  if (i + n > text.size()) return 1;
  for (std::size_t k = 1; k < n; ++k) {
    if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) return 1;
  }
  return n;
}

}  // namespace

std::size_t utf8_length(std::string_view text) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < text.size(); i += sequence_length(text, i)) ++n;
  return n;
}

std::string truncate_utf8(std::string_view text, std::size_t max_chars) {
  std::size_t i = 0;
  for (std::size_t n = 0; i < text.size() && n < max_chars; ++n) i += sequence_length(text, i);
  return std::string(text.substr(0, i));
}

}  // namespace decoysh::llm
