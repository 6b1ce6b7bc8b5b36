#include "decoysh/shell/command.hpp"

namespace decoysh::shell {

namespace {

struct Word {
  std::string text;
  bool quoted = false;  // any part quoted or escaped: never an operator
};

bool is_name_char(char c, bool first) {
  return c == '_' || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         (!first && c >= '0' && c <= '9');
}

class Lexer {
 public:
  Lexer(std::string_view line, const std::map<std::string, std::string>* env, int last_exit)
      : s_(line), env_(env), last_exit_(last_exit) {}

  std::vector<Word> run() {
    std::vector<Word> words;
    Word cur;
    bool in_word = false;
    while (i_ < s_.size()) {
      const char c = s_[i_];
      if (c == ' ' || c == '\t') {
        if (in_word) words.push_back(std::move(cur));
        cur = {};
        in_word = false;
        ++i_;
        continue;
      }
      in_word = true;
      if (c == '\'') {
        const auto close = s_.find('\'', i_ + 1);
        if (close == std::string_view::npos) throw UnterminatedQuote('\'');
        cur.text.append(s_.substr(i_ + 1, close - i_ - 1));
        cur.quoted = true;
        i_ = close + 1;
      } else if (c == '"') {
        double_quoted(cur);
      } else if (c == '\\') {
        if (i_ + 1 < s_.size()) cur.text.push_back(s_[i_ + 1]);
        cur.quoted = true;
        i_ += 2;
      } else if (c == '$') {
        expand(cur);
      } else if (c == '>') {
        // operator: ">" or ">>", possibly glued to neighbours
        if (!cur.text.empty() || cur.quoted) {
          if (cur.text == "1" && !cur.quoted) {
            cur = {};  // "1>" is the same as ">"
          } else {
            words.push_back(std::move(cur));
            cur = {};
          }
        }
        Word op;
        op.text = ">";
        ++i_;
        if (i_ < s_.size() && s_[i_] == '>') {
          op.text = ">>";
          ++i_;
        }
        if (i_ < s_.size() && s_[i_] == '&') complex_ = true;
        words.push_back(std::move(op));
        in_word = false;
      } else {
        if (c == '|' || c == ';' || c == '&' || c == '<' || c == '`' || c == '*' || c == '?' ||
            c == '[' || c == '(' || c == ')' || c == '{' || c == '}') {
          complex_ = true;
        }
        cur.text.push_back(c);
        ++i_;
      }
    }
    if (in_word) words.push_back(std::move(cur));
    return words;
  }

  bool complex() const { return complex_; }

 private:
  void double_quoted(Word& cur) {
    cur.quoted = true;
    ++i_;
    while (true) {
      if (i_ >= s_.size()) throw UnterminatedQuote('"');
      const char c = s_[i_];
      if (c == '"') {
        ++i_;
        return;
      }
      if (c == '\\' && i_ + 1 < s_.size() &&
          (s_[i_ + 1] == '"' || s_[i_ + 1] == '\\' || s_[i_ + 1] == '$' || s_[i_ + 1] == '`')) {
        cur.text.push_back(s_[i_ + 1]);
        i_ += 2;
      } else if (c == '$') {
        expand(cur);
      } else {
        if (c == '`') complex_ = true;
        cur.text.push_back(c);
        ++i_;
      }
    }
  }

  void expand(Word& cur) {
    // s_[i_] == '$'
    if (i_ + 1 >= s_.size()) {
      cur.text.push_back('$');
      ++i_;
      return;
    }
    const char next = s_[i_ + 1];
    if (next == '(') {
      complex_ = true;
      cur.text.push_back('$');
      ++i_;
      return;
    }
    if (next == '?') {
      cur.text += std::to_string(last_exit_);
      i_ += 2;
      return;
    }
    std::string name;
    std::size_t j = i_ + 1;
    if (next == '{') {
      const auto close = s_.find('}', j);
      if (close == std::string_view::npos) {
        complex_ = true;
        cur.text.push_back('$');
        ++i_;
        return;
      }
      name = std::string(s_.substr(j + 1, close - j - 1));
      j = close + 1;
    } else {
      while (j < s_.size() && is_name_char(s_[j], j == i_ + 1)) name.push_back(s_[j++]);
      if (name.empty()) {
        cur.text.push_back('$');
        ++i_;
        return;
      }
    }
    if (env_ == nullptr) {
      complex_ = true;
      cur.text.append(s_.substr(i_, j - i_));
    } else if (auto it = env_->find(name); it != env_->end()) {
      cur.text += it->second;
    }
    cur.quoted = true;
    i_ = j;
  }

  std::string_view s_;
  const std::map<std::string, std::string>* env_;
  int last_exit_;
  std::size_t i_ = 0;
  bool complex_ = false;
};

}  // namespace

ParsedCommand parse_command_line(std::string_view line,
                                 const std::map<std::string, std::string>* env,
                                 int last_exit_code) {
  if (line.find_first_not_of(" \t\r\n") == std::string_view::npos) throw EmptyLine();
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.remove_suffix(1);

  Lexer lexer(line, env, last_exit_code);
  std::vector<Word> words = lexer.run();

  ParsedCommand cmd;
  cmd.raw = std::string(line);
  cmd.complex = lexer.complex();

  std::size_t n = words.size();
  auto is_op = [](const Word& w) { return !w.quoted && (w.text == ">" || w.text == ">>"); };
  if (n >= 2 && is_op(words[n - 2]) && !is_op(words[n - 1])) {
    cmd.redirect = Redirect{words[n - 1].text, words[n - 2].text == ">>"};
    n -= 2;
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (is_op(words[k])) cmd.complex = true;
  }
  if (n == 0) {
    // nothing but a redirection, e.g. "> file"
    cmd.complex = true;
    return cmd;
  }
  cmd.program = words[0].text;
  for (std::size_t k = 1; k < n; ++k) cmd.args.push_back(std::move(words[k].text));
  return cmd;
}

}  // namespace decoysh::shell
