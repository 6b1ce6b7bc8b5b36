#include "decoysh/metrics/similarity.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "decoysh/metrics/text.hpp"

namespace decoysh::metrics {

namespace {

std::string normalize_for_exact(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    while (!line.empty() &&
           (line.back() == ' ' || line.back() == '\t' || line.back() == '\r' ||
            line.back() == '\v' || line.back() == '\f')) {
      line.remove_suffix(1);
    }
    out.append(line);
    if (end == text.size()) break;
    out.push_back('\n');
    start = end + 1;
  }
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Gram, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                  tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

struct Block {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t size = 0;
};

class BlockMatcher {
 public:
  BlockMatcher(const std::u32string& a, const std::u32string& b) : a_(a), b_(b) {
    for (std::size_t j = 0; j < b_.size(); ++j) positions_[b_[j]].push_back(j);
  }

  std::size_t matched_chars() const {
    std::size_t total = 0;
    std::vector<std::array<std::size_t, 4>> stack{{0, a_.size(), 0, b_.size()}};
    while (!stack.empty()) {
      const auto [alo, ahi, blo, bhi] = stack.back();
      stack.pop_back();
      const Block blk = longest(alo, ahi, blo, bhi);
      if (blk.size == 0) continue;
      total += blk.size;
      if (alo < blk.a && blo < blk.b) stack.push_back({alo, blk.a, blo, blk.b});
      if (blk.a + blk.size < ahi && blk.b + blk.size < bhi) {
        stack.push_back({blk.a + blk.size, ahi, blk.b + blk.size, bhi});
      }
    }
    return total;
  }

 private:
  // Run lengths ending at (i, j) are carried row to row in a sparse map, the
  // same bookkeeping difflib uses.
  Block longest(std::size_t alo, std::size_t ahi, std::size_t blo, std::size_t bhi) const {
    Block best{alo, blo, 0};
    std::unordered_map<std::size_t, std::size_t> prev;
    for (std::size_t i = alo; i < ahi; ++i) {
      std::unordered_map<std::size_t, std::size_t> cur;
      const auto it = positions_.find(a_[i]);
      if (it != positions_.end()) {
        for (std::size_t j : it->second) {
          if (j < blo) continue;
          if (j >= bhi) break;
          std::size_t k = 1;
          if (j > 0) {
            if (auto p = prev.find(j - 1); p != prev.end()) k = p->second + 1;
          }
          cur[j] = k;
          if (k > best.size) best = Block{i + 1 - k, j + 1 - k, k};
        }
      }
      prev = std::move(cur);
    }
    return best;
  }

  const std::u32string& a_;
  const std::u32string& b_;
  std::unordered_map<char32_t, std::vector<std::size_t>> positions_;
};

}  // namespace

bool exact_match(std::string_view expected, std::string_view actual) {
  return normalize_for_exact(expected) == normalize_for_exact(actual);
}

double token_accuracy(std::string_view expected, std::string_view actual) {
  const auto exp_tokens = tokenize(expected);
  const auto act_tokens = tokenize(actual);
  if (exp_tokens.empty() && act_tokens.empty()) return 1.0;
  if (exp_tokens.empty() || act_tokens.empty()) return 0.0;
  std::unordered_map<std::string, std::size_t> bag;
  for (const auto& t : exp_tokens) ++bag[t];
  std::size_t overlap = 0;
  for (const auto& t : act_tokens) {
    auto it = bag.find(t);
    if (it != bag.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return static_cast<double>(overlap) /
         static_cast<double>(std::max(exp_tokens.size(), act_tokens.size()));
}

double cosine_tfidf(std::string_view expected, std::string_view actual) {
  std::map<std::string, std::size_t> tf_a;
  std::map<std::string, std::size_t> tf_b;
  for (auto& t : tfidf_terms(expected)) ++tf_a[std::move(t)];
  for (auto& t : tfidf_terms(actual)) ++tf_b[std::move(t)];
  if (tf_a.empty() || tf_b.empty()) return 0.0;
  if (tf_a == tf_b) return 1.0;

  const double idf_shared = 1.0;                   // df = 2
  const double idf_single = std::log(1.5) + 1.0;   // df = 1
  double dot = 0.0;
  double norm_a = 0.0;
  double norm_b = 0.0;
  for (const auto& [term, count] : tf_a) {
    const bool shared = tf_b.count(term) != 0;
    const double w = static_cast<double>(count) * (shared ? idf_shared : idf_single);
    norm_a += w * w;
    if (shared) dot += w * static_cast<double>(tf_b.at(term)) * idf_shared;
  }
  for (const auto& [term, count] : tf_b) {
    const double w = static_cast<double>(count) * (tf_a.count(term) ? idf_shared : idf_single);
    norm_b += w * w;
  }
  return clamp_unit(dot / (std::sqrt(norm_a) * std::sqrt(norm_b)));
}

double jaro_winkler(std::string_view a_text, std::string_view b_text) {
  const std::u32string a = decode_utf8(a_text);
  const std::u32string b = decode_utf8(b_text);
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;

  const std::size_t longer = std::max(a.size(), b.size());
  const std::size_t window = longer / 2 > 0 ? longer / 2 - 1 : 0;
  std::vector<bool> a_hit(a.size(), false);
  std::vector<bool> b_hit(b.size(), false);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t lo = i > window ? i - window : 0;
    const std::size_t hi = std::min(b.size(), i + window + 1);
    for (std::size_t j = lo; j < hi; ++j) {
      if (!b_hit[j] && a[i] == b[j]) {
        a_hit[i] = b_hit[j] = true;
        ++matches;
        break;
      }
    }
  }
  if (matches == 0) return 0.0;

  std::size_t half_transpositions = 0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a_hit[i]) continue;
    while (!b_hit[k]) ++k;
    if (a[i] != b[k]) ++half_transpositions;
    ++k;
  }
  const double m = static_cast<double>(matches);
  const double t = static_cast<double>(half_transpositions) / 2.0;
  const double jaro = (m / static_cast<double>(a.size()) + m / static_cast<double>(b.size()) +
                       (m - t) / m) / 3.0;

  std::size_t prefix = 0;
  while (prefix < kWinklerPrefixCap && prefix < a.size() && prefix < b.size() &&
         a[prefix] == b[prefix]) {
    ++prefix;
  }
  return clamp_unit(jaro + static_cast<double>(prefix) * kWinklerScaling * (1.0 - jaro));
}

std::size_t levenshtein_distance(std::string_view a_text, std::string_view b_text) {
  const std::u32string a = decode_utf8(a_text);
  const std::u32string b = decode_utf8(b_text);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({up + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double levenshtein_ratio(std::string_view a, std::string_view b) {
  const std::size_t longer = std::max(decode_utf8(a).size(), decode_utf8(b).size());
  if (longer == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein_distance(a, b)) / static_cast<double>(longer);
}

double sequence_ratio(std::string_view a_text, std::string_view b_text) {
  const std::u32string a = decode_utf8(a_text);
  const std::u32string b = decode_utf8(b_text);
  const std::size_t total = a.size() + b.size();
  if (total == 0) return 1.0;
  const std::size_t matched = BlockMatcher(a, b).matched_chars();
  return 2.0 * static_cast<double>(matched) / static_cast<double>(total);
}

double bleu4(std::string_view reference, std::string_view candidate) {
  const auto ref = tokenize(reference);
  const auto cand = tokenize(candidate);
  if (cand.empty()) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand_counts = ngram_counts(cand, n);
    const auto ref_counts = ngram_counts(ref, n);
    std::size_t clipped = 0;
    std::size_t total = 0;
    for (const auto& [gram, count] : cand_counts) {
      total += count;
      if (auto it = ref_counts.find(gram); it != ref_counts.end()) {
        clipped += std::min(count, it->second);
      }
    }
    // A candidate shorter than n has no n-grams; its precision is eps / 1.
    const double denom = static_cast<double>(std::max<std::size_t>(total, 1));
    const double p = clipped == 0 ? kBleuEpsilon / denom : static_cast<double>(clipped) / denom;
    log_sum += 0.25 * std::log(p);
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double brevity = c > r ? 1.0 : std::exp(1.0 - r / c);
  return clamp_unit(brevity * std::exp(log_sum));
}

}  // namespace decoysh::metrics
