#pragma once

#include <string_view>

// Similarity measures between an expected shell output and an observed one.
// All functions operate on Unicode scalar values decoded from UTF-8 (invalid
// bytes become U+FFFD) and return values in [0, 1].
//
// cosine_tfidf, jaro_winkler, levenshtein_ratio and token_accuracy are
// symmetric. bleu4 is not: the first argument is the reference and the second
// the candidate. sequence_ratio is not either, because equal-length blocks are
// broken by position in the first argument (same as difflib).

namespace decoysh::metrics {

/// Byte equality after dropping trailing whitespace on every line and any
/// trailing newlines.
bool exact_match(std::string_view expected, std::string_view actual);

/// Multiset overlap of tokenize() bags divided by the longer token count.
/// 1.0 when both are empty, 0.0 when exactly one is.
double token_accuracy(std::string_view expected, std::string_view actual);

/// Cosine of smoothed TF-IDF vectors fitted on the two-document corpus
/// {expected, actual}: tf is the raw count, idf(t) = ln(3 / (1 + df(t))) + 1,
/// each vector L2-normalised. 0.0 when either document has no terms.
double cosine_tfidf(std::string_view expected, std::string_view actual);

/// Jaro similarity with the Winkler prefix boost (prefix capped at 4,
/// scaling 0.1).
double jaro_winkler(std::string_view a, std::string_view b);

/// Unit-cost edit distance.
std::size_t levenshtein_distance(std::string_view a, std::string_view b);

/// 1 - distance / max(|a|, |b|).
double levenshtein_ratio(std::string_view a, std::string_view b);

/// Ratcliff-Obershelp: 2M / (|a| + |b|) where M sums the recursively matched
/// longest common blocks. Ties pick the block starting earliest in a, then
/// earliest in b. No junk heuristic.
double sequence_ratio(std::string_view a, std::string_view b);

/// BLEU-4 with a single reference, uniform weights and add-epsilon
/// smoothing (a zero clipped count is replaced by 0.1).
double bleu4(std::string_view reference, std::string_view candidate);

inline constexpr double kBleuEpsilon = 0.1;
inline constexpr double kWinklerScaling = 0.1;
inline constexpr std::size_t kWinklerPrefixCap = 4;

}  // namespace decoysh::metrics
