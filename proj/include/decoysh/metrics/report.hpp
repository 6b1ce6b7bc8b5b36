#pragma once

#include <string_view>

namespace decoysh::metrics {

inline constexpr double kSuccessThreshold = 0.4;

struct MetricReport {
  bool exact = false;
  double token_accuracy = 0.0;
  double cosine_tfidf = 0.0;
  double jaro_winkler = 0.0;
  double levenshtein_ratio = 0.0;
  double sequence_ratio = 0.0;
  double bleu4 = 0.0;
  bool success = false;
  bool hallucination = false;
};

/// Fidelity criterion: either similarity strictly above 0.4.
constexpr bool success_flag(double cosine_tfidf, double jaro_winkler) {
  return cosine_tfidf > kSuccessThreshold || jaro_winkler > kSuccessThreshold;
}

inline bool success_flag(const MetricReport& r) {
  return success_flag(r.cosine_tfidf, r.jaro_winkler);
}

/// Scores one (expected, actual) pair. hallucination is evaluated on
/// raw_output, which is the unsanitized model text when there is one.
MetricReport score(std::string_view command, std::string_view expected, std::string_view actual,
                   std::string_view raw_output);

inline MetricReport score(std::string_view command, std::string_view expected,
                          std::string_view actual) {
  return score(command, expected, actual, actual);
}

}  // namespace decoysh::metrics
