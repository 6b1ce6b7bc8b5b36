#include "decoysh/metrics/report.hpp"

#include "decoysh/metrics/hallucination.hpp"
#include "decoysh/metrics/similarity.hpp"

namespace decoysh::metrics {

MetricReport score(std::string_view command, std::string_view expected, std::string_view actual,
                   std::string_view raw_output) {
  MetricReport r;
  r.exact = exact_match(expected, actual);
  r.token_accuracy = token_accuracy(expected, actual);
  r.cosine_tfidf = cosine_tfidf(expected, actual);
  r.jaro_winkler = jaro_winkler(expected, actual);
  r.levenshtein_ratio = levenshtein_ratio(expected, actual);
  r.sequence_ratio = sequence_ratio(expected, actual);
  r.bleu4 = bleu4(expected, actual);
  r.success = success_flag(r);
  r.hallucination = hallucination_flag(command, raw_output);
  return r;
}

}  // namespace decoysh::metrics
