#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "decoysh/llm/backend.hpp"
#include "decoysh/metrics/report.hpp"
#include "decoysh/session/session.hpp"

namespace decoysh::eval {

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t row, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class EmptyCorpus : public std::runtime_error {
 public:
  EmptyCorpus() : std::runtime_error("corpus has no cases") {}
};

class EmptyResults : public std::invalid_argument {
 public:
  EmptyResults() : std::invalid_argument("no results to summarize") {}
};

struct CommandCase {
  std::string command;
  std::string expected_output;
  bool operator==(const CommandCase&) const = default;
};

/// RFC 4180 with the header `command,expected_output`. Rows are numbered
/// from 1 (the header) in errors.
std::vector<CommandCase> parse_cases(std::string_view text);
std::vector<CommandCase> load_cases(const std::filesystem::path& path);
std::string serialize_cases(const std::vector<CommandCase>& cases);

struct RunResult {
  std::string model_id;
  std::size_t index = 0;  // 1-based position in the corpus
  CommandCase test_case;
  std::string actual;
  std::int64_t latency_ms = 0;
  double mem_delta_mb = 0.0;
  std::optional<double> server_mem_delta_mb;
  metrics::MetricReport report;
  session::Tier tier = session::Tier::llm;
  bool timed_out = false;
  std::string error;  // backend failure text, empty on success
};

struct RunOptions {
  bool with_cache = false;          // full routing instead of model-only
  std::size_t abort_after = 10;     // consecutive transport failures
  bool deterministic = false;       // zero the clock and memory probes
  std::optional<int> server_pid;    // also sample this process's RSS
  std::shared_ptr<const shell::VfsNode> seed;
  std::shared_ptr<const shell::DictionaryCache> cache;
  std::shared_ptr<const llm::PromptTemplate> prompt_template;
};

struct ModelRun {
  std::string model_id;
  std::map<std::string, std::string> params;
  std::vector<RunResult> results;
  double timeout_s = 30.0;
  bool skipped = false;
  bool aborted = false;
  std::string reason;  // why it was skipped or aborted
};

/// Runs every case through one honeypot session (a fresh one if a case ends
/// the shell). Timeouts reset the backend and the loop carries on.
ModelRun run_model(llm::Backend& backend, const std::vector<CommandCase>& cases, const RunOptions& opts);

/// (after - before) / 2^20; negative values are kept.
double measure_memory_delta(std::uint64_t before_bytes, std::uint64_t after_bytes);
/// Resident set of a process from /proc; 0 when it cannot be read.
std::uint64_t resident_bytes(std::optional<int> pid = std::nullopt);

struct ModelSummary {
  std::string model_id;
  std::size_t n_cases = 0;
  double mean_latency_ms = 0;
  double mean_mem_delta_mb = 0;
  std::optional<double> mean_server_mem_delta_mb;
  double exact_match_rate = 0;
  double token_accuracy = 0;
  double cosine_tfidf = 0;
  double jaro_winkler = 0;
  double levenshtein_ratio = 0;
  double sequence_ratio = 0;
  double bleu4 = 0;
  double success_rate = 0;
  double hallucination_rate = 0;
  std::size_t timeouts = 0;
  std::map<std::string, std::size_t> tiers;
};

/// Means over every result; a timed-out case counts with latency equal to
/// timeout_s. Throws EmptyResults.
ModelSummary summarize(const std::vector<RunResult>& results, double timeout_s);

struct RunMetadata {
  std::string mode;  // "llm_only" or "with_cache"
  std::string timestamp;
  std::string corpus;
  std::size_t corpus_size = 0;
  bool deterministic = false;
};

struct ManifestEntry {
  std::filesystem::path path;
  bool ok = true;
  std::string error;
};

/// Filesystem-safe form of a model id.
std::string model_dir_name(std::string_view model_id);

/// Six decimals, the precision of every float in the outputs.
double fixed6(double v);

nlohmann::json summary_json(const ModelSummary& s);
nlohmann::json result_json(const RunResult& r);
std::string comparison_csv(const std::vector<ModelRun>& runs);

/// Writes raw_outputs/, metrics/, combined_results.json and
/// model_comparison.csv under out_dir. A failed file is marked in the
/// manifest and the rest are still attempted.
std::vector<ManifestEntry> write_outputs(const std::vector<ModelRun>& runs, const RunMetadata& meta,
                                         const std::filesystem::path& out_dir);

}  // namespace decoysh::eval

namespace decoysh::eval {

/// Model names on the command line:
///   replay:<file.json>   canned answers (llm::load_replay_file), id = file stem
///   local:<id>           local inference server
///   cloud:<id>           cloud API
///   <id>                 cloud when it starts with "gemini", local otherwise
/// Endpoint, key variable, timeout and hook come from base.
std::unique_ptr<llm::Backend> make_backend(std::string_view model, const llm::BackendSpec& base);

}  // namespace decoysh::eval
