#include "decoysh/eval/harness.hpp"

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "decoysh/shell/cache.hpp"
#include "decoysh/shell/seed_image.hpp"

namespace decoysh::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kHeader = "command,expected_output";

std::string strip_trailing_newlines(std::string_view s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

std::string csv_field(std::string_view v) {
  if (v.find_first_of(",\"\r\n") == std::string_view::npos && (v.empty() || (v.front() != ' ' && v.back() != ' '))) {
    return std::string(v);
  }
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  // "-0.000000" would make reruns differ on noise-level negatives
  return std::string(buf) == "-0.000000" ? "0.000000" : buf;
}

json opt6(const std::optional<double>& v) { return v ? json(fixed6(*v)) : json(nullptr); }

bool write_file(const fs::path& path, std::string_view bytes, std::vector<ManifestEntry>& manifest) {
  ManifestEntry entry{path, true, {}};
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (out) out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) {
    entry.ok = false;
    entry.error = ec ? ec.message() : std::string("cannot write ") + path.string();
  }
  manifest.push_back(entry);
  return entry.ok;
}

}  // namespace

std::vector<CommandCase> parse_cases(std::string_view text) {
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::vector<std::vector<std::string>> records;
  std::vector<std::size_t> rows;
  std::vector<std::string> fields;
  std::string field;
  std::size_t row = 1;
  std::size_t i = 0;
  bool quoted = false;
  bool was_quoted = false;
  auto end_record = [&] {
    fields.push_back(std::move(field));
    field.clear();
    was_quoted = false;
    const bool blank = fields.size() == 1 && fields[0].empty();
    if (!blank) {
      records.push_back(std::move(fields));
      rows.push_back(row);
    }
    fields.clear();
    ++row;
  };
  while (i < text.size()) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        quoted = false;
        ++i;
        if (i < text.size() && text[i] != ',' && text[i] != '\n' && text[i] != '\r') {
          throw CsvError(row, "unexpected character after closing quote");
        }
        continue;
      }
      field += c;
      ++i;
      continue;
    }
    if (c == '"') {
      if (!field.empty() || was_quoted) throw CsvError(row, "quote inside an unquoted field");
      quoted = true;
      was_quoted = true;
      ++i;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      was_quoted = false;
      ++i;
    } else if (c == '\r' || c == '\n') {
      i += (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ? 2 : 1;
      end_record();
    } else {
      field += c;
      ++i;
    }
  }
  if (quoted) throw CsvError(row, "unterminated quoted field");
  if (!field.empty() || !fields.empty() || was_quoted) end_record();

  if (records.empty() || rows.front() != 1 || records.front().size() != 2 ||
      records.front()[0] != "command" || records.front()[1] != "expected_output") {
    throw CsvError(1, "header must be '" + std::string(kHeader) + "'");
  }
  std::vector<CommandCase> cases;
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != 2) {
      throw CsvError(rows[r], "expected 2 fields, found " + std::to_string(records[r].size()));
    }
    if (records[r][0].find_first_not_of(" \t") == std::string::npos) throw CsvError(rows[r], "empty command");
    cases.push_back({records[r][0], records[r][1]});
  }
  if (cases.empty()) throw EmptyCorpus();
  return cases;
}

std::vector<CommandCase> load_cases(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_cases(ss.str());
}

std::string serialize_cases(const std::vector<CommandCase>& cases) {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& c : cases) out += csv_field(c.command) + "," + csv_field(c.expected_output) + "\n";
  return out;
}

double measure_memory_delta(std::uint64_t before_bytes, std::uint64_t after_bytes) {
  return (static_cast<double>(after_bytes) - static_cast<double>(before_bytes)) / (1024.0 * 1024.0);
}

std::uint64_t resident_bytes(std::optional<int> pid) {
  const std::string path = pid ? "/proc/" + std::to_string(*pid) + "/statm" : "/proc/self/statm";
  std::ifstream in(path);
  std::uint64_t size = 0, resident = 0;
  if (!(in >> size >> resident)) return 0;
  return resident * static_cast<std::uint64_t>(::sysconf(_SC_PAGESIZE));
}

ModelRun run_model(llm::Backend& backend, const std::vector<CommandCase>& cases, const RunOptions& opts) {
  ModelRun run;
  run.model_id = backend.id();
  run.params = backend.describe();
  run.timeout_s = backend.timeout_s();
  std::string why;
  if (!backend.check_available(&why)) {
    run.skipped = true;
    run.reason = why.empty() ? "backend unavailable" : why;
    return run;
  }

  auto ctx = std::make_shared<session::EngineContext>();
  ctx->cache = opts.cache ? opts.cache
                          : std::make_shared<const shell::DictionaryCache>(shell::default_cache());
  ctx->seed = opts.seed ? opts.seed : std::make_shared<const shell::VfsNode>(shell::default_seed_image());
  ctx->prompt_template = opts.prompt_template
                             ? opts.prompt_template
                             : std::make_shared<const llm::PromptTemplate>(llm::default_prompt_template());
  // Non-owning: the caller keeps the backend alive for the whole run.
  ctx->backend = std::shared_ptr<llm::Backend>(std::shared_ptr<void>{}, &backend);
  ctx->use_cache = opts.with_cache;
  ctx->use_builtins = opts.with_cache;
  if (opts.deterministic) {
    ctx->wall_ms = [] { return std::int64_t{0}; };
    ctx->vfs_clock = [] { return std::int64_t{1700000000}; };
  }
  std::shared_ptr<const session::EngineContext> shared = ctx;

  std::unique_ptr<session::Session> shell;
  std::size_t transport_streak = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    if (!shell || shell->closed()) {
      shell = std::make_unique<session::Session>(shared, "root", logstore::Peer{"127.0.0.1", 0}, false);
    }
    const auto mem_before = resident_bytes();
    const auto server_before = opts.server_pid ? resident_bytes(opts.server_pid) : 0;
    const auto t0 = std::chrono::steady_clock::now();
    auto outcome = shell->handle_line(c.command);
    const auto t1 = std::chrono::steady_clock::now();
    const auto mem_after = resident_bytes();

    RunResult r;
    r.model_id = run.model_id;
    r.index = i + 1;
    r.test_case = c;
    if (outcome) {
      if (outcome->end_session) shell->close(session::CloseReason::exit_command);
      r.tier = outcome->tier;
      r.timed_out = outcome->failure == session::Failure::timeout ||
                    outcome->failure == session::Failure::deadline;
      r.actual = r.timed_out ? std::string() : outcome->output;
      r.error = outcome->error;
    }
    if (!opts.deterministic) {
      r.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
      r.mem_delta_mb = measure_memory_delta(mem_before, mem_after);
      if (opts.server_pid) r.server_mem_delta_mb = measure_memory_delta(server_before, resident_bytes(opts.server_pid));
    } else if (opts.server_pid) {
      r.server_mem_delta_mb = 0.0;
    }
    // Ground truth is captured without the shell's final newline.
    const std::string raw = outcome && !outcome->raw.empty() ? outcome->raw : r.actual;
    r.report = metrics::score(c.command, strip_trailing_newlines(c.expected_output),
                              strip_trailing_newlines(r.actual), raw);
    if (r.timed_out) {
      r.report.success = false;
      std::string reset_why;
      if (!backend.reset(&reset_why)) r.error += r.error.empty() ? reset_why : "; reset failed: " + reset_why;
    }
    const bool transport = outcome && outcome->failure == session::Failure::transport;
    transport_streak = transport ? transport_streak + 1 : 0;
    run.results.push_back(std::move(r));
    if (opts.abort_after > 0 && transport_streak >= opts.abort_after) {
      run.aborted = true;
      run.reason = "aborted after " + std::to_string(transport_streak) + " consecutive transport errors";
      break;
    }
  }
  return run;
}

ModelSummary summarize(const std::vector<RunResult>& results, double timeout_s) {
  if (results.empty()) throw EmptyResults();
  ModelSummary s;
  s.model_id = results.front().model_id;
  s.n_cases = results.size();
  double server_sum = 0;
  std::size_t server_n = 0;
  for (const auto& r : results) {
    s.mean_latency_ms += r.timed_out ? timeout_s * 1000.0 : static_cast<double>(r.latency_ms);
    s.mean_mem_delta_mb += r.mem_delta_mb;
    if (r.server_mem_delta_mb) {
      server_sum += *r.server_mem_delta_mb;
      ++server_n;
    }
    s.exact_match_rate += r.report.exact ? 1 : 0;
    s.token_accuracy += r.report.token_accuracy;
    s.cosine_tfidf += r.report.cosine_tfidf;
    s.jaro_winkler += r.report.jaro_winkler;
    s.levenshtein_ratio += r.report.levenshtein_ratio;
    s.sequence_ratio += r.report.sequence_ratio;
    s.bleu4 += r.report.bleu4;
    s.success_rate += r.report.success ? 1 : 0;
    s.hallucination_rate += r.report.hallucination ? 1 : 0;
    s.timeouts += r.timed_out ? 1 : 0;
    ++s.tiers[std::string(session::to_string(r.tier))];
  }
  const double n = static_cast<double>(s.n_cases);
  for (double* v : {&s.mean_latency_ms, &s.mean_mem_delta_mb, &s.exact_match_rate, &s.token_accuracy,
                    &s.cosine_tfidf, &s.jaro_winkler, &s.levenshtein_ratio, &s.sequence_ratio, &s.bleu4,
                    &s.success_rate, &s.hallucination_rate}) {
    *v /= n;
  }
  if (server_n > 0) s.mean_server_mem_delta_mb = server_sum / static_cast<double>(server_n);
  return s;
}

std::string model_dir_name(std::string_view model_id) {
  std::string out;
  for (char c : model_id) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    out += keep ? c : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

double fixed6(double v) {
  const double r = std::round(v * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;  // no negative zero
}

json summary_json(const ModelSummary& s) {
  json j;
  j["model_id"] = s.model_id;
  j["n_cases"] = s.n_cases;
  j["mean_latency_ms"] = fixed6(s.mean_latency_ms);
  j["mean_mem_delta_mb"] = fixed6(s.mean_mem_delta_mb);
  j["mean_server_mem_delta_mb"] = opt6(s.mean_server_mem_delta_mb);
  j["exact_match_rate"] = fixed6(s.exact_match_rate);
  j["token_accuracy"] = fixed6(s.token_accuracy);
  j["cosine_tfidf"] = fixed6(s.cosine_tfidf);
  j["jaro_winkler"] = fixed6(s.jaro_winkler);
  j["levenshtein_ratio"] = fixed6(s.levenshtein_ratio);
  j["sequence_ratio"] = fixed6(s.sequence_ratio);
  j["bleu4"] = fixed6(s.bleu4);
  j["success_rate"] = fixed6(s.success_rate);
  j["hallucination_rate"] = fixed6(s.hallucination_rate);
  j["timeouts"] = s.timeouts;
  j["tiers"] = s.tiers;
  return j;
}

json result_json(const RunResult& r) {
  json m;
  m["exact"] = r.report.exact;
  m["token_accuracy"] = fixed6(r.report.token_accuracy);
  m["cosine_tfidf"] = fixed6(r.report.cosine_tfidf);
  m["jaro_winkler"] = fixed6(r.report.jaro_winkler);
  m["levenshtein_ratio"] = fixed6(r.report.levenshtein_ratio);
  m["sequence_ratio"] = fixed6(r.report.sequence_ratio);
  m["bleu4"] = fixed6(r.report.bleu4);
  m["success"] = r.report.success;
  m["hallucination"] = r.report.hallucination;
  json j;
  j["index"] = r.index;
  j["command"] = r.test_case.command;
  j["expected_output"] = r.test_case.expected_output;
  j["actual_output"] = r.actual;
  j["latency_ms"] = r.latency_ms;
  j["mem_delta_mb"] = fixed6(r.mem_delta_mb);
  j["server_mem_delta_mb"] = opt6(r.server_mem_delta_mb);
  j["tier"] = session::to_string(r.tier);
  j["timed_out"] = r.timed_out;
  j["error"] = r.error.empty() ? json(nullptr) : json(r.error);
  j["metrics"] = m;
  return j;
}

std::string comparison_csv(const std::vector<ModelRun>& runs) {
  std::string out =
      "model,n_cases,mean_latency_ms,mean_mem_delta_mb,exact_match_rate,token_accuracy,cosine_tfidf,"
      "jaro_winkler,levenshtein_ratio,sequence_ratio,bleu4,success_rate,hallucination_rate,timeouts,status\n";
  for (const auto& run : runs) {
    if (run.skipped || run.results.empty()) continue;
    const auto s = summarize(run.results, run.timeout_s);
    out += csv_field(run.model_id) + "," + std::to_string(s.n_cases);
    for (double v : {s.mean_latency_ms, s.mean_mem_delta_mb, s.exact_match_rate, s.token_accuracy, s.cosine_tfidf,
                     s.jaro_winkler, s.levenshtein_ratio, s.sequence_ratio, s.bleu4, s.success_rate,
                     s.hallucination_rate}) {
      out += "," + fmt6(v);
    }
    out += "," + std::to_string(s.timeouts) + "," + (run.aborted ? "aborted" : "complete") + "\n";
  }
  return out;
}

std::vector<ManifestEntry> write_outputs(const std::vector<ModelRun>& runs, const RunMetadata& meta,
                                         const fs::path& out_dir) {
  std::vector<ManifestEntry> manifest;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    manifest.push_back({out_dir, false, "cannot create output directory: " + (ec ? ec.message() : "not a directory")});
    return manifest;
  }

  json meta_j = {{"mode", meta.mode},
                 {"timestamp", meta.timestamp},
                 {"corpus", meta.corpus},
                 {"corpus_size", meta.corpus_size},
                 {"deterministic", meta.deterministic}};
  json combined;
  combined["metadata"] = meta_j;
  combined["models"] = json::object();
  combined["skipped"] = json::array();
  combined["aborted"] = json::array();

  for (const auto& run : runs) {
    if (run.skipped) {
      combined["skipped"].push_back({{"model_id", run.model_id}, {"reason", run.reason}});
      continue;
    }
    if (run.aborted) combined["aborted"].push_back({{"model_id", run.model_id}, {"reason", run.reason}});
    const std::string dir = model_dir_name(run.model_id);
    const int width = std::max<int>(3, static_cast<int>(std::to_string(run.results.size()).size()));
    json cases = json::array();
    for (const auto& r : run.results) {
      char name[32];
      std::snprintf(name, sizeof name, "%0*zu.txt", width, r.index);
      write_file(out_dir / "raw_outputs" / dir / name, r.actual, manifest);
      cases.push_back(result_json(r));
    }
    json model;
    model["model_id"] = run.model_id;
    model["params"] = run.params;
    model["timeout_s"] = fixed6(run.timeout_s);
    model["status"] = run.aborted ? "aborted" : "complete";
    model["reason"] = run.reason.empty() ? json(nullptr) : json(run.reason);
    model["summary"] = run.results.empty() ? json(nullptr) : summary_json(summarize(run.results, run.timeout_s));
    model["cases"] = cases;
    json per_model = model;
    per_model["metadata"] = meta_j;
    write_file(out_dir / "metrics" / (dir + ".json"), per_model.dump(2) + "\n", manifest);
    combined["models"][run.model_id] = std::move(model);
  }
  write_file(out_dir / "combined_results.json", combined.dump(2) + "\n", manifest);
  write_file(out_dir / "model_comparison.csv", comparison_csv(runs), manifest);
  return manifest;
}

std::unique_ptr<llm::Backend> make_backend(std::string_view model, const llm::BackendSpec& base) {
  if (model.rfind("replay:", 0) == 0) {
    const fs::path path(std::string(model.substr(7)));
    return std::make_unique<llm::ReplayBackend>(path.stem().string(), llm::load_replay_file(path));
  }
  llm::BackendSpec spec = base;
  if (model.rfind("local:", 0) == 0) {
    spec.provider = llm::Provider::local_server;
    model.remove_prefix(6);
  } else if (model.rfind("cloud:", 0) == 0) {
    spec.provider = llm::Provider::cloud_api;
    model.remove_prefix(6);
  } else {
    spec.provider = model.rfind("gemini", 0) == 0 ? llm::Provider::cloud_api : llm::Provider::local_server;
  }
  if (model.empty()) throw std::invalid_argument("empty model id");
  if (spec.provider != base.provider && spec.endpoint == base.endpoint) {
    spec.endpoint = spec.provider == llm::Provider::cloud_api ? "https://generativelanguage.googleapis.com"
                                                              : "http://127.0.0.1:11434";
  }
  spec.model_id = std::string(model);
  return std::make_unique<llm::HttpBackend>(spec);
}

}  // namespace decoysh::eval
