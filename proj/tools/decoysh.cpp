#include <CLI11.hpp>
#include <signal.h>

#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "decoysh/config.hpp"
#include "decoysh/daemon.hpp"
#include "decoysh/eval/harness.hpp"
#include "decoysh/shell/cache.hpp"
#include "decoysh/shell/seed_image.hpp"
#include "decoysh/ssh/host_key.hpp"
#include "decoysh/ssh/server.hpp"

namespace fs = std::filesystem;

namespace {

int serve(const fs::path& config_path, const std::string& bind, int port_override) {
  auto cfg = decoysh::load_config(config_path);
  if (port_override >= 0) cfg.port = port_override;
  auto key = std::make_shared<const decoysh::ssh::HostKey>(decoysh::ssh::load_host_key(cfg.host_key_path));

  // Block the signals before any thread starts so only sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  decoysh::logstore::LogStore store(decoysh::store_options(cfg));
  auto ctx = decoysh::build_engine(cfg, &store);
  std::string reason;
  if (!ctx->backend->check_available(&reason)) {
    std::cerr << "decoysh: backend " << ctx->backend->id() << " unavailable (" << reason
              << "); unknown commands will get the fallback error\n";
  }
  decoysh::ssh::Gateway gateway(cfg, key, ctx);
  gateway.start(bind);
  std::cerr << "decoysh: listening on " << bind << ":" << gateway.port() << " host key " << key->fingerprint()
            << "\n";
  int sig = 0;
  sigwait(&set, &sig);
  std::cerr << "decoysh: shutting down\n";
  gateway.stop();
  return 0;
}

struct EvalArgs {
  std::string commands;
  std::string models;
  std::string out;
  bool with_cache = false;
  double timeout_s = 0;
  std::string seed_image;
  std::string config;
  std::string endpoint;
  std::string api_key_env;
  std::string reset_hook;
  bool deterministic = false;
  std::size_t abort_after = 10;
  int server_pid = 0;
};

std::string utc_now() {
  const auto t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// 0: every model ran to the end; 2: some were skipped or aborted; 1: fatal.
int run_eval(const EvalArgs& a) {
  namespace ev = decoysh::eval;
  std::vector<ev::CommandCase> cases;
  try {
    cases = ev::load_cases(a.commands);
  } catch (const std::exception& e) {
    std::cerr << "decoysh: " << a.commands << ": " << e.what() << "\n";
    return 1;
  }

  decoysh::llm::BackendSpec base;
  decoysh::HoneypotConfig cfg;
  if (!a.config.empty()) {
    cfg = decoysh::load_config(a.config);
    base = cfg.backend;
  }
  if (!a.endpoint.empty()) base.endpoint = a.endpoint;
  if (!a.api_key_env.empty()) base.api_key_env = a.api_key_env;
  if (!a.reset_hook.empty()) base.reset_hook = a.reset_hook;
  if (a.timeout_s > 0) base.timeout_s = a.timeout_s;

  ev::RunOptions opts;
  opts.with_cache = a.with_cache;
  opts.abort_after = a.abort_after;
  opts.deterministic = a.deterministic;
  if (a.server_pid > 0) opts.server_pid = a.server_pid;
  const std::string seed = !a.seed_image.empty() ? a.seed_image : cfg.seed_image_path;
  if (!seed.empty()) {
    opts.seed = std::make_shared<const decoysh::shell::VfsNode>(decoysh::shell::load_seed_image(seed));
  }
  if (!cfg.cache_path.empty()) {
    opts.cache = std::make_shared<const decoysh::shell::DictionaryCache>(decoysh::shell::load_cache(cfg.cache_path));
  }
  if (!cfg.prompt_template_path.empty()) {
    opts.prompt_template =
        std::make_shared<const decoysh::llm::PromptTemplate>(decoysh::llm::load_prompt_template(cfg.prompt_template_path));
  }

  std::vector<ev::ModelRun> runs;
  std::stringstream list(a.models);
  std::string name;
  while (std::getline(list, name, ',')) {
    if (name.empty()) continue;
    std::unique_ptr<decoysh::llm::Backend> backend;
    try {
      backend = ev::make_backend(name, base);
    } catch (const std::exception& e) {
      ev::ModelRun bad;
      bad.model_id = name;
      bad.skipped = true;
      bad.reason = e.what();
      runs.push_back(bad);
      std::cerr << "decoysh: " << name << ": skipped: " << e.what() << "\n";
      continue;
    }
    std::cerr << "decoysh: evaluating " << backend->id() << " on " << cases.size() << " cases\n";
    runs.push_back(ev::run_model(*backend, cases, opts));
    const auto& run = runs.back();
    if (run.skipped || run.aborted) std::cerr << "decoysh: " << run.model_id << ": " << run.reason << "\n";
  }
  if (runs.empty()) {
    std::cerr << "decoysh: no models given\n";
    return 1;
  }

  ev::RunMetadata meta;
  meta.mode = a.with_cache ? "with_cache" : "llm_only";
  meta.timestamp = a.deterministic ? "1970-01-01T00:00:00Z" : utc_now();
  meta.corpus = fs::path(a.commands).filename().string();
  meta.corpus_size = cases.size();
  meta.deterministic = a.deterministic;
  bool write_failed = false;
  for (const auto& m : ev::write_outputs(runs, meta, a.out)) {
    if (!m.ok) {
      std::cerr << "decoysh: " << m.path.string() << ": " << m.error << "\n";
      write_failed = true;
    }
  }
  if (write_failed) return 1;
  for (const auto& r : runs) {
    if (r.skipped || r.aborted) return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decoysh: SSH honeypot with an emulated shell"};
  app.require_subcommand(1);

  std::string config_path;
  std::string bind = "0.0.0.0";
  int port = -1;
  auto* serve_cmd = app.add_subcommand("serve", "Run the SSH honeypot");
  serve_cmd->add_option("-c,--config", config_path, "INI configuration file")->required();
  serve_cmd->add_option("--bind", bind, "Listen address");
  serve_cmd->add_option("--port", port, "Override the configured port");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score model backends against a command corpus");
  eval->add_option("--commands", ea.commands, "CSV with header command,expected_output")->required();
  eval->add_option("--models", ea.models,
                   "Comma-separated models: <id>, local:<id>, cloud:<id> or replay:<file.json>")
      ->required();
  eval->add_option("--out", ea.out, "Output directory")->required();
  eval->add_flag("--with-cache", ea.with_cache, "Route through the cache and builtins as the daemon does");
  eval->add_option("--timeout-s", ea.timeout_s, "Per-request timeout in seconds");
  eval->add_option("--seed-image", ea.seed_image, "Filesystem image manifest");
  eval->add_option("--config", ea.config, "Take backend settings from this INI file");
  eval->add_option("--endpoint", ea.endpoint, "Backend base URL");
  eval->add_option("--api-key-env", ea.api_key_env, "Environment variable holding the cloud API key");
  eval->add_option("--reset-hook", ea.reset_hook, "Command run to restart the model server after a timeout");
  eval->add_option("--abort-after", ea.abort_after, "Give up on a model after this many transport errors in a row");
  eval->add_option("--server-pid", ea.server_pid, "Also sample this process's memory (the model server)");
  eval->add_flag("--deterministic", ea.deterministic,
                 "Fixed timestamp and clocks; latency and memory are recorded as 0");

  std::string key_path;
  std::string comment = "decoysh";
  auto* keygen = app.add_subcommand("keygen", "Write a new ed25519 host key in OpenSSH format");
  keygen->add_option("file", key_path, "Private key path; the public key goes to <file>.pub")->required();
  keygen->add_option("--comment", comment, "Key comment");

  std::string seed_dir;
  auto* dump_seed = app.add_subcommand("dump-seed", "Write the built-in filesystem image");
  dump_seed->add_option("dir", seed_dir, "Output directory")->required();

  std::string cache_out;
  auto* dump_cache = app.add_subcommand("dump-cache", "Write the built-in command cache");
  dump_cache->add_option("file", cache_out, "Output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(config_path, bind, port);
    if (*eval) return run_eval(ea);
    if (*keygen) {
      const auto key = decoysh::ssh::generate_host_key(comment);
      decoysh::ssh::save_host_key(key, key_path);
      std::ofstream pub(key_path + ".pub", std::ios::trunc);
      pub << key.public_line() << "\n";
      std::cout << key.fingerprint() << "\n";
      return pub ? 0 : 1;
    }
    if (*dump_seed) {
      decoysh::shell::save_seed_image(decoysh::shell::default_seed_image(), seed_dir);
      return 0;
    }
    if (*dump_cache) {
      std::ofstream out(cache_out, std::ios::binary | std::ios::trunc);
      out << decoysh::shell::serialize_cache(decoysh::shell::default_cache());
      return out ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "decoysh: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
