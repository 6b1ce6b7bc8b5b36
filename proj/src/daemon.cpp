#include "decoysh/daemon.hpp"

#include "decoysh/shell/seed_image.hpp"

namespace decoysh {

std::shared_ptr<session::EngineContext> build_engine(const HoneypotConfig& cfg, logstore::LogStore* store) {
  auto ctx = std::make_shared<session::EngineContext>();
  ctx->cache = std::make_shared<const shell::DictionaryCache>(
      cfg.cache_path.empty() ? shell::default_cache() : shell::load_cache(cfg.cache_path));
  ctx->seed = std::make_shared<const shell::VfsNode>(
      cfg.seed_image_path.empty() ? shell::default_seed_image() : shell::load_seed_image(cfg.seed_image_path));
  ctx->prompt_template = std::make_shared<const llm::PromptTemplate>(
      cfg.prompt_template_path.empty() ? llm::default_prompt_template()
                                       : llm::load_prompt_template(cfg.prompt_template_path));
  ctx->backend = std::make_shared<llm::HttpBackend>(cfg.backend);
  ctx->store = store;
  ctx->hostname = cfg.hostname;
  ctx->shell_prompt = cfg.shell_prompt;
  ctx->prompt_budget = cfg.backend.prompt_budget_chars;
  return ctx;
}

logstore::StoreOptions store_options(const HoneypotConfig& cfg) {
  logstore::StoreOptions opts;
  opts.dir = cfg.log_dir;
  opts.max_log_bytes = cfg.max_log_bytes;
  opts.max_archives = cfg.max_log_archives;
  opts.fsync = cfg.fsync;
  return opts;
}

}  // namespace decoysh
