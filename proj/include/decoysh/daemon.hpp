#pragma once

#include <memory>

#include "decoysh/config.hpp"
#include "decoysh/logstore/logstore.hpp"
#include "decoysh/session/session.hpp"

namespace decoysh {

/// Loads the cache, seed image and prompt template named in cfg (built-ins
/// when a path is empty) and wires an HTTP backend for cfg.backend.
std::shared_ptr<session::EngineContext> build_engine(const HoneypotConfig& cfg, logstore::LogStore* store);

logstore::StoreOptions store_options(const HoneypotConfig& cfg);

}  // namespace decoysh
