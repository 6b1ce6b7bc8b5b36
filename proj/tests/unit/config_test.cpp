#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "decoysh/config.hpp"

namespace fs = std::filesystem;
using decoysh::HoneypotConfig;

namespace {

constexpr const char* kMinimal = "[auth]\nusers = root:toor\n";

HoneypotConfig with_users(std::vector<decoysh::Credential> creds) {
  HoneypotConfig cfg;
  cfg.credentials = std::move(creds);
  return cfg;
}

}  // namespace

TEST(Config, PortFromFile) {
  auto cfg = decoysh::parse_config("[ssh]\nport = 8022\n[auth]\nusers = root:toor\n");
  EXPECT_EQ(cfg.port, 8022);
}

TEST(Config, DefaultsApply) {
  auto cfg = decoysh::parse_config(kMinimal);
  EXPECT_EQ(cfg.hostname, "svr04");
  EXPECT_EQ(cfg.port, 8022);
  EXPECT_EQ(cfg.banner, "SSH-2.0-OpenSSH_8.2p1 Ubuntu-4ubuntu0.5");
  EXPECT_EQ(cfg.shell_prompt, "{user}@{host}:{cwd}$ ");
  EXPECT_DOUBLE_EQ(cfg.backend.timeout_s, 30.0);
  EXPECT_EQ(cfg.backend.api_key_env, "LLM_API_KEY");
}

TEST(Config, PortOutOfRange) {
  try {
    decoysh::parse_config("[ssh]\nport = 70000\n[auth]\nusers = root:toor\n");
    FAIL() << "expected ValidationError";
  } catch (const decoysh::ValidationError& e) {
    EXPECT_EQ(e.field(), "port");
  }
}

TEST(Config, InvariantViolations) {
  EXPECT_THROW(decoysh::parse_config("[ssh]\nport = 0\n"), decoysh::ValidationError);
  EXPECT_THROW(decoysh::parse_config("[ssh]\nport = 22\n"), decoysh::ValidationError)
      << "no credentials";
  EXPECT_THROW(decoysh::parse_config("[auth]\nusers = root:toor\n[llm]\ntimeout_s = 0\n"),
               decoysh::ValidationError);
  EXPECT_THROW(decoysh::parse_config("[auth]\nusers = root:toor\n[ssh]\nhost_key =\n"),
               decoysh::ValidationError);
}

TEST(Config, ParseErrorsCarryLineNumbers) {
  try {
    decoysh::parse_config("[auth]\nusers = root:toor\nthis line is junk\n");
    FAIL();
  } catch (const decoysh::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(decoysh::parse_config("[nope]\nx = 1\n"), decoysh::ParseError);
  EXPECT_THROW(decoysh::parse_config("[ssh]\nbogus = 1\n"), decoysh::ParseError);
  EXPECT_THROW(decoysh::parse_config("[ssh]\nport = abc\n"), decoysh::ParseError);
  EXPECT_THROW(decoysh::parse_config("[ssh\n"), decoysh::ParseError);
}

TEST(Config, KeysCaseInsensitiveCommentsIgnored) {
  auto cfg = decoysh::parse_config(
      "# leading comment\n"
      "; another\n"
      "[SSH]\n"
      "PORT = 2222\n"
      "[Auth]\n"
      "Users = root:toor,admin:admin123\n"
      "[shell]\n"
      "HostName = web01\n");
  EXPECT_EQ(cfg.port, 2222);
  EXPECT_EQ(cfg.hostname, "web01");
  ASSERT_EQ(cfg.credentials.size(), 2u);
  EXPECT_EQ(cfg.credentials[1], (decoysh::Credential{"admin", "admin123"}));
}

TEST(Config, MissingFile) {
  EXPECT_THROW(decoysh::load_config("/nonexistent/decoysh.ini"), decoysh::MissingFile);
}

TEST(Config, RelativePathsResolveAgainstFileDirectory) {
  const fs::path dir = fs::temp_directory_path() / "decoysh_cfg_test";
  fs::create_directories(dir);
  {
    std::ofstream(dir / "honeypot.ini") << "[ssh]\nhost_key = keys/host\n[auth]\nusers = a:b\n"
                                        << "[logging]\nlog_dir = var\n";
  }
  auto cfg = decoysh::load_config(dir / "honeypot.ini");
  EXPECT_EQ(fs::path(cfg.host_key_path), dir / "keys/host");
  EXPECT_EQ(fs::path(cfg.log_dir), dir / "var");
  fs::remove_all(dir);
}

TEST(Config, ShippedExampleLoads) {
  auto cfg = decoysh::load_config(fs::path(DECOYSH_DATA_DIR) / "config.ini.example");
  EXPECT_EQ(cfg.port, 8022);
  EXPECT_TRUE(decoysh::validate_credentials(cfg, "root", "toor"));
}

TEST(Credentials, ExactMembership) {
  auto cfg = with_users({{"root", "toor"}});
  EXPECT_TRUE(decoysh::validate_credentials(cfg, "root", "toor"));
  EXPECT_FALSE(decoysh::validate_credentials(cfg, "root", "TOOR"));
  EXPECT_FALSE(decoysh::validate_credentials(cfg, "admin", "toor"));
  EXPECT_FALSE(decoysh::validate_credentials(cfg, "root", "toor "));
  EXPECT_FALSE(decoysh::validate_credentials(cfg, "root", ""));
}

TEST(Credentials, MembershipByEnumeration) {
  const std::vector<std::string> users = {"root", "admin", "Root", "ubuntu"};
  const std::vector<std::string> passes = {"toor", "admin123", "", "123456", "Toor"};
  auto cfg = with_users({{"root", "toor"}, {"admin", "admin123"}, {"ubuntu", ""}});
  for (const auto& u : users) {
    for (const auto& p : passes) {
      bool member = false;
      for (const auto& c : cfg.credentials) member |= c.username == u && c.password == p;
      EXPECT_EQ(decoysh::validate_credentials(cfg, u, p), member) << u << ":" << p;
    }
  }
}

TEST(Config, Deterministic) {
  const std::string text = "[ssh]\nport = 2022\n[auth]\nusers = root:toor\n[llm]\nmodel = x\n";
  EXPECT_EQ(decoysh::parse_config(text), decoysh::parse_config(text));
}

TEST(Config, RoundTripRandomised) {
  std::mt19937 rng(20231001);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto word = [&](int len) {
    static const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABC0123456789_-.!@$%^";
    std::string w;
    for (int i = 0; i < len; ++i) w += alphabet[pick(0, static_cast<int>(alphabet.size()) - 1)];
    return w;
  };
  for (int trial = 0; trial < 200; ++trial) {
    HoneypotConfig cfg;
    cfg.port = pick(1, 65535);
    cfg.host_key_path = "/etc/decoysh/" + word(6);
    cfg.hostname = word(pick(1, 10));
    cfg.shell_prompt = "[" + word(3) + "] {user}@{host}:{cwd}# ";
    cfg.motd = pick(0, 1) ? "" : "Hello \"there\"\n\tline two\\\n";
    cfg.max_connections_per_ip = pick(1, 100);
    cfg.backend.provider = pick(0, 1) ? decoysh::llm::Provider::local_server
                                      : decoysh::llm::Provider::cloud_api;
    cfg.backend.model_id = word(8);
    cfg.backend.timeout_s = pick(1, 600) / 4.0;
    if (pick(0, 1)) cfg.backend.temperature = pick(0, 20) / 10.0;
    if (pick(0, 1)) cfg.backend.max_tokens = pick(1, 4096);
    cfg.fsync = pick(0, 1);
    for (int i = pick(1, 4); i > 0; --i) cfg.credentials.push_back({word(pick(1, 8)), word(pick(0, 8))});

    const auto reloaded = decoysh::parse_config(decoysh::to_ini(cfg));
    ASSERT_EQ(reloaded, cfg) << decoysh::to_ini(cfg);
    EXPECT_EQ(decoysh::to_ini(reloaded), decoysh::to_ini(cfg));
  }
}
