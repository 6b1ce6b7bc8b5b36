#include <gtest/gtest.h>

#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "decoysh/logstore/logstore.hpp"

namespace fs = std::filesystem;
using namespace decoysh::logstore;
using nlohmann::json;

namespace {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("decoysh_logstore_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

EventRecord command(const std::string& uuid, int seq, std::int64_t at, std::string text = "ls") {
  return {uuid, at, EventKind::command, {"203.0.113.9", 50022}, json{{"seq", seq}, {"command", text}}};
}

EventRecord response(const std::string& uuid, int seq, std::int64_t at) {
  return {uuid,
          at,
          EventKind::response,
          {"203.0.113.9", 50022},
          json{{"seq", seq},
               {"tier", "builtin"},
               {"output", "bin\netc\n"},
               {"exit_code", 0},
               {"latency_ms", 0},
               {"flagged", false},
               {"error", nullptr}}};
}

EventRecord close_record(const std::string& uuid, std::int64_t at) {
  return {uuid,
          at,
          EventKind::session_close,
          {"203.0.113.9", 50022},
          json{{"reason", "exit_command"},
               {"duration_ms", 1200},
               {"command_count", 3},
               {"final_cwd", "/root"}}};
}

StoreOptions options(const fs::path& dir) {
  StoreOptions o;
  o.dir = dir;
  o.on_error = [](const std::string&) {};
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t count_lines(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().filename().string().rfind("honeypot.log", 0) != 0) continue;
    const std::string s = slurp(e.path());
    n += static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
  }
  return n;
}

std::size_t archive_count(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    n += e.path().filename().string().rfind("honeypot.log.", 0) == 0;
  }
  return n;
}

}  // namespace

TEST(LogStore, CommandEventWritesOneRowAndOneLine) {
  TempDir dir;
  {
    LogStore store(options(dir.path()));
    EXPECT_EQ(store.append(command("u-1", 1, 1696151523123, "uname -a")), AppendStatus::ok);
    EXPECT_EQ(store.record_count(), 1u);
  }
  auto records = parse_database(slurp(dir.path() / "honeypot_sessions.db"));
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].payload["command"], "uname -a");
  EXPECT_EQ(slurp(dir.path() / "honeypot.log"),
            "2023-10-01T09:12:03.123Z | u-1 | command | 203.0.113.9:50022 | "
            "{\"command\":\"uname -a\",\"seq\":1}\n");
}

TEST(LogStore, LogLineFormat) {
  EventRecord r = command("abc", 2, 0);
  r.peer = {"2001:db8::1", 22};
  EXPECT_EQ(format_log_line(r),
            "1970-01-01T00:00:00.000Z | abc | command | [2001:db8::1]:22 | "
            "{\"command\":\"ls\",\"seq\":2}\n");
  const std::regex shape(R"(^\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d\.\d{3}Z \| [^|]+ \| \w+ \| \S+ \| \{.*\}\n$)");
  EXPECT_TRUE(std::regex_match(format_log_line(response("x", 1, 1700000000001)), shape));
}

TEST(LogStore, QuerySessionOrderAndUnknown) {
  TempDir dir;
  LogStore store(options(dir.path()));
  for (int i = 1; i <= 3; ++i) {
    store.append(command("s1", i, 1000 * i));
    store.append(command("other", i, 1000 * i));
    store.append(response("s1", i, 1000 * i + 5));
  }
  store.append(close_record("s1", 9000));
  auto recs = store.query_session("s1");
  ASSERT_EQ(recs.size(), 7u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(recs[2 * i].kind, EventKind::command);
    EXPECT_EQ(recs[2 * i + 1].kind, EventKind::response);
    EXPECT_EQ(recs[2 * i].payload["seq"], i + 1);
  }
  EXPECT_EQ(recs.back().kind, EventKind::session_close);
  EXPECT_TRUE(store.query_session("nope").empty());
}

TEST(LogStore, TimestampsNeverGoBackwardsWithinSession) {
  TempDir dir;
  LogStore store(options(dir.path()));
  store.append(command("s", 1, 5000));
  store.append(command("s", 2, 4000));
  store.append(command("t", 1, 10));
  auto recs = store.query_session("s");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1].at_ms, 5000);
  EXPECT_EQ(store.query_session("t")[0].at_ms, 10);
}

TEST(LogStore, RejectsPayloadWithWrongKeys) {
  TempDir dir;
  LogStore store(options(dir.path()));
  EventRecord bad = command("s", 1, 0);
  bad.payload["extra"] = 1;
  EXPECT_NE(store.append(bad), AppendStatus::ok);
  EXPECT_EQ(store.record_count(), 0u);
  EXPECT_THROW(check_payload(bad), std::invalid_argument);
  EXPECT_NO_THROW(check_payload(response("s", 1, 0)));
}

TEST(LogStore, IndexRebuiltOnReopen) {
  TempDir dir;
  {
    LogStore store(options(dir.path()));
    for (int i = 1; i <= 5; ++i) store.append(command("persist", i, i));
  }
  LogStore again(options(dir.path()));
  EXPECT_EQ(again.query_session("persist").size(), 5u);
  again.append(command("persist", 6, 0));
  auto recs = again.query_session("persist");
  ASSERT_EQ(recs.size(), 6u);
  EXPECT_EQ(recs.back().at_ms, 5) << "clamped to the last stored timestamp";
}

TEST(LogStore, ConcurrentAppendsStayIntact) {
  TempDir dir;
  constexpr int kThreads = 8;
  constexpr int kPerThread = 1250;
  {
    StoreOptions o = options(dir.path());
    o.max_log_bytes = 256 * 1024;  // force rotations during the run
    o.max_archives = 1000;
    LogStore store(o);
    std::vector<std::thread> threads;
    std::atomic<int> failures{0};
    for (int t = 0; t < kThreads; ++t) {
      threads.emplace_back([&, t] {
        const std::string uuid = "session-" + std::to_string(t);
        for (int i = 1; i <= kPerThread; ++i) {
          if (store.append(command(uuid, i, i, "cmd " + std::to_string(i))) != AppendStatus::ok) {
            ++failures;
          }
        }
      });
    }
    for (auto& th : threads) th.join();
    EXPECT_EQ(failures, 0);
    EXPECT_EQ(store.record_count(), static_cast<std::size_t>(kThreads * kPerThread));
  }
  auto records = parse_database(slurp(dir.path() / "honeypot_sessions.db"));
  ASSERT_EQ(records.size(), static_cast<std::size_t>(kThreads * kPerThread));
  std::map<std::string, int> next;
  for (const auto& r : records) {
    const int seq = r.payload["seq"];
    ASSERT_EQ(seq, ++next[r.session_uuid]) << r.session_uuid;
    ASSERT_EQ(r.payload["command"], "cmd " + std::to_string(seq));
  }
  EXPECT_EQ(count_lines(dir.path()), static_cast<std::size_t>(kThreads * kPerThread));
  EXPECT_GT(archive_count(dir.path()), 0u);
}

TEST(LogStore, RotationThreshold) {
  TempDir dir;
  const std::size_t line = format_log_line(command("s", 1, 0)).size();
  StoreOptions o = options(dir.path());
  o.max_log_bytes = 3 * line + 1;
  LogStore store(o);
  for (int i = 0; i < 3; ++i) store.append(command("s", 1, 0));
  EXPECT_EQ(archive_count(dir.path()), 0u) << "at max_bytes - 1";
  store.append(command("s", 1, 0));
  EXPECT_EQ(archive_count(dir.path()), 1u);
  EXPECT_EQ(fs::file_size(dir.path() / "honeypot.log"), 0u);
  EXPECT_EQ(store.record_count(), 4u) << "database unaffected";
}

TEST(LogStore, KeepsAtMostNArchives) {
  TempDir dir;
  StoreOptions o = options(dir.path());
  o.max_log_bytes = 1;  // every append rotates
  o.max_archives = 10;
  LogStore store(o);
  std::vector<std::string> first_names;
  for (int i = 0; i < 12; ++i) {
    store.append(command("s", i + 1, i));
    if (i < 2) {
      for (const auto& e : fs::directory_iterator(dir.path())) {
        const auto n = e.path().filename().string();
        if (n.rfind("honeypot.log.", 0) == 0 &&
            std::find(first_names.begin(), first_names.end(), n) == first_names.end()) {
          first_names.push_back(n);
        }
      }
    }
  }
  EXPECT_EQ(archive_count(dir.path()), 10u);
  ASSERT_EQ(first_names.size(), 2u);
  for (const auto& n : first_names) EXPECT_FALSE(fs::exists(dir.path() / n)) << n;
  EXPECT_EQ(count_lines(dir.path()), 10u);
}

TEST(LogStore, ExplicitRotate) {
  TempDir dir;
  LogStore store(options(dir.path()));
  store.append(command("s", 1, 0));
  store.rotate(1 << 20);
  EXPECT_EQ(archive_count(dir.path()), 0u);
  store.rotate(1);
  EXPECT_EQ(archive_count(dir.path()), 1u);
}

TEST(LogStore, TornTailIsDroppedOnOpen) {
  TempDir dir;
  {
    LogStore store(options(dir.path()));
    for (int i = 1; i <= 4; ++i) store.append(command("s", i, i));
  }
  const fs::path db = dir.path() / "honeypot_sessions.db";
  const std::string intact = slurp(db);
  const std::string extra = encode_record(command("s", 5, 5));
  for (std::size_t cut : {std::size_t{1}, std::size_t{7}, extra.size() / 2, extra.size() - 1}) {
    {
      std::ofstream out(db, std::ios::binary | std::ios::trunc);
      out << intact << extra.substr(0, cut);
    }
    LogStore store(options(dir.path()));
    EXPECT_EQ(store.recovered_bytes(), cut);
    EXPECT_EQ(store.query_session("s").size(), 4u);
  }
  EXPECT_EQ(slurp(db), intact);
}

TEST(LogStore, CorruptChecksumTruncatesFromThere) {
  TempDir dir;
  {
    LogStore store(options(dir.path()));
    for (int i = 1; i <= 3; ++i) store.append(command("s", i, i));
  }
  const fs::path db = dir.path() / "honeypot_sessions.db";
  std::string bytes = slurp(db);
  bytes[bytes.size() - 3] ^= 0x20;
  std::ofstream(db, std::ios::binary | std::ios::trunc) << bytes;
  EXPECT_THROW(parse_database(bytes), CorruptDatabase);
  LogStore store(options(dir.path()));
  EXPECT_EQ(store.query_session("s").size(), 2u);
}

TEST(LogStore, RejectsForeignFile) {
  TempDir dir;
  std::ofstream(dir.path() / "honeypot_sessions.db") << "SQLite format 3";
  EXPECT_THROW(LogStore(options(dir.path())), IoError);
}

TEST(LogStore, RoundTripIsByteIdentical) {
  TempDir dir;
  {
    LogStore store(options(dir.path()));
    store.append({"s", 1, EventKind::auth, {"198.51.100.7", 40000},
                  json{{"username", "root"}, {"password", "p\u00e4ss\"\\\n"}, {"method", "password"},
                       {"success", false}, {"reason", "bad credentials"}}});
    store.append(command("s", 1, 2, "echo 'h\u00e9llo' \t \x01"));
    store.append(response("s", 1, 3));
    store.append(close_record("s", 4));
  }
  const std::string bytes = slurp(dir.path() / "honeypot_sessions.db");
  EXPECT_EQ(serialize_database(parse_database(bytes)), bytes);
}

TEST(LogStore, SurvivesKillNine) {
  TempDir dir;
  int pipefd[2];
  ASSERT_EQ(::pipe(pipefd), 0);
  const pid_t child = ::fork();
  ASSERT_GE(child, 0);
  if (child == 0) {
    ::close(pipefd[0]);
    LogStore store(options(dir.path()));
    for (int i = 1;; ++i) {
      if (store.append(command("crash", i, i)) != AppendStatus::ok) ::_exit(3);
      const char ack = 'x';
      if (::write(pipefd[1], &ack, 1) != 1) ::_exit(4);
    }
  }
  ::close(pipefd[1]);
  std::size_t acknowledged = 0;
  char buf[64];
  while (acknowledged < 300) {
    const ssize_t n = ::read(pipefd[0], buf, sizeof buf);
    ASSERT_GT(n, 0);
    acknowledged += static_cast<std::size_t>(n);
  }
  ::kill(child, SIGKILL);
  int status = 0;
  ::waitpid(child, &status, 0);
  while (::read(pipefd[0], buf, sizeof buf) > 0) ++acknowledged;  // acks already in flight
  ::close(pipefd[0]);
  EXPECT_TRUE(WIFSIGNALED(status));

  LogStore store(options(dir.path()));
  const auto recs = store.query_session("crash");
  EXPECT_GE(recs.size(), acknowledged);
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(recs[i].payload["seq"], i + 1);
}

TEST(LogStore, WriteFailureIsReportedNotThrown) {
  TempDir dir;
  const pid_t child = ::fork();
  ASSERT_GE(child, 0);
  if (child == 0) {
    ::signal(SIGXFSZ, SIG_IGN);
    std::vector<std::string> errors;
    StoreOptions o = options(dir.path());
    o.on_error = [&](const std::string& m) { errors.push_back(m); };
    LogStore store(o);
    store.append(command("s", 1, 1));
    rlimit lim{};
    lim.rlim_cur = lim.rlim_max = static_cast<rlim_t>(fs::file_size(store.database_path()) + 100);
    ::setrlimit(RLIMIT_FSIZE, &lim);
    AppendStatus last = AppendStatus::ok;
    for (int i = 2; i < 20 && last == AppendStatus::ok; ++i) last = store.append(command("s", i, i));
    ::_exit(last != AppendStatus::ok && !errors.empty() ? 0 : 1);
  }
  int status = 0;
  ::waitpid(child, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  // whatever reached the file is whole
  EXPECT_NO_THROW(parse_database(slurp(dir.path() / "honeypot_sessions.db")));
}
