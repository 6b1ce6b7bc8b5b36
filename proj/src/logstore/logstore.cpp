#include "decoysh/logstore/logstore.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>
#include <ctime>
#include <iostream>
#include <set>

namespace decoysh::logstore {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "DCYSHDB1";
constexpr std::size_t kHeaderSize = 16;
constexpr std::size_t kRecordHeader = 8;
constexpr std::uint32_t kMaxRecord = 64 * 1024 * 1024;

const std::map<EventKind, std::set<std::string>>& payload_keys() {
  static const std::map<EventKind, std::set<std::string>> keys = {
      {EventKind::auth, {"username", "password", "method", "success", "reason"}},
      {EventKind::command, {"seq", "command"}},
      {EventKind::response,
       {"seq", "tier", "output", "exit_code", "latency_ms", "flagged", "error"}},
      {EventKind::session_open, {"username"}},
      {EventKind::session_close, {"reason", "duration_ms", "command_count", "final_cwd"}},
  };
  return keys;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[at + i]);
  return v;
}

std::uint32_t crc(std::string_view data) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

std::string header_bytes() {
  std::string h(kMagic);
  put_u32(h, kSchemaVersion);
  put_u32(h, 0);
  return h;
}

json to_json(const EventRecord& rec) {
  return json{{"v", kSchemaVersion},
              {"uuid", rec.session_uuid},
              {"at", rec.at_ms},
              {"kind", to_string(rec.kind)},
              {"ip", rec.peer.ip},
              {"port", rec.peer.port},
              {"payload", rec.payload}};
}

EventRecord from_json(const json& j) {
  EventRecord rec;
  if (j.at("v").get<std::uint32_t>() != kSchemaVersion) throw std::runtime_error("schema version");
  rec.session_uuid = j.at("uuid").get<std::string>();
  rec.at_ms = j.at("at").get<std::int64_t>();
  auto kind = parse_kind(j.at("kind").get<std::string>());
  if (!kind) throw std::runtime_error("unknown kind");
  rec.kind = *kind;
  rec.peer.ip = j.at("ip").get<std::string>();
  rec.peer.port = j.at("port").get<std::uint16_t>();
  rec.payload = j.at("payload");
  return rec;
}

// Returns the decoded record at `at` and its total size, or nullopt when the
// bytes there are not a whole, verified record.
std::optional<std::pair<EventRecord, std::size_t>> decode_at(std::string_view bytes,
                                                             std::size_t at) {
  if (bytes.size() - at < kRecordHeader) return std::nullopt;
  const std::uint32_t len = get_u32(bytes, at);
  const std::uint32_t sum = get_u32(bytes, at + 4);
  if (len == 0 || len > kMaxRecord || bytes.size() - at - kRecordHeader < len) return std::nullopt;
  const std::string_view body = bytes.substr(at + kRecordHeader, len);
  if (crc(body) != sum) return std::nullopt;
  try {
    return std::make_pair(from_json(json::parse(body)), kRecordHeader + len);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

bool write_all(int fd, std::string_view data, int& err) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      err = errno;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

std::string archive_stamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
  std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms % 1000));
  return out;
}

}  // namespace

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::auth: return "auth";
    case EventKind::command: return "command";
    case EventKind::response: return "response";
    case EventKind::session_open: return "session_open";
    case EventKind::session_close: return "session_close";
  }
  return "unknown";
}

std::optional<EventKind> parse_kind(std::string_view text) {
  for (auto k : {EventKind::auth, EventKind::command, EventKind::response,
                 EventKind::session_open, EventKind::session_close}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

std::string format_peer(const Peer& peer) {
  if (peer.ip.find(':') != std::string::npos) {
    return "[" + peer.ip + "]:" + std::to_string(peer.port);
  }
  return peer.ip + ":" + std::to_string(peer.port);
}

void check_payload(const EventRecord& rec) {
  if (!rec.payload.is_object()) throw std::invalid_argument("payload must be an object");
  std::set<std::string> have;
  for (const auto& [k, _] : rec.payload.items()) have.insert(k);
  if (have != payload_keys().at(rec.kind)) {
    std::string list;
    for (const auto& k : payload_keys().at(rec.kind)) list += (list.empty() ? "" : ",") + k;
    throw std::invalid_argument(std::string(to_string(rec.kind)) + " payload needs keys {" +
                                list + "}");
  }
}

std::string iso8601_ms(std::int64_t at_ms) {
  std::int64_t secs = at_ms / 1000;
  std::int64_t ms = at_ms % 1000;
  if (ms < 0) {
    ms += 1000;
    --secs;
  }
  std::time_t t = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

std::string format_log_line(const EventRecord& rec) {
  return iso8601_ms(rec.at_ms) + " | " + rec.session_uuid + " | " + std::string(to_string(rec.kind)) +
         " | " + format_peer(rec.peer) + " | " +
         rec.payload.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
}

std::string encode_record(const EventRecord& rec) {
  const std::string body = to_json(rec).dump(-1, ' ', false, json::error_handler_t::replace);
  std::string out;
  out.reserve(kRecordHeader + body.size());
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  put_u32(out, crc(body));
  out += body;
  return out;
}

std::string serialize_database(const std::vector<EventRecord>& records) {
  std::string out = header_bytes();
  for (const auto& r : records) out += encode_record(r);
  return out;
}

ScanResult scan_database(std::string_view bytes) {
  ScanResult result;
  if (bytes.size() < kHeaderSize || bytes.substr(0, kMagic.size()) != kMagic) return result;
  std::size_t at = kHeaderSize;
  while (at < bytes.size()) {
    auto rec = decode_at(bytes, at);
    if (!rec) break;
    result.offsets.push_back(at);
    result.records.push_back(std::move(rec->first));
    at += rec->second;
  }
  result.valid_bytes = at;
  return result;
}

std::vector<EventRecord> parse_database(std::string_view bytes) {
  if (bytes.size() < kHeaderSize || bytes.substr(0, kMagic.size()) != kMagic) {
    throw CorruptDatabase("bad header", 0);
  }
  if (get_u32(bytes, kMagic.size()) != kSchemaVersion) {
    throw CorruptDatabase("unsupported schema version", kMagic.size());
  }
  ScanResult scan = scan_database(bytes);
  if (scan.valid_bytes != bytes.size()) throw CorruptDatabase("bad record", scan.valid_bytes);
  // re-encoding must reproduce the bytes, which rules out non-canonical JSON
  for (std::size_t i = 0; i < scan.records.size(); ++i) {
    const std::string again = encode_record(scan.records[i]);
    if (bytes.compare(scan.offsets[i], again.size(), again) != 0) {
      throw CorruptDatabase("non-canonical record", scan.offsets[i]);
    }
  }
  return std::move(scan.records);
}

// ---- LogStore ----

LogStore::LogStore(StoreOptions options) : options_(std::move(options)) {
  std::error_code ec;
  fs::create_directories(options_.dir, ec);
  if (ec) throw IoError("cannot create log directory " + options_.dir.string() + ": " + ec.message());

  const fs::path db = database_path();
  db_fd_ = ::open(db.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0600);
  if (db_fd_ < 0) throw IoError("cannot open " + db.string() + ": " + std::strerror(errno));

  std::string bytes;
  {
    std::array<char, 1 << 16> buf{};
    ssize_t n;
    while ((n = ::read(db_fd_, buf.data(), buf.size())) > 0) bytes.append(buf.data(), n);
    if (n < 0) throw IoError("cannot read " + db.string() + ": " + std::strerror(errno));
  }
  if (bytes.empty()) {
    bytes = header_bytes();
    int err = 0;
    if (!write_all(db_fd_, bytes, err) || ::fsync(db_fd_) != 0) {
      throw IoError("cannot initialise " + db.string() + ": " + std::strerror(err ? err : errno));
    }
  } else if (bytes.size() < kHeaderSize || bytes.compare(0, kMagic.size(), kMagic) != 0) {
    if (bytes.size() < kHeaderSize && std::string_view(kMagic).substr(0, bytes.size()) == bytes) {
      // crashed while writing the header
      bytes = header_bytes();
      if (::ftruncate(db_fd_, 0) != 0 || ::lseek(db_fd_, 0, SEEK_SET) < 0) {
        throw IoError("cannot reset " + db.string());
      }
      int err = 0;
      if (!write_all(db_fd_, bytes, err)) throw IoError("cannot initialise " + db.string());
    } else {
      ::close(db_fd_);
      throw IoError(db.string() + " is not a decoysh session database");
    }
  } else if (get_u32(bytes, kMagic.size()) != kSchemaVersion) {
    ::close(db_fd_);
    throw IoError(db.string() + ": unsupported schema version");
  }

  ScanResult scan = scan_database(bytes);
  if (scan.valid_bytes < bytes.size()) {
    recovered_bytes_ = bytes.size() - scan.valid_bytes;
    if (::ftruncate(db_fd_, static_cast<off_t>(scan.valid_bytes)) != 0) {
      throw IoError("cannot truncate torn tail of " + db.string());
    }
    ::fsync(db_fd_);
    report("recovered " + db.string() + ": dropped " + std::to_string(recovered_bytes_) +
           " bytes of incomplete record data");
  }
  db_size_ = scan.valid_bytes;
  ::lseek(db_fd_, static_cast<off_t>(db_size_), SEEK_SET);
  for (std::size_t i = 0; i < scan.records.size(); ++i) {
    const auto& r = scan.records[i];
    index_[r.session_uuid].push_back(scan.offsets[i]);
    auto& last = last_at_[r.session_uuid];
    last = std::max(last, r.at_ms);
  }
  records_ = scan.records.size();

  open_log();
  writer_ = std::thread([this] { writer_loop(); });
}

LogStore::~LogStore() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  space_cv_.notify_all();
  if (writer_.joinable()) writer_.join();
  if (db_fd_ >= 0) ::close(db_fd_);
  if (log_fd_ >= 0) ::close(log_fd_);
}

void LogStore::report(const std::string& message) {
  if (options_.on_error) {
    options_.on_error(message);
  } else {
    std::cerr << "decoysh logstore: " << message << "\n";
  }
}

void LogStore::open_log() {
  const fs::path path = log_path();
  log_fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0600);
  if (log_fd_ < 0) {
    report("cannot open " + path.string() + ": " + std::strerror(errno));
    log_size_ = 0;
    return;
  }
  struct stat st {};
  log_size_ = ::fstat(log_fd_, &st) == 0 ? static_cast<std::uint64_t>(st.st_size) : 0;
}

AppendStatus LogStore::submit(Job job) {
  std::unique_lock lock(mu_);
  space_cv_.wait(lock, [&] { return stopping_ || queue_.size() < options_.queue_capacity; });
  if (stopping_) return AppendStatus::closed;
  if (job.record) {
    auto& last = last_at_[job.record->session_uuid];
    job.record->at_ms = std::max(job.record->at_ms, last);
    last = job.record->at_ms;
  }
  const std::uint64_t ticket = next_ticket_++;
  job.ticket = ticket;
  queue_.push_back(std::move(job));
  queue_cv_.notify_one();
  done_cv_.wait(lock, [&] { return completed_ticket_ >= ticket; });
  auto it = failures_.find(ticket);
  if (it == failures_.end()) return AppendStatus::ok;
  const AppendStatus status = it->second;
  failures_.erase(it);
  return status;
}

AppendStatus LogStore::append(EventRecord rec) {
  try {
    check_payload(rec);
  } catch (const std::invalid_argument& e) {
    report(std::string("rejected record: ") + e.what());
    return AppendStatus::io_error;
  }
  Job job;
  job.record = std::move(rec);
  return submit(std::move(job));
}

void LogStore::rotate(std::size_t max_bytes) {
  Job job;
  job.rotate_threshold = std::max<std::size_t>(max_bytes, 1);
  submit(std::move(job));
}

void LogStore::writer_loop() {
  while (true) {
    std::vector<Job> batch;
    {
      std::unique_lock lock(mu_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty() && stopping_) return;
      while (!queue_.empty()) {
        batch.push_back(std::move(queue_.front()));
        queue_.pop_front();
      }
    }
    space_cv_.notify_all();
    write_batch(batch);
  }
}

void LogStore::write_batch(std::vector<Job>& batch) {
  std::string db_bytes;
  std::string log_bytes;
  std::vector<std::pair<std::string, std::uint64_t>> placed;
  std::size_t rotate_threshold = 0;
  for (const auto& job : batch) {
    if (!job.record) {
      rotate_threshold = job.rotate_threshold;
      continue;
    }
    placed.emplace_back(job.record->session_uuid, db_size_ + db_bytes.size());
    db_bytes += encode_record(*job.record);
    log_bytes += format_log_line(*job.record);
  }

  AppendStatus status = AppendStatus::ok;
  if (!db_bytes.empty()) {
    int err = 0;
    bool ok = write_all(db_fd_, db_bytes, err);
    if (ok && options_.fsync && ::fdatasync(db_fd_) != 0) {
      ok = false;
      err = errno;
    }
    if (!ok) {
      status = err == ENOSPC || err == EDQUOT ? AppendStatus::storage_full : AppendStatus::io_error;
      report("database write failed: " + std::string(std::strerror(err)));
      // drop whatever part of the batch reached the file so no torn record stays
      if (::ftruncate(db_fd_, static_cast<off_t>(db_size_)) == 0) {
        ::lseek(db_fd_, static_cast<off_t>(db_size_), SEEK_SET);
      }
    } else {
      db_size_ += db_bytes.size();
    }
  }

  if (status == AppendStatus::ok && !log_bytes.empty()) {
    if (log_fd_ < 0) open_log();
    int err = 0;
    if (log_fd_ >= 0 && write_all(log_fd_, log_bytes, err)) {
      log_size_ += log_bytes.size();
    } else if (log_fd_ >= 0) {
      report("text log write failed: " + std::string(std::strerror(err)));
    }
    maybe_rotate(options_.max_log_bytes);
  }
  if (rotate_threshold != 0) maybe_rotate(rotate_threshold);

  {
    std::lock_guard lock(mu_);
    if (status == AppendStatus::ok) {
      for (const auto& [uuid, offset] : placed) index_[uuid].push_back(offset);
      records_ += placed.size();
    }
    for (const auto& job : batch) {
      if (job.record && status != AppendStatus::ok) failures_[job.ticket] = status;
      completed_ticket_ = std::max(completed_ticket_, job.ticket);
    }
  }
  done_cv_.notify_all();
}

void LogStore::maybe_rotate(std::size_t max_bytes) {
  if (log_size_ < max_bytes) return;
  const fs::path active = log_path();
  const std::string base = active.filename().string() + ".";
  const std::string stamp = archive_stamp();
  fs::path target = options_.dir / (base + stamp);
  for (int n = 1; fs::exists(target) && n < 1000; ++n) {
    char suffix[8];
    std::snprintf(suffix, sizeof suffix, "-%02d", n);
    target = options_.dir / (base + stamp + suffix);
  }
  std::error_code ec;
  fs::rename(active, target, ec);
  if (ec) {
    report("log rotation failed, will retry: " + ec.message());
    return;
  }
  if (log_fd_ >= 0) ::close(log_fd_);
  log_fd_ = -1;
  open_log();

  std::vector<fs::path> archives;
  for (const auto& entry : fs::directory_iterator(options_.dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind(base, 0) == 0) archives.push_back(entry.path());
  }
  std::sort(archives.begin(), archives.end());
  while (archives.size() > options_.max_archives) {
    fs::remove(archives.front(), ec);
    if (ec) report("cannot prune " + archives.front().string() + ": " + ec.message());
    archives.erase(archives.begin());
  }
}

std::vector<EventRecord> LogStore::query_session(const std::string& uuid) const {
  std::vector<std::uint64_t> offsets;
  {
    std::lock_guard lock(mu_);
    auto it = index_.find(uuid);
    if (it == index_.end()) return {};
    offsets = it->second;
  }
  std::vector<EventRecord> out;
  for (std::uint64_t off : offsets) {
    char head[kRecordHeader];
    if (::pread(db_fd_, head, sizeof head, static_cast<off_t>(off)) !=
        static_cast<ssize_t>(sizeof head)) {
      break;
    }
    const std::uint32_t len = get_u32(std::string_view(head, sizeof head), 0);
    std::string bytes(head, sizeof head);
    bytes.resize(kRecordHeader + len);
    if (::pread(db_fd_, bytes.data() + kRecordHeader, len, static_cast<off_t>(off + kRecordHeader)) !=
        static_cast<ssize_t>(len)) {
      break;
    }
    if (auto rec = decode_at(bytes, 0)) out.push_back(std::move(rec->first));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.at_ms < b.at_ms; });
  return out;
}

std::vector<std::string> LogStore::sessions() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [uuid, _] : index_) out.push_back(uuid);
  return out;
}

std::size_t LogStore::record_count() const {
  std::lock_guard lock(mu_);
  return records_;
}

}  // namespace decoysh::logstore
