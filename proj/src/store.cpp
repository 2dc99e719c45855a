#include "peb/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <bit>
#include <charconv>
#include <chrono>
#include <cstring>
#include <iostream>
#include <sstream>

#include "peb/error.hpp"
#include "text_util.hpp"

namespace peb {
namespace fs = std::filesystem;
namespace {

constexpr char kMagic[4] = {'P', 'E', 'B', '1'};
constexpr std::size_t kHeader = 8;   // magic + payload length
constexpr std::size_t kTrailer = 4;  // crc32
constexpr std::string_view kIndexHeader = "peb-index 1";

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) {
    const auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::int64_t i64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return static_cast<std::int64_t>(v);
  }
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(Errc::CorruptRecord, "record payload too short");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string encode_payload(const CacheEntry& e) {
  Writer w;
  const auto digest = e.key.digest();
  w.bytes(digest.data(), digest.size());
  w.str(e.key.model_id);
  w.str(e.key.template_id);
  w.u32(static_cast<std::uint32_t>(e.key.layer));
  w.u8(static_cast<std::uint8_t>(e.key.rule));
  w.u8(e.key.normalize ? 1 : 0);
  w.bytes(e.key.sentence_digest.data(), e.key.sentence_digest.size());
  w.i64(e.created_at);
  w.str(e.fingerprint);
  w.u32(static_cast<std::uint32_t>(e.vector.size()));
  for (float f : e.vector) w.f32(f);
  return std::move(w.buffer());
}

CacheEntry decode_payload(std::string_view payload) {
  Reader r(payload);
  Sha256 stored{};
  r.bytes(stored.data(), stored.size());
  CacheEntry e;
  e.key.model_id = r.str();
  e.key.template_id = r.str();
  e.key.layer = static_cast<std::int32_t>(r.u32());
  const auto rule = r.u8();
  if (rule > 1) throw Error(Errc::CorruptRecord, "bad pooling rule byte");
  e.key.rule = static_cast<PoolRule>(rule);
  e.key.normalize = r.u8() != 0;
  r.bytes(e.key.sentence_digest.data(), e.key.sentence_digest.size());
  e.created_at = r.i64();
  e.fingerprint = r.str();
  const auto dim = r.u32();
  if (dim > (payload.size() / 4)) throw Error(Errc::CorruptRecord, "bad dimension");
  e.vector.resize(dim);
  for (auto& f : e.vector) f = r.f32();
  if (!r.done()) throw Error(Errc::CorruptRecord, "trailing bytes in record");
  if (e.key.digest() != stored) throw Error(Errc::CorruptRecord, "key digest mismatch");
  return e;
}

std::uint32_t le32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::string frame(const std::string& payload) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload.data(), payload.size());
  w.u32(crc32(payload));
  return std::move(w.buffer());
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

template <typename Fn>
void scan_log(std::string_view log, Fn&& on_record, std::uint64_t& valid_end,
              std::uint64_t& tail_bytes, std::size_t& corrupt,
              const std::function<void(std::string)>& warn) {
  std::size_t pos = 0;
  while (pos < log.size()) {
    const auto remaining = log.size() - pos;
    if (remaining < kHeader + kTrailer || std::memcmp(log.data() + pos, kMagic, 4) != 0) {
      break;
    }
    const auto len = le32(log.data() + pos + 4);
    if (len > remaining - kHeader - kTrailer) break;
    const auto payload = log.substr(pos + kHeader, len);
    const auto crc = le32(log.data() + pos + kHeader + len);
    const auto record_len = kHeader + len + kTrailer;
    if (crc != crc32(payload)) {
      ++corrupt;
      warn("checksum mismatch in record at offset " + std::to_string(pos) + "; skipped");
    } else {
      try {
        on_record(static_cast<std::uint64_t>(pos), static_cast<std::uint32_t>(record_len),
                  decode_payload(payload));
      } catch (const Error& e) {
        ++corrupt;
        warn("undecodable record at offset " + std::to_string(pos) + ": " + e.what());
      }
    }
    pos += record_len;
  }
  valid_end = pos;
  tail_bytes = log.size() - pos;
  if (tail_bytes > 0) {
    warn("truncated or unreadable tail of " + std::to_string(tail_bytes) +
         " bytes at offset " + std::to_string(pos) + "; skipped");
  }
}

}  // namespace

CacheKey CacheKey::make(const Provenance& p, std::string_view sentence) {
  return CacheKey{p.model_id, p.template_id, p.layer, p.rule, p.normalize, sha256(sentence)};
}

Sha256 CacheKey::digest() const {
  std::string canon = "peb-key-v1";
  canon += '\0';
  canon += model_id;
  canon += '\0';
  canon += template_id;
  canon += '\0';
  canon += std::to_string(layer);
  canon += '\0';
  canon += pool_rule_name(rule);
  canon += '\0';
  canon += normalize ? '1' : '0';
  canon += '\0';
  canon += to_hex(sentence_digest);
  return sha256(canon);
}

bool ScanFilter::matches(const CacheKey& key) const {
  return (!model_id || *model_id == key.model_id) &&
         (!template_id || *template_id == key.template_id) && (!layer || *layer == key.layer);
}

EmbeddingStore::EmbeddingStore(fs::path dir, Mode mode) : dir_(std::move(dir)), mode_(mode) {
  if (mode_ == Mode::ReadWrite) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(Errc::StoreIo, "cannot create " + dir_.string() + ": " + ec.message());
    const auto lock_path = dir_ / "lock";
    lock_fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (lock_fd_ < 0) throw Error(Errc::StoreIo, "cannot open " + lock_path.string());
    if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(lock_fd_);
      lock_fd_ = -1;
      throw Error(Errc::StoreIo, dir_.string() + " is locked by another writer");
    }
  } else if (!fs::is_directory(dir_)) {
    throw Error(Errc::StoreIo, "no cache at " + dir_.string());
  }
  load();
}

EmbeddingStore::~EmbeddingStore() {
  if (mode_ == Mode::ReadWrite) {
    try {
      flush_index();
    } catch (const std::exception& e) {
      std::cerr << "warning: " << e.what() << '\n';
    }
    if (lock_fd_ >= 0) ::close(lock_fd_);
  }
}

void EmbeddingStore::warn(std::string message) {
  std::cerr << "warning: cache " << dir_.string() << ": " << message << '\n';
  warnings_.push_back(std::move(message));
}

void EmbeddingStore::load() {
  const auto log_path = dir_ / "records.log";
  std::error_code ec;
  const std::uint64_t log_size = fs::exists(log_path) ? fs::file_size(log_path, ec) : 0;

  bool loaded = false;
  const auto index_text = read_all(dir_ / "index.tsv");
  const auto lines = text::split_lines(index_text);
  if (!lines.empty() && lines[0] == std::string(kIndexHeader) + " " + std::to_string(log_size)) {
    loaded = true;
    for (std::size_t i = 1; i < lines.size() && loaded; ++i) {
      const auto f = text::split(lines[i], '\t');
      Sha256 digest{};
      std::uint64_t offset = 0;
      std::uint32_t length = 0;
      std::size_t dim = 0;
      auto num = [](std::string_view s, auto& out) {
        const auto [p, e] = std::from_chars(s.data(), s.data() + s.size(), out);
        return e == std::errc() && p == s.data() + s.size();
      };
      if (f.size() != 5 || !from_hex(f[0], digest) || !num(f[1], offset) || !num(f[2], length) ||
          !num(f[3], dim) || offset + length > log_size) {
        loaded = false;
        break;
      }
      index_.emplace(digest, Located{offset, length});
      order_.push_back(digest);
      dims_.emplace(std::string(f[4]), dim);
    }
    if (loaded) {
      log_end_ = log_size;
    } else {
      index_.clear();
      order_.clear();
      dims_.clear();
    }
  }
  if (!loaded) rebuild_from_log(log_size);

  if (mode_ == Mode::ReadWrite && skipped_tail_ > 0) {
    fs::resize_file(log_path, log_end_, ec);
    if (ec) throw Error(Errc::StoreIo, "cannot trim " + log_path.string() + ": " + ec.message());
    warn("trimmed log to " + std::to_string(log_end_) + " bytes before appending");
    index_dirty_ = true;
  }
  if (fs::exists(log_path)) reader_.open(log_path, std::ios::binary);
}

void EmbeddingStore::rebuild_from_log(std::uint64_t log_size) {
  const auto log = read_all(dir_ / "records.log");
  std::uint64_t end = 0;
  scan_log(
      std::string_view(log).substr(0, log_size),
      [&](std::uint64_t offset, std::uint32_t length, CacheEntry e) {
        const auto digest = e.key.digest();
        if (index_.emplace(digest, Located{offset, length}).second) {
          order_.push_back(digest);
          dims_.emplace(e.key.model_id, e.vector.size());
        }
      },
      end, skipped_tail_, corrupt_, [this](std::string m) { warn(std::move(m)); });
  log_end_ = end;
  index_dirty_ = true;
}

std::optional<std::vector<float>> EmbeddingStore::get(const CacheKey& key) const {
  std::lock_guard lock(mu_);
  const auto it = index_.find(key.digest());
  if (it == index_.end()) return std::nullopt;
  const auto [offset, length] = it->second;
  std::string record(length, '\0');
  reader_.clear();
  reader_.seekg(static_cast<std::streamoff>(offset));
  if (!reader_.read(record.data(), length)) {
    throw Error(Errc::CorruptRecord, "cannot read record at offset " + std::to_string(offset));
  }
  if (std::memcmp(record.data(), kMagic, 4) != 0 || le32(record.data() + 4) + kHeader + kTrailer != length) {
    throw Error(Errc::CorruptRecord, "bad frame at offset " + std::to_string(offset));
  }
  const auto payload = std::string_view(record).substr(kHeader, length - kHeader - kTrailer);
  if (le32(record.data() + length - kTrailer) != crc32(payload)) {
    throw Error(Errc::CorruptRecord, "checksum mismatch at offset " + std::to_string(offset));
  }
  auto entry = decode_payload(payload);
  if (entry.key != key) throw Error(Errc::CorruptRecord, "key mismatch at offset " + std::to_string(offset));
  return std::move(entry.vector);
}

void EmbeddingStore::put(const CacheEntry& entry) {
  if (mode_ != Mode::ReadWrite) throw Error(Errc::StoreIo, "store opened read-only");
  if (const auto existing = get(entry.key)) {
    const bool same = existing->size() == entry.vector.size() &&
                      std::memcmp(existing->data(), entry.vector.data(),
                                  existing->size() * sizeof(float)) == 0;
    if (same) return;
    throw Error(Errc::ConflictingEntry, "different vector already stored for " +
                                            entry.key.template_id + " / " + to_hex(entry.key.sentence_digest));
  }
  std::lock_guard lock(mu_);
  if (const auto d = dims_.find(entry.key.model_id); d != dims_.end() && d->second != entry.vector.size()) {
    throw Error(Errc::DimensionMismatch, "model " + entry.key.model_id + " stores " +
                                             std::to_string(d->second) + "-d vectors, got " +
                                             std::to_string(entry.vector.size()));
  }
  if (entry.key.model_id.find_first_of("\t\n\r") != std::string::npos) {
    throw Error(Errc::StoreIo, "model id contains control whitespace");
  }
  const auto bytes = frame(encode_payload(entry));
  {
    std::ofstream out(dir_ / "records.log", std::ios::binary | std::ios::app);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(Errc::StoreIo, "append to records.log failed");
  }
  const auto digest = entry.key.digest();
  index_.emplace(digest, Located{log_end_, static_cast<std::uint32_t>(bytes.size())});
  order_.push_back(digest);
  dims_.emplace(entry.key.model_id, entry.vector.size());
  log_end_ += bytes.size();
  index_dirty_ = true;
  if (!reader_.is_open()) reader_.open(dir_ / "records.log", std::ios::binary);
}

void EmbeddingStore::scan(const ScanFilter& filter,
                          const std::function<bool(const CacheEntry&)>& visit) const {
  const auto log = read_all(dir_ / "records.log");
  std::uint64_t end = 0, tail = 0;
  std::size_t corrupt = 0;
  bool stop = false;
  scan_log(
      std::string_view(log).substr(0, std::min<std::uint64_t>(log.size(), log_end_)),
      [&](std::uint64_t, std::uint32_t, CacheEntry e) {
        if (!stop && filter.matches(e.key)) stop = !visit(e);
      },
      end, tail, corrupt, [](std::string) {});
}

void EmbeddingStore::flush_index() {
  std::lock_guard lock(mu_);
  if (mode_ != Mode::ReadWrite || !index_dirty_) return;
  std::string out = std::string(kIndexHeader) + " " + std::to_string(log_end_) + "\n";
  for (const auto& digest : order_) {
    const auto& loc = index_.at(digest);
    out += to_hex(digest) + '\t' + std::to_string(loc.offset) + '\t' + std::to_string(loc.length);
    // dimension and model id, recovered from the record itself
    std::string record(loc.length, '\0');
    reader_.clear();
    reader_.seekg(static_cast<std::streamoff>(loc.offset));
    reader_.read(record.data(), loc.length);
    const auto e = decode_payload(std::string_view(record).substr(kHeader, loc.length - kHeader - kTrailer));
    out += '\t' + std::to_string(e.vector.size()) + '\t' + e.key.model_id + '\n';
  }
  const auto tmp = dir_ / "index.tsv.tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f << out;
    f.flush();
    if (!f) throw Error(Errc::StoreIo, "cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, dir_ / "index.tsv", ec);
  if (ec) throw Error(Errc::StoreIo, "cannot replace index: " + ec.message());
  index_dirty_ = false;
}

std::size_t EmbeddingStore::size() const {
  std::lock_guard lock(mu_);
  return index_.size();
}

StoreStats EmbeddingStore::stats() const {
  StoreStats s;
  s.records = size();
  s.log_bytes = log_end_ + skipped_tail_;
  s.skipped_tail_bytes = skipped_tail_;
  s.corrupt_records = corrupt_;
  scan({}, [&](const CacheEntry& e) {
    ++s.per_model[e.key.model_id];
    ++s.per_template[e.key.template_id];
    return true;
  });
  return s;
}

VerifyResult EmbeddingStore::verify() const {
  VerifyResult r;
  const auto log = read_all(dir_ / "records.log");
  std::uint64_t end = 0;
  std::map<Sha256, std::uint64_t> seen;
  scan_log(
      log,
      [&](std::uint64_t offset, std::uint32_t, CacheEntry e) {
        ++r.good;
        seen.emplace(e.key.digest(), offset);
      },
      end, r.truncated_tail_bytes, r.corrupt, [&](std::string m) { r.problems.push_back(std::move(m)); });
  std::lock_guard lock(mu_);
  for (const auto& [digest, loc] : index_) {
    const auto it = seen.find(digest);
    if (it == seen.end() || it->second != loc.offset) {
      r.index_consistent = false;
      r.problems.push_back("index entry " + to_hex(digest) + " does not match the log");
    }
  }
  const auto index_text = read_all(dir_ / "index.tsv");
  const auto lines = text::split_lines(index_text);
  if (!lines.empty() && lines[0] != std::string(kIndexHeader) + " " + std::to_string(log.size())) {
    r.problems.push_back("index.tsv is stale; it will be rebuilt by the next writer");
  }
  return r;
}

}  // namespace peb
