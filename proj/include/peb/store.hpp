#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "peb/digest.hpp"
#include "peb/pooling.hpp"

namespace peb {

struct CacheKey {
  std::string model_id;
  std::string template_id;
  int layer = -1;
  PoolRule rule = PoolRule::LastToken;
  bool normalize = false;
  Sha256 sentence_digest{};

  static CacheKey make(const Provenance& provenance, std::string_view sentence);
  // SHA-256 over a canonical encoding of every field.
  Sha256 digest() const;

  bool operator==(const CacheKey&) const = default;
};

struct CacheEntry {
  CacheKey key;
  std::vector<float> vector;
  std::int64_t created_at = 0;  // unix seconds
  std::string fingerprint;
};

struct ScanFilter {
  std::optional<std::string> model_id;
  std::optional<std::string> template_id;
  std::optional<int> layer;

  bool matches(const CacheKey& key) const;
};

struct StoreStats {
  std::size_t records = 0;
  std::uint64_t log_bytes = 0;
  std::uint64_t skipped_tail_bytes = 0;
  std::size_t corrupt_records = 0;
  std::map<std::string, std::size_t> per_model;
  std::map<std::string, std::size_t> per_template;
};

struct VerifyResult {
  std::size_t good = 0;
  std::size_t corrupt = 0;
  std::uint64_t truncated_tail_bytes = 0;
  bool index_consistent = true;
  std::vector<std::string> problems;

  bool ok() const { return corrupt == 0 && truncated_tail_bytes == 0 && index_consistent; }
};

// Content-addressed embedding cache. On disk: an append-only log of
// checksummed records (records.log) plus an index of digest -> offset
// (index.tsv) that is rebuilt from the log whenever it is stale and is
// replaced by rename. Vectors are little-endian float32.
//
// One writer per directory (enforced with a lock file); any number of
// read-only instances, each working from the snapshot taken when opened.
class EmbeddingStore {
 public:
  enum class Mode { ReadOnly, ReadWrite };

  // Throws StoreIo (missing directory in read-only mode, lock held).
  EmbeddingStore(std::filesystem::path dir, Mode mode);
  ~EmbeddingStore();

  EmbeddingStore(const EmbeddingStore&) = delete;
  EmbeddingStore& operator=(const EmbeddingStore&) = delete;

  // Throws CorruptRecord if the stored record fails its checksum.
  std::optional<std::vector<float>> get(const CacheKey& key) const;

  // No-op when an identical vector is already stored. Throws
  // ConflictingEntry, DimensionMismatch, StoreIo.
  void put(const CacheEntry& entry);

  // Visits records in log order until the callback returns false.
  void scan(const ScanFilter& filter, const std::function<bool(const CacheEntry&)>& visit) const;

  // Writes the index now (also done on destruction for writers).
  void flush_index();

  std::size_t size() const;
  StoreStats stats() const;
  VerifyResult verify() const;

  // Messages about skipped or damaged records seen while opening.
  const std::vector<std::string>& warnings() const { return warnings_; }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  struct Located {
    std::uint64_t offset;
    std::uint32_t length;
  };

  void load();
  void rebuild_from_log(std::uint64_t log_size);
  void warn(std::string message);

  std::filesystem::path dir_;
  Mode mode_;
  int lock_fd_ = -1;
  std::map<Sha256, Located> index_;
  std::vector<Sha256> order_;  // log order
  std::map<std::string, std::size_t> dims_;  // per model_id
  std::uint64_t log_end_ = 0;
  std::uint64_t skipped_tail_ = 0;
  std::size_t corrupt_ = 0;
  bool index_dirty_ = false;
  std::vector<std::string> warnings_;
  mutable std::ifstream reader_;
  mutable std::mutex mu_;
};

}  // namespace peb
