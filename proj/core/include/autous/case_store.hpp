// Copyright 2026 The autous Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Embedded case store: one append-only JSON-lines log per case under
// <dir>/cases, compacted to its latest record every `compact_every` appends.
// A lock file makes one process the owner of the directory.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace autous::service {

/// 26-character Crockford base32 id: 48-bit millisecond time then 80 random
/// bits. Ids from one generator are strictly increasing.
class UlidGenerator {
 public:
  UlidGenerator();
  std::string Next();

 private:
  std::mutex mu_;
  std::uint64_t last_ms_ = 0;
  std::uint64_t rand_hi_ = 0;  // top 16 of the 80 random bits
  std::uint64_t rand_lo_ = 0;  // low 64
  std::mt19937_64 engine_;
};

bool IsValidCaseId(const std::string& id);

struct StoreRecord {
  std::string id;
  std::uint64_t revision = 0;
  nlohmann::json payload;
};

class CaseStore {
 public:
  /// Opens (creating if needed) the store and replays every log. Throws
  /// ConflictError if another process holds the directory.
  explicit CaseStore(std::filesystem::path dir, int compact_every = 64);
  ~CaseStore();
  CaseStore(const CaseStore&) = delete;
  CaseStore& operator=(const CaseStore&) = delete;

  std::optional<StoreRecord> Get(const std::string& id) const;

  /// Writes revision 1. Throws ConflictError if the id exists.
  StoreRecord Create(const std::string& id, nlohmann::json payload);

  /// Appends payload as revision expected_revision + 1. Throws ConflictError
  /// when the stored revision differs and NotFoundError for unknown ids.
  StoreRecord PutConditional(const std::string& id, std::uint64_t expected_revision, nlohmann::json payload);

  /// All records in id order.
  std::vector<StoreRecord> List() const;

  /// Rewrites a case log as its latest record only.
  void Compact(const std::string& id);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path blob_dir() const { return dir_ / "blobs"; }

 private:
  struct Entry {
    StoreRecord record;
    int appended = 0;
  };

  std::filesystem::path LogPath(const std::string& id) const;
  void Append(const std::string& id, const StoreRecord& record);
  void CompactLocked(const std::string& id, Entry& entry);

  std::filesystem::path dir_;
  int compact_every_;
  int lock_fd_ = -1;
  mutable std::mutex mu_;
  std::map<std::string, Entry> entries_;
};

}  // namespace autous::service
