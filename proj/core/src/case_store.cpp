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

#include "autous/case_store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <random>

#include "autous/error.hpp"
#include "autous/media_io.hpp"

namespace autous::service {
namespace {

constexpr char kCrockford[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";

std::string SysError(const std::string& what) { return what + ": " + std::strerror(errno); }

void WriteAll(int fd, const std::string& data, const std::filesystem::path& path) {
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(SysError("write " + path.string()));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

std::string EncodeLine(const StoreRecord& r) {
  nlohmann::json j = {{"rev", r.revision}, {"payload", r.payload}};
  return j.dump() + "\n";
}

}  // namespace

UlidGenerator::UlidGenerator() {
  std::random_device rd;
  std::seed_seq seq{rd(), rd(), rd(), rd()};
  engine_.seed(seq);
}

std::string UlidGenerator::Next() {
  std::lock_guard lock(mu_);
  std::uint64_t ms = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count());
  if (ms <= last_ms_) {
    ms = last_ms_;
    if (++rand_lo_ == 0) rand_hi_ = (rand_hi_ + 1) & 0xFFFF;
  } else {
    rand_lo_ = engine_();
    rand_hi_ = engine_() & 0x7FFF;  // headroom for increments
  }
  last_ms_ = ms;

  std::string out(26, '0');
  std::uint64_t t = ms & ((std::uint64_t{1} << 48) - 1);
  for (int i = 9; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kCrockford[t & 31];
    t >>= 5;
  }
  // 80 random bits = rand_hi_ (16) : rand_lo_ (64), emitted as 16 symbols.
  std::uint64_t lo = rand_lo_;
  std::uint64_t hi = rand_hi_;
  for (int i = 25; i >= 10; --i) {
    out[static_cast<std::size_t>(i)] = kCrockford[lo & 31];
    lo = (lo >> 5) | ((hi & 31) << 59);
    hi >>= 5;
  }
  return out;
}

bool IsValidCaseId(const std::string& id) {
  if (id.size() != 26) return false;
  for (char c : id) {
    if (std::strchr(kCrockford, c) == nullptr || c == '\0') return false;
  }
  return id[0] <= '7';
}

CaseStore::CaseStore(std::filesystem::path dir, int compact_every)
    : dir_(std::move(dir)), compact_every_(compact_every < 1 ? 1 : compact_every) {
  std::error_code ec;
  std::filesystem::create_directories(dir_ / "cases", ec);
  if (ec) throw IoError("cannot create store directory " + dir_.string() + ": " + ec.message());
  std::filesystem::create_directories(blob_dir(), ec);

  std::filesystem::path lock_path = dir_ / "store.lock";
  lock_fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) throw IoError(SysError("open " + lock_path.string()));
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw ConflictError("case store " + dir_.string() + " is owned by another process");
  }

  for (const auto& file : std::filesystem::directory_iterator(dir_ / "cases")) {
    if (file.path().extension() != ".jsonl") continue;
    std::string id = file.path().stem().string();
    std::ifstream in(file.path(), std::ios::binary);
    std::string line;
    Entry entry;
    bool have = false;
    bool torn = false;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("rev") || !j.contains("payload")) {
        torn = true;
        continue;
      }
      std::uint64_t rev = j["rev"].get<std::uint64_t>();
      if (have && rev <= entry.record.revision) {
        throw DecodeError("case log " + file.path().string() + " has non-increasing revision " + std::to_string(rev));
      }
      entry.record = {id, rev, std::move(j["payload"])};
      ++entry.appended;
      have = true;
    }
    if (!have) continue;
    auto& stored = entries_[id] = std::move(entry);
    if (torn) CompactLocked(id, stored);
  }
}

CaseStore::~CaseStore() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

std::filesystem::path CaseStore::LogPath(const std::string& id) const { return dir_ / "cases" / (id + ".jsonl"); }

void CaseStore::Append(const std::string& id, const StoreRecord& record) {
  std::filesystem::path path = LogPath(id);
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError(SysError("open " + path.string()));
  try {
    WriteAll(fd, EncodeLine(record), path);
    if (::fsync(fd) != 0) throw IoError(SysError("fsync " + path.string()));
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

void CaseStore::CompactLocked(const std::string& id, Entry& entry) {
  media::WriteFileAtomic(LogPath(id), EncodeLine(entry.record));
  entry.appended = 1;
}

std::optional<StoreRecord> CaseStore::Get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second.record;
}

StoreRecord CaseStore::Create(const std::string& id, nlohmann::json payload) {
  std::lock_guard lock(mu_);
  if (entries_.count(id)) throw ConflictError("case " + id + " already exists");
  StoreRecord record{id, 1, std::move(payload)};
  Append(id, record);
  entries_[id] = Entry{record, 1};
  return record;
}

StoreRecord CaseStore::PutConditional(const std::string& id, std::uint64_t expected_revision,
                                      nlohmann::json payload) {
  std::lock_guard lock(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) throw NotFoundError("case " + id + " not found");
  Entry& entry = it->second;
  if (entry.record.revision != expected_revision) {
    throw ConflictError("stale revision for case " + id + ": expected " + std::to_string(expected_revision) +
                        ", stored " + std::to_string(entry.record.revision));
  }
  StoreRecord record{id, expected_revision + 1, std::move(payload)};
  Append(id, record);
  entry.record = record;
  if (++entry.appended > compact_every_) CompactLocked(id, entry);
  return record;
}

std::vector<StoreRecord> CaseStore::List() const {
  std::lock_guard lock(mu_);
  std::vector<StoreRecord> out;
  out.reserve(entries_.size());
  for (const auto& [id, entry] : entries_) out.push_back(entry.record);
  return out;
}

void CaseStore::Compact(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) throw NotFoundError("case " + id + " not found");
  CompactLocked(id, it->second);
}

}  // namespace autous::service
