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


#include "autous/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "autous/error.hpp"
#include "autous/media_io.hpp"

namespace autous::model {
namespace {

constexpr char kMagic[8] = {'A', 'U', 'T', 'O', 'U', 'S', 'C', 'K'};

class Writer {
 public:
  void Bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void Le(T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    Bytes(buf, sizeof(T));
  }
  void Str(const std::string& s) {
    Le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    Bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> Take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  const std::uint8_t* Take(std::size_t n) {
    if (n > b_.size() - pos_) throw DecodeError("checkpoint truncated at byte " + std::to_string(pos_));
    const std::uint8_t* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T Le() {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, Take(sizeof(T)), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  std::string Str() {
    const auto n = Le<std::uint32_t>();
    const auto* p = Take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename S>
Checkpoint MakeCheckpoint(const CtuNet<S>& model, nlohmann::json metadata) {
  Checkpoint ck;
  ck.config = model.config();
  ck.metadata = std::move(metadata);
  for (const auto& p : model.params().entries()) {
    NamedArray a;
    a.name = p.name;
    a.shape = p.value.shape();
    a.trainable = p.trainable;
    a.values.assign(p.value.values().begin(), p.value.values().end());
    ck.params.push_back(std::move(a));
  }
  return ck;
}

std::vector<std::uint8_t> EncodeCheckpoint(const Checkpoint& ck) {
  Writer w;
  w.Bytes(kMagic, sizeof(kMagic));
  w.Le<std::uint32_t>(ck.format_version);
  w.Str(ToJson(ck.config).dump());
  w.Str(ck.metadata.dump());
  w.Le<std::uint32_t>(static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& a : ck.params) {
    if (a.values.size() != ShapeSize(a.shape)) throw InternalError("parameter " + a.name + " has inconsistent size");
    w.Str(a.name);
    w.Le<std::uint8_t>(a.trainable ? 1 : 0);
    w.Le<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.Le<std::uint64_t>(d);
    for (float v : a.values) w.Le<float>(v);
  }
  return w.Take();
}

Checkpoint DecodeCheckpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.Take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw DecodeError("not an autous checkpoint (bad magic)");
  }
  Checkpoint ck;
  ck.format_version = r.Le<std::uint32_t>();
  if (ck.format_version != kCheckpointFormatVersion) {
    throw DecodeError("checkpoint format_version " + std::to_string(ck.format_version) + " is not supported (expected " +
                      std::to_string(kCheckpointFormatVersion) + ")");
  }
  try {
    ck.config = ModelConfigFromJson(nlohmann::json::parse(r.Str()));
    ck.metadata = nlohmann::json::parse(r.Str());
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const auto count = r.Le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.Str();
    a.trainable = r.Le<std::uint8_t>() != 0;
    const auto rank = r.Le<std::uint32_t>();
    if (rank > 8) throw DecodeError("parameter " + a.name + " has implausible rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(static_cast<std::size_t>(r.Le<std::uint64_t>()));
    const std::size_t n = ShapeSize(a.shape);
    if (n > bytes.size()) throw DecodeError("parameter " + a.name + " is larger than the file");
    a.values.resize(n);
    for (auto& v : a.values) v = r.Le<float>();
    ck.params.push_back(std::move(a));
  }
  if (!r.done()) throw DecodeError("trailing bytes after checkpoint parameters");
  return ck;
}

void SaveCheckpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = EncodeCheckpoint(ck);
  media::WriteFileAtomic(path, std::string(bytes.begin(), bytes.end()));
}

Checkpoint LoadCheckpoint(const std::string& path) {
  const std::string raw = media::ReadFileBytes(path);
  return DecodeCheckpoint(std::vector<std::uint8_t>(raw.begin(), raw.end()));
}

template <typename S>
CtuNet<S> ModelFromCheckpoint(const Checkpoint& ck) {
  CtuNet<S> model(ck.config);
  auto& entries = model.params().entries();
  if (entries.size() != ck.params.size()) {
    throw DecodeError("checkpoint holds " + std::to_string(ck.params.size()) + " arrays, model expects " +
                      std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& a = ck.params[i];
    if (a.name != entries[i].name || a.shape != entries[i].value.shape()) {
      throw DecodeError("checkpoint shape table mismatch at " + entries[i].name + ": expected " +
                        ShapeToString(entries[i].value.shape()) + ", found " + a.name + " " + ShapeToString(a.shape));
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& dst = entries[i].value;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<S>(ck.params[i].values[k]);
  }
  return model;
}

template Checkpoint MakeCheckpoint<float>(const CtuNet<float>&, nlohmann::json);
template Checkpoint MakeCheckpoint<double>(const CtuNet<double>&, nlohmann::json);
template CtuNet<float> ModelFromCheckpoint<float>(const Checkpoint&);
template CtuNet<double> ModelFromCheckpoint<double>(const Checkpoint&);

}  // namespace autous::model
