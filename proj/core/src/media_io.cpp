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

#include "autous/media_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include "autous/error.hpp"

#ifdef AUTOUS_HAVE_OPENCV
#include <opencv2/core.hpp>
#include <opencv2/videoio.hpp>
#endif

namespace autous::media {
namespace {

std::uint16_t ReadU16(std::string_view b, std::size_t off) {
  if (off + 2 > b.size()) throw DecodeError("truncated archive");
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[off]) |
                                    (static_cast<unsigned char>(b[off + 1]) << 8));
}

std::uint32_t ReadU32(std::string_view b, std::size_t off) {
  return static_cast<std::uint32_t>(ReadU16(b, off)) |
         (static_cast<std::uint32_t>(ReadU16(b, off + 2)) << 16);
}

std::uint64_t ReadU64(std::string_view b, std::size_t off) {
  return static_cast<std::uint64_t>(ReadU32(b, off)) |
         (static_cast<std::uint64_t>(ReadU32(b, off + 4)) << 32);
}

void PutU16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void PutU32(std::string& out, std::uint32_t v) {
  PutU16(out, static_cast<std::uint16_t>(v & 0xffff));
  PutU16(out, static_cast<std::uint16_t>(v >> 16));
}

enum class DType { kU8, kU16, kF32, kF64 };

std::size_t DTypeSize(DType t) {
  switch (t) {
    case DType::kU8: return 1;
    case DType::kU16: return 2;
    case DType::kF32: return 4;
    case DType::kF64: return 8;
  }
  return 1;
}

DType ParseDescr(const std::string& descr) {
  if (descr == "|u1" || descr == "<u1" || descr == "u1") return DType::kU8;
  if (descr == "<u2") return DType::kU16;
  if (descr == "<f4") return DType::kF32;
  if (descr == "<f8") return DType::kF64;
  throw DecodeError("unsupported npy dtype '" + descr + "'",
                    "expected |u1, <u2, <f4 or <f8");
}

std::string Inflate(std::string_view compressed, std::size_t expected) {
  std::string out(expected, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw DecodeError("inflate init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  zs.avail_in = static_cast<uInt>(compressed.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != expected) {
    throw DecodeError("corrupt deflate stream in npz member");
  }
  return out;
}

RawVideo FromSamples(const std::vector<std::size_t>& shape, DType dtype,
                     const char* data) {
  RawVideo video;
  if (shape.size() == 3) {
    video.channels = 1;
  } else if (shape.size() == 4) {
    video.channels = static_cast<int>(shape[3]);
  } else {
    throw DecodeError("video array must be [T,H,W] or [T,H,W,C]");
  }
  video.frames = static_cast<int>(shape[0]);
  video.height = static_cast<int>(shape[1]);
  video.width = static_cast<int>(shape[2]);
  if (video.frames < 1) throw DecodeError("video has no frames");
  if (video.channels != 1 && video.channels != 3) {
    throw DecodeError("unsupported channel count " + std::to_string(video.channels));
  }
  const std::size_t n = static_cast<std::size_t>(video.frames) * video.height *
                        video.width * video.channels;
  video.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0;
    switch (dtype) {
      case DType::kU8:
        v = static_cast<unsigned char>(data[i]) / 255.0;
        break;
      case DType::kU16: {
        std::uint16_t u;
        std::memcpy(&u, data + 2 * i, 2);
        v = u / 65535.0;
        break;
      }
      case DType::kF32: {
        float f;
        std::memcpy(&f, data + 4 * i, 4);
        v = f;
        break;
      }
      case DType::kF64:
        std::memcpy(&v, data + 8 * i, 8);
        break;
    }
    if (!std::isfinite(v)) throw DecodeError("non-finite sample in video array");
    video.values[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return video;
}

struct ZipMember {
  std::string name;
  std::uint16_t method = 0;
  std::uint64_t compressed_size = 0;
  std::uint64_t size = 0;
  std::uint64_t local_offset = 0;
};

std::vector<ZipMember> ListZip(std::string_view b) {
  if (b.size() < 22) throw DecodeError("not a zip archive");
  std::size_t eocd = std::string_view::npos;
  for (std::size_t i = b.size() - 22 + 1; i-- > 0;) {
    if (ReadU32(b, i) == 0x06054b50) {
      eocd = i;
      break;
    }
    if (b.size() - i > 22 + 65535) break;
  }
  if (eocd == std::string_view::npos) throw DecodeError("zip end record not found");
  const std::uint16_t count = ReadU16(b, eocd + 10);
  std::size_t off = ReadU32(b, eocd + 16);
  std::vector<ZipMember> members;
  for (std::uint16_t i = 0; i < count; ++i) {
    if (ReadU32(b, off) != 0x02014b50) throw DecodeError("bad zip central directory");
    ZipMember m;
    m.method = ReadU16(b, off + 10);
    m.compressed_size = ReadU32(b, off + 20);
    m.size = ReadU32(b, off + 24);
    const std::uint16_t name_len = ReadU16(b, off + 28);
    const std::uint16_t extra_len = ReadU16(b, off + 30);
    const std::uint16_t comment_len = ReadU16(b, off + 32);
    m.local_offset = ReadU32(b, off + 42);
    if (off + 46 + name_len > b.size()) throw DecodeError("truncated archive");
    m.name = std::string(b.substr(off + 46, name_len));
    // Zip64 extra field replaces saturated 32-bit values in order.
    std::size_t ex = off + 46 + name_len;
    const std::size_t ex_end = ex + extra_len;
    while (ex + 4 <= ex_end) {
      const std::uint16_t id = ReadU16(b, ex);
      const std::uint16_t len = ReadU16(b, ex + 2);
      if (id == 0x0001) {
        std::size_t p = ex + 4;
        if (m.size == 0xffffffffu) { m.size = ReadU64(b, p); p += 8; }
        if (m.compressed_size == 0xffffffffu) { m.compressed_size = ReadU64(b, p); p += 8; }
        if (m.local_offset == 0xffffffffu) { m.local_offset = ReadU64(b, p); }
      }
      ex += 4 + len;
    }
    members.push_back(std::move(m));
    off += 46 + name_len + extra_len + comment_len;
  }
  return members;
}

std::string ExtractMember(std::string_view b, const ZipMember& m) {
  const std::size_t lo = m.local_offset;
  if (ReadU32(b, lo) != 0x04034b50) throw DecodeError("bad zip local header");
  const std::size_t data = lo + 30 + ReadU16(b, lo + 26) + ReadU16(b, lo + 28);
  if (data + m.compressed_size > b.size()) throw DecodeError("truncated zip member");
  std::string_view payload = b.substr(data, m.compressed_size);
  if (m.method == 0) return std::string(payload);
  if (m.method == 8) return Inflate(payload, m.size);
  throw DecodeError("unsupported zip compression method " + std::to_string(m.method));
}

#ifdef AUTOUS_HAVE_OPENCV
RawVideo ReadWithOpenCv(const std::filesystem::path& path) {
  cv::VideoCapture capture(path.string());
  if (!capture.isOpened()) throw DecodeError("cannot open video " + path.string());
  std::vector<cv::Mat> frames;
  cv::Mat frame;
  while (capture.read(frame)) frames.push_back(frame.clone());
  if (frames.empty()) throw DecodeError("video has no frames: " + path.string());
  RawVideo video;
  video.frames = static_cast<int>(frames.size());
  video.height = frames[0].rows;
  video.width = frames[0].cols;
  bool gray = true;
  for (const auto& f : frames) {
    if (f.rows != video.height || f.cols != video.width) {
      throw DecodeError("frame size changes mid-stream in " + path.string());
    }
    if (f.channels() == 3) {
      for (int y = 0; y < f.rows && gray; ++y) {
        const auto* row = f.ptr<cv::Vec3b>(y);
        for (int x = 0; x < f.cols; ++x) {
          if (row[x][0] != row[x][1] || row[x][1] != row[x][2]) {
            gray = false;
            break;
          }
        }
      }
    }
  }
  video.channels = gray ? 1 : 3;
  video.values.reserve(static_cast<std::size_t>(video.frames) * video.height *
                       video.width * video.channels);
  for (const auto& f : frames) {
    for (int y = 0; y < f.rows; ++y) {
      for (int x = 0; x < f.cols; ++x) {
        if (f.channels() == 1) {
          const float v = f.at<unsigned char>(y, x) / 255.0f;
          for (int c = 0; c < video.channels; ++c) video.values.push_back(v);
        } else {
          const auto px = f.at<cv::Vec3b>(y, x);
          if (gray) {
            video.values.push_back(px[0] / 255.0f);
          } else {
            // BGR -> RGB
            video.values.push_back(px[2] / 255.0f);
            video.values.push_back(px[1] / 255.0f);
            video.values.push_back(px[0] / 255.0f);
          }
        }
      }
    }
  }
  return video;
}
#endif

}  // namespace

bool OpenCvAvailable() {
#ifdef AUTOUS_HAVE_OPENCV
  return true;
#else
  return false;
#endif
}

std::string ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFileAtomic(const std::filesystem::path& path, std::string_view bytes) {
  static std::atomic<unsigned> counter{0};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

RawVideo DecodeNpy(std::string_view b) {
  if (b.size() < 10 || b.substr(0, 6) != "\x93NUMPY") throw DecodeError("not an npy payload");
  const int major = static_cast<unsigned char>(b[6]);
  std::size_t header_len;
  std::size_t header_start;
  if (major == 1) {
    header_len = ReadU16(b, 8);
    header_start = 10;
  } else {
    header_len = ReadU32(b, 8);
    header_start = 12;
  }
  if (header_start + header_len > b.size()) throw DecodeError("truncated npy header");
  const std::string header(b.substr(header_start, header_len));

  static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  if (!std::regex_search(header, m, descr_re)) throw DecodeError("npy header lacks descr");
  const DType dtype = ParseDescr(m[1]);
  if (!std::regex_search(header, m, order_re)) throw DecodeError("npy header lacks fortran_order");
  if (m[1] == "True") throw DecodeError("fortran-ordered npy arrays are not supported");
  if (!std::regex_search(header, m, shape_re)) throw DecodeError("npy header lacks shape");
  std::vector<std::size_t> shape;
  std::stringstream ss(m[1].str());
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (!item.empty()) shape.push_back(std::stoull(item));
  }
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  const std::size_t data_start = header_start + header_len;
  if (b.size() < data_start + count * DTypeSize(dtype)) throw DecodeError("truncated npy data");
  return FromSamples(shape, dtype, b.data() + data_start);
}

RawVideo DecodeNpz(std::string_view bytes) {
  const auto members = ListZip(bytes);
  const ZipMember* chosen = nullptr;
  for (const auto& m : members) {
    if (m.name == "frames.npy") {
      chosen = &m;
      break;
    }
    if (!chosen && m.name.size() > 4 && m.name.ends_with(".npy")) chosen = &m;
  }
  if (!chosen) throw DecodeError("npz archive has no .npy member");
  return DecodeNpy(ExtractMember(bytes, *chosen));
}

RawVideo ReadVideo(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DecodeError("media not found: " + path.string());
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".npy") return DecodeNpy(ReadFileBytes(path));
  if (ext == ".npz") return DecodeNpz(ReadFileBytes(path));
#ifdef AUTOUS_HAVE_OPENCV
  return ReadWithOpenCv(path);
#else
  throw DecodeError("unsupported media type '" + ext + "'",
                    "rebuild with OpenCV to decode container formats");
#endif
}

std::string EncodeNpyU8(const std::vector<std::uint8_t>& values, int frames,
                        int height, int width, int channels) {
  std::ostringstream h;
  h << "{'descr': '|u1', 'fortran_order': False, 'shape': (" << frames << ", "
    << height << ", " << width << ", " << channels << "), }";
  std::string header = h.str();
  // Pad so the data starts on a 64-byte boundary; the header ends in '\n'.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::string out("\x93NUMPY\x01\x00", 8);
  PutU16(out, static_cast<std::uint16_t>(header.size()));
  out += header;
  out.append(reinterpret_cast<const char*>(values.data()), values.size());
  return out;
}

std::string EncodeNpz(const std::string& member_name, const std::string& npy) {
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(npy.data()), static_cast<uInt>(npy.size())));
  const auto size = static_cast<std::uint32_t>(npy.size());
  std::string out;
  PutU32(out, 0x04034b50);
  PutU16(out, 20);
  PutU16(out, 0);
  PutU16(out, 0);
  PutU16(out, 0);
  PutU16(out, 0x21);
  PutU32(out, crc);
  PutU32(out, size);
  PutU32(out, size);
  PutU16(out, static_cast<std::uint16_t>(member_name.size()));
  PutU16(out, 0);
  out += member_name;
  out += npy;
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  PutU32(out, 0x02014b50);
  PutU16(out, 20);
  PutU16(out, 20);
  PutU16(out, 0);
  PutU16(out, 0);
  PutU16(out, 0);
  PutU16(out, 0x21);
  PutU32(out, crc);
  PutU32(out, size);
  PutU32(out, size);
  PutU16(out, static_cast<std::uint16_t>(member_name.size()));
  PutU16(out, 0);
  PutU16(out, 0);
  PutU16(out, 0);
  PutU16(out, 0);
  PutU32(out, 0);
  PutU32(out, 0);
  out += member_name;
  const auto cd_size = static_cast<std::uint32_t>(out.size() - cd_offset);
  PutU32(out, 0x06054b50);
  PutU16(out, 0);
  PutU16(out, 0);
  PutU16(out, 1);
  PutU16(out, 1);
  PutU32(out, cd_size);
  PutU32(out, cd_offset);
  PutU16(out, 0);
  return out;
}

}  // namespace autous::media
