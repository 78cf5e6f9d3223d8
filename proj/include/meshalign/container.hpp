#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "meshalign/common.hpp"

namespace meshalign {

// Bit-exact binary format shared by models, pose banks, datasets and
// checkpoints. Layout (all little-endian):
//   magic "CRAT" | u32 version=1 | u32 tensor count
//   per tensor: u16 name length | name bytes (UTF-8) | u8 dtype | u8 ndim
//               | u32 dims[ndim] | payload, row-major
// dtype: 0 = f32, 1 = i32, 2 = u8.
class TensorContainer {
 public:
  enum class Dtype : std::uint8_t { F32 = 0, I32 = 1, U8 = 2 };

  struct Entry {
    std::string name;
    Dtype dtype = Dtype::F32;
    Shape dims;
    std::vector<float> f32;
    std::vector<std::int32_t> i32;
    std::vector<std::uint8_t> u8;

    Index numel() const { return shape_numel(dims); }
  };

  void add_f32(const std::string& name, Shape dims, std::vector<float> data) {
    MA_CHECK(static_cast<Index>(data.size()) == shape_numel(dims),
             "container: tensor '" << name << "' payload does not match dims " << shape_str(dims));
    Entry e;
    e.name = name;
    e.dtype = Dtype::F32;
    e.dims = std::move(dims);
    e.f32 = std::move(data);
    push(std::move(e));
  }
  void add_i32(const std::string& name, Shape dims, std::vector<std::int32_t> data) {
    MA_CHECK(static_cast<Index>(data.size()) == shape_numel(dims),
             "container: tensor '" << name << "' payload does not match dims " << shape_str(dims));
    Entry e;
    e.name = name;
    e.dtype = Dtype::I32;
    e.dims = std::move(dims);
    e.i32 = std::move(data);
    push(std::move(e));
  }
  void add_u8(const std::string& name, Shape dims, std::vector<std::uint8_t> data) {
    MA_CHECK(static_cast<Index>(data.size()) == shape_numel(dims),
             "container: tensor '" << name << "' payload does not match dims " << shape_str(dims));
    Entry e;
    e.name = name;
    e.dtype = Dtype::U8;
    e.dims = std::move(dims);
    e.u8 = std::move(data);
    push(std::move(e));
  }
  void add_text(const std::string& name, const std::string& text) {
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    add_u8(name, {static_cast<Index>(bytes.size())}, std::move(bytes));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  // Lookups are recorded so callers can audit which tensors a consumer read.
  const Entry& get(const std::string& name) const {
    auto it = index_.find(name);
    MA_CHECK(it != index_.end(), "container: no tensor named '" << name << "'");
    access_log_.push_back(name);
    return entries_[it->second];
  }
  const std::vector<float>& get_f32(const std::string& name) const {
    const Entry& e = get(name);
    MA_CHECK(e.dtype == Dtype::F32, "container: tensor '" << name << "' is not f32");
    return e.f32;
  }
  const std::vector<std::int32_t>& get_i32(const std::string& name) const {
    const Entry& e = get(name);
    MA_CHECK(e.dtype == Dtype::I32, "container: tensor '" << name << "' is not i32");
    return e.i32;
  }
  std::string get_text(const std::string& name) const {
    const Entry& e = get(name);
    MA_CHECK(e.dtype == Dtype::U8, "container: tensor '" << name << "' is not u8 text");
    return std::string(e.u8.begin(), e.u8.end());
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::string>& access_log() const { return access_log_; }
  void clear_access_log() const { access_log_.clear(); }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    MA_CHECK(f.good(), "container: cannot open '" << path << "' for writing");
    f.write("CRAT", 4);
    put_u32(f, 1);
    put_u32(f, static_cast<std::uint32_t>(entries_.size()));
    for (const Entry& e : entries_) {
      MA_CHECK(e.name.size() <= 0xffff, "container: name too long");
      put_u16(f, static_cast<std::uint16_t>(e.name.size()));
      f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      put_u8(f, static_cast<std::uint8_t>(e.dtype));
      MA_CHECK(e.dims.size() <= 0xff, "container: too many dims");
      put_u8(f, static_cast<std::uint8_t>(e.dims.size()));
      for (Index d : e.dims) {
        MA_CHECK(d >= 0 && d <= 0xffffffffLL, "container: dim out of u32 range");
        put_u32(f, static_cast<std::uint32_t>(d));
      }
      switch (e.dtype) {
        case Dtype::F32:
          for (float v : e.f32) put_u32(f, bit_cast_u32(v));
          break;
        case Dtype::I32:
          for (std::int32_t v : e.i32) put_u32(f, static_cast<std::uint32_t>(v));
          break;
        case Dtype::U8:
          f.write(reinterpret_cast<const char*>(e.u8.data()),
                  static_cast<std::streamsize>(e.u8.size()));
          break;
      }
    }
    MA_CHECK(f.good(), "container: write to '" << path << "' failed");
  }

  static TensorContainer read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    MA_CHECK(f.good(), "container: cannot open '" << path << "' for reading");
    char magic[4];
    f.read(magic, 4);
    MA_CHECK(f.gcount() == 4 && std::memcmp(magic, "CRAT", 4) == 0,
             "container: bad magic in '" << path << "'");
    const std::uint32_t version = take_u32(f, path);
    MA_CHECK(version == 1, "container: unsupported version " << version);
    const std::uint32_t count = take_u32(f, path);
    TensorContainer c;
    for (std::uint32_t i = 0; i < count; ++i) {
      Entry e;
      const std::uint16_t nlen = take_u16(f, path);
      e.name.resize(nlen);
      f.read(e.name.data(), nlen);
      MA_CHECK(f.gcount() == nlen, "container: truncated file '" << path << "'");
      const std::uint8_t dtype = take_u8(f, path);
      MA_CHECK(dtype <= 2, "container: unknown dtype " << int(dtype) << " for '" << e.name << "'");
      e.dtype = static_cast<Dtype>(dtype);
      const std::uint8_t ndim = take_u8(f, path);
      for (std::uint8_t d = 0; d < ndim; ++d) e.dims.push_back(take_u32(f, path));
      const Index n = e.numel();
      switch (e.dtype) {
        case Dtype::F32:
          e.f32.resize(static_cast<std::size_t>(n));
          for (Index k = 0; k < n; ++k) e.f32[static_cast<std::size_t>(k)] =
              bit_cast_f32(take_u32(f, path));
          break;
        case Dtype::I32:
          e.i32.resize(static_cast<std::size_t>(n));
          for (Index k = 0; k < n; ++k) e.i32[static_cast<std::size_t>(k)] =
              static_cast<std::int32_t>(take_u32(f, path));
          break;
        case Dtype::U8: {
          e.u8.resize(static_cast<std::size_t>(n));
          f.read(reinterpret_cast<char*>(e.u8.data()), n);
          MA_CHECK(f.gcount() == n, "container: truncated file '" << path << "'");
          break;
        }
      }
      c.push(std::move(e));
    }
    return c;
  }

 private:
  void push(Entry e) {
    MA_CHECK(index_.count(e.name) == 0, "container: duplicate tensor name '" << e.name << "'");
    index_[e.name] = entries_.size();
    entries_.push_back(std::move(e));
  }

  static std::uint32_t bit_cast_u32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    return u;
  }
  static float bit_cast_f32(std::uint32_t u) {
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  static void put_u8(std::ofstream& f, std::uint8_t v) {
    f.put(static_cast<char>(v));
  }
  static void put_u16(std::ofstream& f, std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    f.write(b, 2);
  }
  static void put_u32(std::ofstream& f, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    f.write(b, 4);
  }
  static std::uint8_t take_u8(std::ifstream& f, const std::string& path) {
    int c = f.get();
    MA_CHECK(c != EOF, "container: truncated file '" << path << "'");
    return static_cast<std::uint8_t>(c);
  }
  static std::uint16_t take_u16(std::ifstream& f, const std::string& path) {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    MA_CHECK(f.gcount() == 2, "container: truncated file '" << path << "'");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  static std::uint32_t take_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    MA_CHECK(f.gcount() == 4, "container: truncated file '" << path << "'");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  mutable std::vector<std::string> access_log_;
};

}  // namespace meshalign
