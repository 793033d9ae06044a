#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include "pcegan/nn.hpp"

namespace pcegan {

// Checkpoint container, version 1.
//
//   magic   "PCEGCKPT"
//   u32     version (1)
//   u8      scalar width in bytes (4 or 8)
//   u32     meta count, then (key, value) length-prefixed strings
//   u32     param count, then per param: name, u32 rows, u32 cols, raw data
//
// All integers and floats little-endian.

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw std::runtime_error("checkpoint: truncated");
  return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& is) {
  uint32_t n = read_u32(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw std::runtime_error("checkpoint: truncated");
  return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params,
                     const std::map<std::string, std::string>& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write("PCEGCKPT", 8);
  detail::write_u32(os, 1);
  uint8_t width = sizeof(T);
  os.write(reinterpret_cast<const char*>(&width), 1);
  detail::write_u32(os, static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    detail::write_str(os, k);
    detail::write_str(os, v);
  }
  detail::write_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    detail::write_str(os, e.name);
    detail::write_u32(os, static_cast<uint32_t>(e.value.rows));
    detail::write_u32(os, static_cast<uint32_t>(e.value.cols));
    os.write(reinterpret_cast<const char*>(e.value.v.data()),
             static_cast<std::streamsize>(e.value.size() * sizeof(T)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed " + path);
}

// Loads values into an already-constructed store; names and shapes must match.
template <typename T>
std::map<std::string, std::string> load_checkpoint(const std::string& path,
                                                   ParamStore<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "PCEGCKPT", 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = detail::read_u32(is);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  uint8_t width = 0;
  is.read(reinterpret_cast<char*>(&width), 1);
  if (width != sizeof(T))
    throw std::runtime_error("checkpoint: scalar width mismatch");
  std::map<std::string, std::string> meta;
  uint32_t nmeta = detail::read_u32(is);
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = detail::read_str(is);
    meta[k] = detail::read_str(is);
  }
  uint32_t nparams = detail::read_u32(is);
  if (nparams != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (uint32_t i = 0; i < nparams; ++i) {
    std::string name = detail::read_str(is);
    uint32_t r = detail::read_u32(is), c = detail::read_u32(is);
    auto& t = params.get(name);
    if (t.rows != static_cast<int>(r) || t.cols != static_cast<int>(c))
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    if (!is.read(reinterpret_cast<char*>(t.v.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(T))))
      throw std::runtime_error("checkpoint: truncated");
  }
  return meta;
}

// Reads only the metadata block (used to recover configs before building).
inline std::map<std::string, std::string> read_checkpoint_meta(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "PCEGCKPT", 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  detail::read_u32(is);
  char width;
  is.read(&width, 1);
  std::map<std::string, std::string> meta;
  uint32_t nmeta = detail::read_u32(is);
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = detail::read_str(is);
    meta[k] = detail::read_str(is);
  }
  return meta;
}

}  // namespace pcegan
