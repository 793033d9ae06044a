#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "pcegan/pointcloud.hpp"

namespace pcegan {

// PLY 1.0 reader/writer for colored clouds: element `vertex` with x,y,z
// (float32 or float64) and red,green,blue (uint8). ASCII and
// binary_little_endian are supported; big-endian files are rejected.
// Unknown vertex properties are skipped; elements after vertex are ignored.

enum class PlyFormat { ascii, binary_le };

namespace ply_detail {

struct Property {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

inline int scalar_size(const std::string& t) {
  if (t == "char" || t == "int8" || t == "uchar" || t == "uint8") return 1;
  if (t == "short" || t == "int16" || t == "ushort" || t == "uint16") return 2;
  if (t == "int" || t == "int32" || t == "uint" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64" || t == "int64" || t == "uint64") return 8;
  return -1;
}

[[noreturn]] inline void parse_fail(const std::string& msg, std::streamoff offset) {
  throw std::runtime_error("ply parse error at byte " + std::to_string(offset) +
                           ": " + msg);
}

inline double read_binary_scalar(std::istream& is, const std::string& type) {
  char buf[8];
  int sz = scalar_size(type);
  if (!is.read(buf, sz)) throw std::runtime_error("ply: unexpected end of data");
  if (type == "float" || type == "float32") {
    float f;
    std::memcpy(&f, buf, 4);
    return f;
  }
  if (type == "double" || type == "float64") {
    double d;
    std::memcpy(&d, buf, 8);
    return d;
  }
  if (type == "uchar" || type == "uint8") return static_cast<uint8_t>(buf[0]);
  if (type == "char" || type == "int8") return static_cast<int8_t>(buf[0]);
  if (type == "ushort" || type == "uint16") {
    uint16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (type == "short" || type == "int16") {
    int16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (type == "uint" || type == "uint32") {
    uint32_t v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  if (type == "int" || type == "int32") {
    int32_t v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  int64_t v;
  std::memcpy(&v, buf, 8);
  return static_cast<double>(v);
}

}  // namespace ply_detail

inline PointCloud load_ply(const std::string& path) {
  using namespace ply_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("ply: cannot open " + path);

  auto next_line = [&](std::string& line) {
    if (!std::getline(is, line)) parse_fail("unexpected end of header", is.tellg());
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };

  std::string line;
  next_line(line);
  if (line != "ply") parse_fail("missing 'ply' signature", 0);

  bool binary = false;
  bool have_format = false;
  size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  std::vector<Property> props;

  while (true) {
    std::streamoff line_start = is.tellg();
    next_line(line);
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
    if (tok == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else if (fmt == "binary_big_endian")
        parse_fail("big-endian PLY is not supported", line_start);
      else parse_fail("unknown format '" + fmt + "'", line_start);
      if (ver != "1.0") parse_fail("unsupported PLY version " + ver, line_start);
      have_format = true;
    } else if (tok == "element") {
      std::string name;
      long long count = -1;
      ls >> name >> count;
      if (count < 0) parse_fail("bad element count", line_start);
      if (name == "vertex") {
        vertex_count = static_cast<size_t>(count);
        in_vertex = true;
        seen_vertex = true;
      } else {
        in_vertex = false;
      }
    } else if (tok == "property") {
      if (!in_vertex) continue;
      Property p;
      ls >> p.type;
      if (p.type == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type >> p.name;
      } else {
        ls >> p.name;
      }
      if (!p.is_list && scalar_size(p.type) < 0)
        parse_fail("unknown property type '" + p.type + "'", line_start);
      props.push_back(p);
    } else if (tok == "end_header") {
      break;
    } else {
      parse_fail("unexpected header token '" + tok + "'", line_start);
    }
  }
  if (!have_format) parse_fail("missing format line", is.tellg());
  if (!seen_vertex) parse_fail("no vertex element", is.tellg());

  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (size_t i = 0; i < props.size(); ++i) {
    const auto& p = props[i];
    if (p.is_list) continue;
    if (p.name == "x") ix = static_cast<int>(i);
    else if (p.name == "y") iy = static_cast<int>(i);
    else if (p.name == "z") iz = static_cast<int>(i);
    else if (p.name == "red") ir = static_cast<int>(i);
    else if (p.name == "green") ig = static_cast<int>(i);
    else if (p.name == "blue") ib = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0)
    throw std::runtime_error("ply: vertex element lacks x/y/z");
  if (ir < 0 || ig < 0 || ib < 0) throw std::runtime_error("ply: attributes absent");

  PointCloud pc;
  pc.color_space = ColorSpace::RGB;
  pc.geometry.resize(vertex_count);
  pc.attributes.resize(vertex_count);

  std::vector<double> row(props.size());
  for (size_t v = 0; v < vertex_count; ++v) {
    if (binary) {
      for (size_t p = 0; p < props.size(); ++p) {
        if (props[p].is_list) {
          double n = read_binary_scalar(is, props[p].count_type);
          for (long i = 0; i < static_cast<long>(n); ++i)
            read_binary_scalar(is, props[p].type);
          row[p] = 0;
        } else {
          row[p] = read_binary_scalar(is, props[p].type);
        }
      }
    } else {
      for (size_t p = 0; p < props.size(); ++p) {
        if (props[p].is_list) {
          long n;
          if (!(is >> n)) throw std::runtime_error("ply: unexpected end of data");
          double tmp;
          for (long i = 0; i < n; ++i) is >> tmp;
          row[p] = 0;
        } else if (!(is >> row[p])) {
          throw std::runtime_error("ply: unexpected end of data");
        }
      }
    }
    pc.geometry[v] = {row[ix], row[iy], row[iz]};
    pc.attributes[v] = {row[ir], row[ig], row[ib]};
  }
  if (vertex_count == 0) throw std::runtime_error("ply: empty cloud");
  return pc;
}

inline void save_ply(const PointCloud& pc, const std::string& path,
                     PlyFormat format = PlyFormat::binary_le) {
  if (pc.geometry.empty()) throw std::invalid_argument("empty cloud");
  pc.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("ply: cannot write " + path);
  os << "ply\n";
  os << (format == PlyFormat::ascii ? "format ascii 1.0\n"
                                    : "format binary_little_endian 1.0\n");
  os << "element vertex " << pc.size() << "\n";
  // double geometry keeps save/load round trips bit-exact
  os << "property double x\nproperty double y\nproperty double z\n";
  os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "end_header\n";
  auto quant = [](double a) {
    return static_cast<uint8_t>(std::lround(clamp255(a)));
  };
  if (format == PlyFormat::ascii) {
    os.precision(std::numeric_limits<double>::max_digits10);
    for (size_t i = 0; i < pc.size(); ++i) {
      const auto& g = pc.geometry[i];
      const auto& a = pc.attributes[i];
      os << g[0] << ' ' << g[1] << ' ' << g[2] << ' ' << int(quant(a[0])) << ' '
         << int(quant(a[1])) << ' ' << int(quant(a[2])) << '\n';
    }
  } else {
    for (size_t i = 0; i < pc.size(); ++i) {
      os.write(reinterpret_cast<const char*>(pc.geometry[i].data()), 24);
      uint8_t rgb[3] = {quant(pc.attributes[i][0]), quant(pc.attributes[i][1]),
                        quant(pc.attributes[i][2])};
      os.write(reinterpret_cast<const char*>(rgb), 3);
    }
  }
  if (!os) throw std::runtime_error("ply: write failed " + path);
}

}  // namespace pcegan
