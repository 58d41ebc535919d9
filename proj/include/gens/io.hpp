#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gens/common.hpp"

namespace gens {

// Little-endian binary primitives. The build targets LE hosts; a static check
// keeps the checkpoint format honest if that ever changes.
static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void write_pods(std::ostream& out, const T* v, size_t n) {
  out.write(reinterpret_cast<const char*>(v), sizeof(T) * n);
}

template <class T>
T read_pod(std::istream& in, const std::string& origin) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(Err::ParseError, origin + ": truncated file");
  return v;
}

template <class T>
void read_pods(std::istream& in, T* v, size_t n, const std::string& origin) {
  in.read(reinterpret_cast<char*>(v), sizeof(T) * n);
  if (!in) fail(Err::ParseError, origin + ": truncated file");
}

inline void write_magic(std::ostream& out, const char magic[9]) { out.write(magic, 8); }

inline void expect_magic(std::istream& in, const char magic[9], const std::string& origin) {
  char buf[8];
  in.read(buf, 8);
  if (!in || std::memcmp(buf, magic, 8) != 0)
    fail(Err::ParseError, origin + ": bad magic, expected " + std::string(magic, 8));
}

inline std::ofstream open_out(const std::string& path, bool binary = true) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) fail(Err::IoError, "cannot write " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path, bool binary = true) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) fail(Err::IoError, "cannot read " + path);
  return in;
}

}  // namespace gens
