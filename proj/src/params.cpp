#include "spi/params.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace spi {

namespace {

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_f32_block(std::ostream& os, const float* p, size_t n) {
  // Little-endian host assumed for the fast path; byte-swap otherwise.
  static_assert(sizeof(float) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
  } else {
    for (size_t i = 0; i < n; ++i) {
      uint32_t u;
      std::memcpy(&u, p + i, 4);
      put_u32(os, u);
    }
  }
}

void get_f32_block(std::istream& is, float* p, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 4));
  } else {
    for (size_t i = 0; i < n; ++i) {
      uint32_t u = get_u32(is);
      std::memcpy(p + i, &u, 4);
    }
  }
}

constexpr uint32_t kTstwVersion = 1;

}  // namespace

void save_tstw(const ParameterSet& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write("TSTW", 4);
  put_u32(os, kTstwVersion);
  put_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& name : params.names()) {
    const Tensorf& t = params.at(name);
    if (name.size() > 0xffff) throw std::invalid_argument("tensor name too long: " + name);
    put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<uint32_t>(t.extent(i)));
    put_f32_block(os, t.ptr(), static_cast<size_t>(t.numel()));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

ParameterSet load_tstw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TSTW", 4) != 0)
    throw std::runtime_error(path + ": not a TSTW file");
  uint32_t version = get_u32(is);
  if (version != kTstwVersion)
    throw std::runtime_error(path + ": unsupported TSTW version " + std::to_string(version));
  uint32_t count = get_u32(is);
  ParameterSet params;
  for (uint32_t e = 0; e < count; ++e) {
    uint16_t len = get_u16(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    int rank = is.get();
    if (rank < 0) throw std::runtime_error(path + ": truncated TSTW file");
    Shape shape(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) shape[static_cast<size_t>(i)] = get_u32(is);
    Tensorf t(shape);
    get_f32_block(is, t.ptr(), static_cast<size_t>(t.numel()));
    if (!is) throw std::runtime_error(path + ": truncated TSTW file");
    params.add(name, std::move(t));
  }
  return params;
}

}  // namespace spi
