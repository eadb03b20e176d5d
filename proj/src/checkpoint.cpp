#include "hse/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "hse/errors.hpp"

namespace hse {

namespace {

constexpr char kMagic[4] = {'N', 'T', 'C', '1'};

void put_u16(std::ostream& os, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

template <class T, class U>
void put_scalar_le(std::ostream& os, T v) {
  U bits;
  static_assert(sizeof(T) == sizeof(U));
  std::memcpy(&bits, &v, sizeof(T));
  char b[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(b, sizeof(T));
}

template <class T, class U>
T get_scalar_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  is.read(reinterpret_cast<char*>(b), sizeof(T));
  U bits = 0;
  for (size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(b[i]) << (8 * i);
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    if (name.size() > 0xffff) throw DataError("checkpoint entry name too long: " + name);
    put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(tensor.dtype() == DType::Float32 ? '\x00' : '\x01');
    os.put(static_cast<char>(tensor.rank()));
    for (int i = 0; i < tensor.rank(); ++i) put_u32(os, static_cast<uint32_t>(tensor.dim(i)));
    if (tensor.dtype() == DType::Float32) {
      const float* p = tensor.data<float>();
      for (int64_t i = 0; i < tensor.numel(); ++i) put_scalar_le<float, uint32_t>(os, p[i]);
    } else {
      const double* p = tensor.data<double>();
      for (int64_t i = 0; i < tensor.numel(); ++i) put_scalar_le<double, uint64_t>(os, p[i]);
    }
  }
  if (!os) throw DataError("short write while saving checkpoint: " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not an NTC1 checkpoint: " + path);
  uint32_t count = get_u32(is);
  NamedTensors entries;
  entries.reserve(count);
  for (uint32_t e = 0; e < count; ++e) {
    uint16_t name_len = get_u16(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    int dtype_code = is.get();
    int rank = is.get();
    if (!is || (dtype_code != 0 && dtype_code != 1) || rank < 0)
      throw DataError("corrupt checkpoint entry header in " + path);
    std::vector<int> shape(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) shape[static_cast<size_t>(i)] = static_cast<int>(get_u32(is));
    DType dt = dtype_code == 0 ? DType::Float32 : DType::Float64;
    Tensor t(shape, dt);
    if (dt == DType::Float32) {
      float* p = t.data<float>();
      for (int64_t i = 0; i < t.numel(); ++i) p[i] = get_scalar_le<float, uint32_t>(is);
    } else {
      double* p = t.data<double>();
      for (int64_t i = 0; i < t.numel(); ++i) p[i] = get_scalar_le<double, uint64_t>(is);
    }
    if (!is) throw DataError("truncated checkpoint: " + path);
    entries.emplace_back(std::move(name), std::move(t));
  }
  return entries;
}

const Tensor& checkpoint_entry(const NamedTensors& entries, const std::string& name) {
  for (const auto& [n, t] : entries)
    if (n == name) return t;
  throw DataError("checkpoint entry not found: " + name);
}

}  // namespace hse
