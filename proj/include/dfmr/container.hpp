#pragma once
// Minimal named-array container for datasets, reconstructions, and model
// checkpoints. Fixed little-endian layout:
//
//   magic   "DFMR" (4 bytes)
//   version u16     (currently 1; readers reject anything else)
//   count   u64     number of arrays
//   per array:
//     name_len u64, name bytes (UTF-8, no terminator)
//     dtype    u8   (1 = float64, 2 = complex128)
//     ndim     u64, shape u64[ndim]
//     payload  float64[numel * (1 or 2)]
//
// Every failure is an IoError naming the file; only read what was verified.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "dfmr/errors.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

constexpr uint16_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw IoError("container: truncated read in '" + path + "'");
  return v;
}

}  // namespace detail

inline void write_container(const std::string& path,
                            const std::vector<NamedTensor>& arrays) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("container: cannot open '" + path + "' for writing");
  os.write("DFMR", 4);
  detail::write_pod<uint16_t>(os, kContainerVersion);
  detail::write_pod<uint64_t>(os, arrays.size());
  for (const NamedTensor& a : arrays) {
    if (a.name.empty())
      throw IoError("container: refusing to write unnamed array to '" + path +
                    "'");
    detail::write_pod<uint64_t>(os, a.name.size());
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    detail::write_pod<uint8_t>(os, a.tensor.is_complex() ? 2 : 1);
    detail::write_pod<uint64_t>(os, a.tensor.shape.size());
    for (int64_t d : a.tensor.shape)
      detail::write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(a.tensor.data.data()),
             static_cast<std::streamsize>(a.tensor.data.size() *
                                          sizeof(double)));
  }
  if (!os) throw IoError("container: write failed for '" + path + "'");
}

inline std::vector<NamedTensor> read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("container: cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "DFMR", 4) != 0)
    throw IoError("container: '" + path + "' is not a DFMR file");
  auto version = detail::read_pod<uint16_t>(is, path);
  if (version != kContainerVersion)
    throw IoError("container: '" + path + "' has unsupported version " +
                  std::to_string(version));
  auto count = detail::read_pod<uint64_t>(is, path);
  std::vector<NamedTensor> arrays;
  arrays.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    auto name_len = detail::read_pod<uint64_t>(is, path);
    if (name_len == 0 || name_len > 4096)
      throw IoError("container: implausible array name length in '" + path +
                    "'");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len)))
      throw IoError("container: truncated read in '" + path + "'");
    auto dtype = detail::read_pod<uint8_t>(is, path);
    if (dtype != 1 && dtype != 2)
      throw IoError("container: unknown dtype code in '" + path + "'");
    auto ndim = detail::read_pod<uint64_t>(is, path);
    if (ndim > 16)
      throw IoError("container: implausible rank in '" + path + "'");
    std::vector<int64_t> shape(ndim);
    uint64_t numel = 1;
    for (uint64_t d = 0; d < ndim; ++d) {
      auto s = detail::read_pod<uint64_t>(is, path);
      if (s == 0 || numel > (1ull << 40) / std::max<uint64_t>(s, 1))
        throw IoError("container: implausible shape in '" + path + "'");
      shape[d] = static_cast<int64_t>(s);
      numel *= s;
    }
    Tensor t(dtype == 2 ? DType::Complex128 : DType::Real64, shape);
    if (!is.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double))))
      throw IoError("container: truncated payload in '" + path + "'");
    arrays.push_back({std::move(name), std::move(t)});
  }
  return arrays;
}

inline const Tensor* find_array(const std::vector<NamedTensor>& arrays,
                                std::string_view name) {
  for (const NamedTensor& a : arrays)
    if (a.name == name) return &a.tensor;
  return nullptr;
}

inline const Tensor& require_array(const std::vector<NamedTensor>& arrays,
                                   std::string_view name,
                                   const std::string& path) {
  const Tensor* t = find_array(arrays, name);
  if (t == nullptr)
    throw IoError("container: '" + path + "' is missing array '" +
                  std::string(name) + "'");
  return *t;
}

}  // namespace dfmr
