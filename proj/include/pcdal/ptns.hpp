#ifndef PCDAL_PTNS_HPP
#define PCDAL_PTNS_HPP

// PTNS container, little-endian:
//   "PTNS" | u8 version (1) | u8 dtype (0x01 f32, 0x02 f64) | u8 rank | 1 zero byte
//   rank x u64 extents | raw row-major payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pcdal/error.hpp"
#include "pcdal/tensor.hpp"

namespace pcdal::ptns {

inline constexpr std::uint8_t kMagic[4] = {0x50, 0x54, 0x4E, 0x53};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kFixedHeader = 8;

static_assert(std::endian::native == std::endian::little, "PTNS I/O assumes a little-endian host");

inline std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

inline std::vector<std::uint8_t> encode(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("cannot serialize a rank-0 tensor");
  validate_shape(t.shape());
  std::vector<std::uint8_t> out;
  out.reserve(kFixedHeader + 8 * t.rank() + t.size() * dtype_size(t.dtype()));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype()));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  out.insert(out.end(), kFixedHeader - 7, 0);
  auto put = [&out](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  };
  for (auto e : t.shape()) {
    const auto v = static_cast<std::uint64_t>(e);
    put(&v, sizeof v);
  }
  if (t.dtype() == DType::F32) {
    for (double v : t.values()) {
      const auto f = static_cast<float>(v);
      put(&f, sizeof f);
    }
  } else {
    put(t.values().data(), t.size() * sizeof(double));
  }
  return out;
}

inline Tensor decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFixedHeader) throw FormatError("PTNS header too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad PTNS magic");
  if (bytes[4] != kVersion) throw FormatError("unsupported PTNS version " + std::to_string(bytes[4]));
  const std::uint8_t code = bytes[5];
  if (code != 0x01 && code != 0x02) throw FormatError("unknown PTNS dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const std::size_t rank = bytes[6];
  if (rank == 0 || rank > kMaxRank) throw FormatError("PTNS rank " + std::to_string(rank) + " not in [1, 4]");
  for (std::size_t i = 7; i < kFixedHeader; ++i)
    if (bytes[i] != 0) throw FormatError("PTNS reserved bytes must be zero");
  const std::size_t header = kFixedHeader + 8 * rank;
  if (bytes.size() < header) throw TruncationError("PTNS extents truncated");

  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint64_t e;
    std::memcpy(&e, bytes.data() + kFixedHeader + 8 * i, 8);
    if (e == 0) throw FormatError("PTNS extent must be >= 1");
    shape[i] = static_cast<std::size_t>(e);
  }
  const std::size_t count = shape_volume(shape);
  const std::size_t width = dtype_size(dtype);
  if (bytes.size() - header != count * width)
    throw TruncationError("PTNS payload holds " + std::to_string((bytes.size() - header) / width) +
                          " values, header declares " + std::to_string(count));

  std::vector<double> data(count);
  const auto* payload = bytes.data() + header;
  if (dtype == DType::F32) {
    for (std::size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, payload + 4 * i, 4);
      data[i] = f;
    }
  } else {
    std::memcpy(data.data(), payload, count * 8);
  }
  return Tensor(std::move(shape), std::move(data), dtype);
}

inline void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const TruncationError& e) {
    throw TruncationError(path.string() + ": " + e.what());
  }
}

}  // namespace pcdal::ptns

namespace pcdal {
using ptns::read_tensor;
using ptns::write_tensor;
}  // namespace pcdal

#endif  // PCDAL_PTNS_HPP
