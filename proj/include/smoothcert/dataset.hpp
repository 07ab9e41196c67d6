#pragma once

// DRSD dataset files: "DRSD", u32 version, u32 count, u32 C/H/W, then
// count*C*H*W float32 values and count u16 labels, all little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "smoothcert/error.hpp"
#include "smoothcert/partition.hpp"

namespace smoothcert {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 24;

struct Dataset {
  Shape3 shape;
  std::vector<float> data;
  std::vector<std::uint16_t> labels;

  std::size_t size() const { return labels.size(); }

  ImageTensor image(std::size_t i) const {
    const std::size_t d = shape.size();
    std::vector<double> v(data.begin() + static_cast<std::ptrdiff_t>(i * d),
                          data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    return ImageTensor::clean(shape, std::move(v));
  }

  void validate() const {
    if (shape.size() == 0) throw ConfigError("dataset has an empty image shape");
    if (data.size() != labels.size() * shape.size()) {
      throw ConfigError("dataset data length does not match count * C * H * W");
    }
  }
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
         std::uint32_t{p[3]} << 24;
}

}  // namespace detail

inline std::vector<unsigned char> encode_dataset(const Dataset& ds) {
  ds.validate();
  std::vector<unsigned char> out{'D', 'R', 'S', 'D'};
  out.reserve(kDatasetHeaderBytes + 4 * ds.data.size() + 2 * ds.labels.size());
  detail::put_u32(out, kDatasetVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.shape.channels));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.shape.height));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.shape.width));
  for (float f : ds.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  for (std::uint16_t l : ds.labels) {
    out.push_back(static_cast<unsigned char>(l));
    out.push_back(static_cast<unsigned char>(l >> 8));
  }
  return out;
}

inline Dataset decode_dataset(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kDatasetHeaderBytes || std::memcmp(bytes.data(), "DRSD", 4) != 0) {
    throw ConfigError("not a DRSD dataset (bad magic or short header)");
  }
  const unsigned char* p = bytes.data();
  if (detail::get_u32(p + 4) != kDatasetVersion) {
    throw ConfigError("unsupported DRSD version " + std::to_string(detail::get_u32(p + 4)));
  }
  const std::uint64_t count = detail::get_u32(p + 8);
  Dataset ds;
  ds.shape = {detail::get_u32(p + 12), detail::get_u32(p + 16), detail::get_u32(p + 20)};
  const std::uint64_t values = count * ds.shape.size();
  if (bytes.size() != kDatasetHeaderBytes + 4 * values + 2 * count) {
    throw ConfigError("DRSD length mismatch: expected " +
                      std::to_string(kDatasetHeaderBytes + 4 * values + 2 * count) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  ds.data.resize(values);
  p += kDatasetHeaderBytes;
  for (std::uint64_t i = 0; i < values; ++i, p += 4) {
    ds.data[i] = std::bit_cast<float>(detail::get_u32(p));
  }
  ds.labels.resize(count);
  for (std::uint64_t i = 0; i < count; ++i, p += 2) {
    ds.labels[i] = static_cast<std::uint16_t>(p[0] | p[1] << 8);
  }
  return ds;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_dataset(bytes);
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  const auto bytes = encode_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace smoothcert
