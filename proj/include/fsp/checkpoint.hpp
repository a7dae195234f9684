#pragma once

// Checkpoint file format, little-endian throughout:
//   magic "FSPCKPT1"
//   u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims[rank],
//               raw 32-bit floats, row-major
// Round-trips are bit-exact for float parameters.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fsp/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace fsp {

inline constexpr char kCheckpointMagic[8] = {'F', 'S', 'P', 'C', 'K', 'P', 'T', '1'};

namespace detail {
template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  FSP_CHECK(is.good(), IoError, "checkpoint: truncated read");
  return v;
}
}  // namespace detail

inline void save_tensors(const std::string& path,
                         const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  FSP_CHECK(os.good(), IoError, "cannot open '", path, "' for writing");
  os.write(kCheckpointMagic, 8);
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    FSP_CHECK_ARG(name.size() <= UINT16_MAX, "tensor name too long");
    FSP_CHECK_ARG(t.rank() <= UINT8_MAX, "tensor rank too large");
    detail::write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<uint8_t>(os, static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t.size(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
  }
  FSP_CHECK(os.good(), IoError, "write failed for '", path, "'");
}

inline std::vector<std::pair<std::string, Tensor<float>>> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  FSP_CHECK(is.good(), IoError, "cannot open checkpoint '", path, "'");
  char magic[8];
  is.read(magic, 8);
  FSP_CHECK(is.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0, IoError,
            "'", path, "' is not a checkpoint file (bad magic)");
  const uint32_t count = detail::read_pod<uint32_t>(is);
  std::vector<std::pair<std::string, Tensor<float>>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = detail::read_pod<uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint8_t rank = detail::read_pod<uint8_t>(is);
    Shape shape(rank);
    for (uint8_t r = 0; r < rank; ++r)
      shape[r] = static_cast<int64_t>(detail::read_pod<uint32_t>(is));
    Tensor<float> t = Tensor<float>::uninit(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
    FSP_CHECK(is.good(), IoError, "checkpoint '", path, "': truncated tensor data");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

template <class Real>
void save_checkpoint(const std::string& path, const Gpt<Real>& model) {
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  tensors.reserve(model.params().size());
  for (const auto& p : model.params()) {
    if constexpr (std::is_same_v<Real, float>) {
      tensors.emplace_back(p.name, p.value);
    } else {
      tensors.emplace_back(p.name, p.value.template cast<float>());
    }
  }
  save_tensors(path, tensors);
}

template <class Real>
void load_checkpoint(const std::string& path, Gpt<Real>& model) {
  auto tensors = load_tensors(path);
  std::map<std::string, Tensor<float>> by_name;
  for (auto& [name, t] : tensors) by_name.emplace(std::move(name), std::move(t));
  for (auto& p : model.params()) {
    auto it = by_name.find(p.name);
    FSP_CHECK_CFG(it != by_name.end(), "checkpoint '", path, "' missing tensor '",
                  p.name, "'");
    FSP_CHECK_DIM(it->second.shape() == p.value.shape(), "checkpoint tensor '", p.name,
                  "' has shape ", shape_str(it->second.shape()), ", model expects ",
                  shape_str(p.value.shape()));
    if constexpr (std::is_same_v<Real, float>) {
      std::copy(it->second.data(), it->second.data() + it->second.numel(), p.value.data());
    } else {
      const float* src = it->second.data();
      Real* dst = p.value.data();
      for (int64_t i = 0; i < p.value.numel(); ++i) dst[i] = static_cast<Real>(src[i]);
    }
    by_name.erase(it);
  }
  FSP_CHECK_CFG(by_name.empty(), "checkpoint '", path, "' carries ", by_name.size(),
                " tensors unknown to this model (first: '",
                by_name.empty() ? "" : by_name.begin()->first, "')");
}

inline uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  FSP_CHECK(is.good(), IoError, "cannot open '", path, "' for hashing");
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (is.good()) {
    is.read(buf, sizeof(buf));
    h = fnv1a64_bytes(buf, static_cast<size_t>(is.gcount()), h);
  }
  return h;
}

}  // namespace fsp
