#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fsp {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map failures onto exit codes.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};
struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

namespace detail {
template <class... Args>
std::string format_msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

#define FSP_CHECK(cond, Err, ...)                                  \
  do {                                                             \
    if (!(cond)) throw Err(::fsp::detail::format_msg(__VA_ARGS__)); \
  } while (0)

#define FSP_CHECK_DIM(cond, ...) FSP_CHECK(cond, ::fsp::DimensionError, __VA_ARGS__)
#define FSP_CHECK_ARG(cond, ...) FSP_CHECK(cond, ::fsp::ValidationError, __VA_ARGS__)
#define FSP_CHECK_CFG(cond, ...) FSP_CHECK(cond, ::fsp::ConfigError, __VA_ARGS__)

// 64-bit FNV-1a. Used for seed stream derivation and content addressing of
// run directories / dataset manifests (integrity, not security).
inline uint64_t fnv1a64(std::string_view s, uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64_bytes(const void* p, size_t n, uint64_t h = 1469598103934665603ull) {
  const unsigned char* b = static_cast<const unsigned char*>(p);
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace fsp
