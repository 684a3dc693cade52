// include/s2s/common.hpp

// Copyright 2026  The s2s authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace s2s {

// Contract violation (bad shapes, out-of-range ids, misuse of an API).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Runtime failure (I/O, parse errors, diverged training).
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& oss, T&& v, Rest&&... rest) {
  oss << std::forward<T>(v);
  format_into(oss, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Args>
std::string str_cat(Args&&... args) {
  std::ostringstream oss;
  detail::format_into(oss, std::forward<Args>(args)...);
  return oss.str();
}

// S2S_CHECK is always on; these guard API contracts, not internal asserts.
#define S2S_CHECK(cond, ...)                                               \
  do {                                                                     \
    if (!(cond)) {                                                         \
      throw ::s2s::ContractError(::s2s::str_cat(                           \
          "check failed: " #cond " (", __func__, "): ", ##__VA_ARGS__));   \
    }                                                                      \
  } while (0)

#define S2S_REQUIRE(cond, ...)                                             \
  do {                                                                     \
    if (!(cond)) {                                                         \
      throw ::s2s::RuntimeError(::s2s::str_cat(__VA_ARGS__));              \
    }                                                                      \
  } while (0)

inline bool is_finite(double x) { return std::isfinite(x); }

}  // namespace s2s
