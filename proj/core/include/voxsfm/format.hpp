#pragma once

#include <charconv>
#include <string>

namespace voxsfm {

// Shortest decimal text that parses back to the same double; -0 prints as 0.
inline std::string format_double(double value) {
  if (value == 0.0) value = 0.0;
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, result.ptr);
}

}  // namespace voxsfm
