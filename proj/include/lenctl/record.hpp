#pragma once

// One-line machine-readable records ("key=value key=value").

#include <cstdio>
#include <string>
#include <string_view>
#include <type_traits>

namespace lenctl {

class Record {
 public:
  Record& add(std::string_view key, std::string_view value) {
    sep();
    line_.append(key);
    line_.push_back('=');
    const bool quote = value.empty() || value.find_first_of(" \t\"=") != std::string_view::npos;
    if (quote) line_.push_back('"');
    for (char c : value) {
      if (c == '"' || c == '\\') line_.push_back('\\');
      line_.push_back(c);
    }
    if (quote) line_.push_back('"');
    return *this;
  }
  Record& add(std::string_view key, const char* value) { return add(key, std::string_view(value)); }
  Record& add(std::string_view key, const std::string& value) {
    return add(key, std::string_view(value));
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  Record& add(std::string_view key, T value) {
    if constexpr (std::is_floating_point_v<T>) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.6g", static_cast<double>(value));
      return add(key, std::string_view(buf));
    } else if constexpr (std::is_same_v<T, bool>) {
      return add(key, value ? std::string_view("1") : std::string_view("0"));
    } else {
      return add(key, std::string_view(std::to_string(value)));
    }
  }

  // Fixed-point formatting for values that feed comparison tables.
  Record& add_fixed(std::string_view key, double value, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, value);
    return add(key, std::string_view(buf));
  }

  const std::string& str() const { return line_; }

 private:
  void sep() {
    if (!line_.empty()) line_.push_back(' ');
  }
  std::string line_;
};

}  // namespace lenctl
