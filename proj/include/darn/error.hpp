#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace darn {

// Error taxonomy shared by the library and the CLI exit-code mapping.
enum class ErrorCategory {
  Dimension,
  Config,
  Contract,
  LabelRange,
  Sampling,
  Numeric,
  Io,
  Validation,
  Build,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string message)
      : std::runtime_error(std::move(message)), category_(category) {}

  ErrorCategory category() const { return category_; }

  static const char* category_name(ErrorCategory c) {
    switch (c) {
      case ErrorCategory::Dimension: return "dimension";
      case ErrorCategory::Config: return "config";
      case ErrorCategory::Contract: return "contract";
      case ErrorCategory::LabelRange: return "label-range";
      case ErrorCategory::Sampling: return "sampling";
      case ErrorCategory::Numeric: return "numeric";
      case ErrorCategory::Io: return "io";
      case ErrorCategory::Validation: return "validation";
      case ErrorCategory::Build: return "build";
    }
    return "unknown";
  }

 private:
  ErrorCategory category_;
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& head, const Rest&... rest) {
  os << head;
  msg_append(os, rest...);
}
}  // namespace detail

template <typename... Parts>
[[noreturn]] void fail(ErrorCategory category, const Parts&... parts) {
  std::ostringstream os;
  detail::msg_append(os, parts...);
  throw Error(category, os.str());
}

template <typename... Parts>
void check(bool condition, ErrorCategory category, const Parts&... parts) {
  if (!condition) fail(category, parts...);
}

}  // namespace darn
