#ifndef WEAKMAP_CHECK_HPP_
#define WEAKMAP_CHECK_HPP_

#include <sstream>
#include <stdexcept>
#include <string>

namespace weakmap {

enum class ErrorCategory {
  kConfig,
  kIo,
  kDimension,
  kCheckpoint,
  kInternal,
};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kIo: return "io";
    case ErrorCategory::kDimension: return "dimension";
    case ErrorCategory::kCheckpoint: return "checkpoint";
    case ErrorCategory::kInternal: return "internal";
  }
  return "internal";
}

class WmError : public std::runtime_error {
 public:
  WmError(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

}  // namespace weakmap

#define WM_CHECK(cond, category, msg)                      \
  do {                                                     \
    if (!(cond)) {                                         \
      std::ostringstream wm_oss_;                          \
      wm_oss_ << msg;                                      \
      throw ::weakmap::WmError((category), wm_oss_.str()); \
    }                                                      \
  } while (0)

#define WM_FAIL(category, msg)                           \
  do {                                                   \
    std::ostringstream wm_oss_;                          \
    wm_oss_ << msg;                                      \
    throw ::weakmap::WmError((category), wm_oss_.str()); \
  } while (0)

#endif  // WEAKMAP_CHECK_HPP_
