#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cropdml {

// Categories of failure. The CLI maps each one onto a process exit code.
enum class ErrorCode {
  kInvalidArgument,
  kSchema,
  kNoOverlap,
  kNumerical,
  kIo,
  kDegenerateTreatment,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kSchema: return "schema";
    case ErrorCode::kNoOverlap: return "no_overlap";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kDegenerateTreatment: return "degenerate_treatment";
  }
  return "unknown";
}

// Exit-code taxonomy: 0 ok, 2 schema, 3 no-overlap, 4 numerical, 5 I/O,
// 6 single-class treatment.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kSchema: return 2;
    case ErrorCode::kNoOverlap: return 3;
    case ErrorCode::kNumerical: return 4;
    case ErrorCode::kIo: return 5;
    case ErrorCode::kDegenerateTreatment: return 6;
  }
  return 1;
}

// Structured error: a category, a message and key/value details (row,
// column, parcel id, ...) that callers can inspect without parsing text.
class Error : public std::runtime_error {
 public:
  using Details = std::vector<std::pair<std::string, std::string>>;

  Error(ErrorCode code, const std::string& message, Details details = {})
      : std::runtime_error(format(code, message, details)),
        code_(code),
        message_(message),
        details_(std::move(details)) {}

  ErrorCode code() const { return code_; }
  const std::string& message() const { return message_; }
  const Details& details() const { return details_; }

  // Value of a detail key, or empty string.
  std::string detail(std::string_view key) const {
    for (const auto& [k, v] : details_) {
      if (k == key) return v;
    }
    return {};
  }

 private:
  static std::string format(ErrorCode code, const std::string& message,
                            const Details& details) {
    std::string out(to_string(code));
    out += ": ";
    out += message;
    for (const auto& [k, v] : details) {
      out += " [" + k + "=" + v + "]";
    }
    return out;
  }

  ErrorCode code_;
  std::string message_;
  Details details_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message,
                              Error::Details details = {}) {
  throw Error(code, message, std::move(details));
}

inline void require(bool condition, ErrorCode code, const std::string& message,
                    Error::Details details = {}) {
  if (!condition) fail(code, message, std::move(details));
}

}  // namespace cropdml
