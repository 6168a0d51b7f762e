#ifndef XPLAIN_CORE_ERROR_H_
#define XPLAIN_CORE_ERROR_H_

#include <stdexcept>
#include <string>
#include <utility>

namespace xplain {

// Error categories. The service maps them onto HTTP statuses and the CLI
// onto exit codes, so keep the set small.
enum class ErrorCode {
  kInvalidArgument,     // malformed input or violated precondition
  kNotFound,            // unknown model, session, feature or class
  kConflict,            // illegal state transition (leaf toggle, stale view)
  kFailedPrecondition,  // input well-formed but the operation cannot run
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline Error InvalidArgument(std::string message) {
  return Error(ErrorCode::kInvalidArgument, std::move(message));
}
inline Error NotFound(std::string message) {
  return Error(ErrorCode::kNotFound, std::move(message));
}
inline Error Conflict(std::string message) {
  return Error(ErrorCode::kConflict, std::move(message));
}
inline Error FailedPrecondition(std::string message) {
  return Error(ErrorCode::kFailedPrecondition, std::move(message));
}

}  // namespace xplain

#endif  // XPLAIN_CORE_ERROR_H_
