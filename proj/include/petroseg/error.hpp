#pragma once

#include <stdexcept>
#include <string>

namespace petroseg {

/// Error families; the numeric value doubles as the CLI exit code.
enum class ErrorKind : int {
  Config = 2,
  Input = 3,
  Internal = 4,
};

inline const char* error_tag(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
      return "CONFIG_ERROR";
    case ErrorKind::Input:
      return "INPUT_ERROR";
    case ErrorKind::Internal:
      return "INTERNAL_ERROR";
  }
  return "INTERNAL_ERROR";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& what) {
  return Error(ErrorKind::Config, what);
}
inline Error input_error(const std::string& what) {
  return Error(ErrorKind::Input, what);
}
inline Error internal_error(const std::string& what) {
  return Error(ErrorKind::Internal, what);
}

}  // namespace petroseg
