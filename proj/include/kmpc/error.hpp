#pragma once

#include <stdexcept>
#include <string>

namespace kmpc {

// Failure classes surfaced by the command-line tool as distinct exit codes.
enum class ErrorKind { Config, Data, Numerics, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& msg) {
  return Error(ErrorKind::Config, msg);
}
inline Error data_error(const std::string& msg) {
  return Error(ErrorKind::Data, msg);
}
inline Error numerics_error(const std::string& msg) {
  return Error(ErrorKind::Numerics, msg);
}
inline Error io_error(const std::string& msg) {
  return Error(ErrorKind::Io, msg);
}

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Numerics: return 4;
    case ErrorKind::Io: return 5;
  }
  return 1;
}

inline const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Numerics: return "numerics";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace kmpc
