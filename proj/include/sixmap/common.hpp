#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace sixmap {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;

  double norm() const { return std::hypot(x, y); }
};

// Exit-status classes shared by the library and the command line tool.
enum class ErrorCode {
  kInvalidArgument = 2,
  kMissingInput = 3,
  kMalformedInput = 4,
  kValidation = 5,
  kNumerical = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool ok, const std::string& what,
                    ErrorCode code = ErrorCode::kInvalidArgument) {
  if (!ok) fail(code, what);
}

}  // namespace sixmap
