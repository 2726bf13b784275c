#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qmotion {

/// Base for every error raised by the library. The `kind` groups errors
/// the way the command-line tool maps them onto exit codes.
class Error : public std::runtime_error {
 public:
  enum class Kind { kConfig, kData, kNumerical };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Kind::kConfig, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(Kind::kData, what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(Kind::kData, what) {}
};

class InvalidRotationError : public Error {
 public:
  explicit InvalidRotationError(const std::string& what) : Error(Kind::kNumerical, what) {}
};

class DegenerateQuaternionError : public Error {
 public:
  explicit DegenerateQuaternionError(const std::string& what)
      : Error(Kind::kNumerical, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(Kind::kNumerical, what) {}
};

class InstabilityError : public Error {
 public:
  explicit InstabilityError(const std::string& what) : Error(Kind::kNumerical, what) {}
};

class UnsupportedFeatureError : public Error {
 public:
  explicit UnsupportedFeatureError(const std::string& what) : Error(Kind::kData, what) {}
};

/// Malformed input file. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(Kind::kData, file + ":" + std::to_string(line) + ": " + what),
        file_(file),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

}  // namespace qmotion
