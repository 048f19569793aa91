#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace proxylab {

// Every library failure derives from Error. kind() is a stable snake_case tag
// used by the command-line front end when it emits error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape_error", what) {}
};

struct ParameterError : Error {
  explicit ParameterError(const std::string& what) : Error("parameter_error", what) {}
};

struct DegenerateInputError : Error {
  explicit DegenerateInputError(const std::string& what)
      : Error("degenerate_input", what) {}
};

struct DegenerateBatchError : Error {
  explicit DegenerateBatchError(const std::string& what)
      : Error("degenerate_batch", what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error("numeric_error", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

struct LabelError : Error {
  explicit LabelError(const std::string& what) : Error("label_error", what) {}
};

struct FileError : Error {
  explicit FileError(const std::string& what) : Error("file_error", what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t offset)
      : Error("parse_error", what + " (line " + std::to_string(line) + ", byte offset " +
                                 std::to_string(offset) + ")"),
        line_(line),
        offset_(offset) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

}  // namespace proxylab
