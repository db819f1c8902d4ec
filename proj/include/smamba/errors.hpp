#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace smamba {

// Broad failure classes. The CLI maps these onto its exit codes.
enum class ErrorKind {
  kIo,
  kParse,
  kNumeric,
  kConfig,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

// Malformed SMILES. offset is the byte position of the offending character.
class SyntaxError : public Error {
 public:
  SyntaxError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::kParse,
              what + " at byte " + std::to_string(offset)),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class SemanticError : public Error {
 public:
  explicit SemanticError(const std::string& what)
      : Error(ErrorKind::kParse, what) {}
};

class UnknownToken : public Error {
 public:
  explicit UnknownToken(const std::string& what)
      : Error(ErrorKind::kParse, what) {}
};

class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& what)
      : Error(ErrorKind::kNumeric, what) {}
};

class NonFinite : public Error {
 public:
  explicit NonFinite(const std::string& what)
      : Error(ErrorKind::kNumeric, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorKind::kParse, what) {}
};

// Incompatible pieces: wrong head kind for a dataset or metric, checkpoint
// format version, etc.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::kConfig, what) {}
};

class FormatVersionMismatch : public Error {
 public:
  explicit FormatVersionMismatch(const std::string& what)
      : Error(ErrorKind::kIo, what) {}
};

class ShapeHeaderMismatch : public Error {
 public:
  explicit ShapeHeaderMismatch(const std::string& what)
      : Error(ErrorKind::kIo, what) {}
};

}  // namespace smamba
