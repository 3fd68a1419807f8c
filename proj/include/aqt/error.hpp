#pragma once

#include <stdexcept>
#include <string>

namespace aqt {

/// Base class for every error raised by the library. The category maps onto
/// the CLI exit code.
class Error : public std::runtime_error {
 public:
  enum class Kind { kShape, kDomain, kCapacity, kNumeric, kValidation, kIo };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

  int exit_code() const noexcept {
    switch (kind_) {
      case Kind::kCapacity:
        return 3;
      case Kind::kNumeric:
        return 4;
      default:
        return 2;
    }
  }

 private:
  Kind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(Kind::kShape, "shape error: " + what) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& what) : Error(Kind::kDomain, "domain error: " + what) {}
};

struct CapacityError : Error {
  explicit CapacityError(const std::string& what) : Error(Kind::kCapacity, "capacity error: " + what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(Kind::kNumeric, "numeric error: " + what) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(Kind::kValidation, "validation error: " + what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(Kind::kIo, "I/O error: " + what) {}
};

}  // namespace aqt
