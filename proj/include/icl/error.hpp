#pragma once

#include <stdexcept>
#include <string>

namespace icl {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input files or violated data invariants (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid call arguments such as k <= 0 or an out-of-range layer (CLI exit code 2).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A scoring oracle or LLM client failed (CLI exit code 4).
class ClientError : public Error {
 public:
  using Error::Error;
};

/// A representation whose centered kernel vanishes, so CKA is undefined.
class DegenerateRepresentationError : public DataError {
 public:
  explicit DegenerateRepresentationError(int layer, const std::string& what)
      : DataError(what), layer_(layer) {}

  /// Offending layer index, or -1 when the input was not a bank layer.
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

}  // namespace icl
