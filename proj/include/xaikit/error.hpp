#pragma once

#include <stdexcept>
#include <string>

namespace xai {

/// Error categories surfaced by every module. The C API maps these one-to-one
/// onto status codes.
enum class ErrorKind {
  Input,             // malformed or out-of-range argument, shape mismatch
  Index,             // class index out of range
  Lookup,            // unknown layer / method / key
  Model,             // non-finite output, missing capability
  UnsupportedLayer,  // layer type an operation cannot handle
  Fit,               // degenerate surrogate or regression
  Ingest,            // dataset scanning and image decoding
  Config,            // incompatible or invalid configuration
  Io,                // filesystem writes and reads
  Cell,              // evaluation cell exceeded its failure budget
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace xai
