#pragma once

#include <stdexcept>
#include <string>

namespace smoothlab {

enum class Errc {
  io,                 // file missing, unreadable or unwritable
  format,             // malformed or truncated file contents
  unsupported,        // well-formed file using a feature we do not read
  version,            // model file written by another format version
  shape,              // dimension or channel mismatch between operands
  invalid_argument,   // parameter outside its documented domain
  solver,             // iterative solver failed to converge
  numeric,            // non-finite value encountered
  state,              // operation invoked in the wrong order
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace smoothlab
