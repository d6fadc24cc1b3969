#pragma once

#include <stdexcept>
#include <string>

namespace esam3 {

// Every failure raised by the library carries a category so that callers
// (the CLI in particular) can map it onto an exit code.
enum class ErrorKind {
  kShape,         // operand shapes do not conform
  kInvalidArgument,
  kPrecondition,  // missing checkpoint, empty batch, ...
  kNumerical,     // NaN/Inf encountered
  kGraph,         // malformed computation record
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace esam3
