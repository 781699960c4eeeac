#pragma once

#include <stdexcept>
#include <string>

namespace tktr {

enum class ErrorCode {
  InvalidInput,    // non-finite values, bad arguments
  InvalidRank,
  InvalidMode,
  Shape,
  Domain,          // argument outside a function's domain
  Graph,           // model surgery on unknown layers or broken chains
  Format,          // malformed file
  CorruptRecord,
  Consistency,     // files that disagree with each other
  Config,
  Io,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace tktr
