#pragma once

#include <stdexcept>
#include <string>

namespace advart {

// Library-wide error type. Messages are complete sentences without the
// "advart: error:" prefix; the CLI adds it when reporting.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace advart
