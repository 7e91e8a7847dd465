#ifndef ACTFNO_COMMON_HPP
#define ACTFNO_COMMON_HPP

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace actfno {

using Shape = std::vector<int64_t>;

// Base error for everything the toolkit raises on purpose.
class ActError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, shape mismatches, contract violations.
class ValidationError : public ActError {
 public:
  using ActError::ActError;
};

// NaN/Inf encountered, blow-up, non-finite loss.
class NumericError : public ActError {
 public:
  using ActError::ActError;
};

// File format / filesystem failures.
class IoError : public ActError {
 public:
  using ActError::ActError;
};

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

template <class... Args>
std::string format_msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace actfno

#endif
