#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace stagdid {

// Base class for every error the library throws. Callers that want to treat
// all failures uniformly (the CLI does) catch this one type.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Input file / column-mapping problems.
class SchemaError : public Error {
public:
  using Error::Error;
};

// A dataset or argument violates a documented invariant.
class ValidationError : public Error {
public:
  using Error::Error;
};

// An iterative solver ran out of its iteration budget.
class ConvergenceError : public Error {
public:
  using Error::Error;
};

// Perfect separation in a logistic fit; `column` names the offender.
class SeparationError : public Error {
public:
  SeparationError(const std::string& msg, std::string col)
      : Error(msg), column(std::move(col)) {}
  std::string column;
};

// Fitted propensity scores too close to 0 or 1 for the weighting to be trusted.
class OverlapError : public Error {
public:
  using Error::Error;
};

// Shortest decimal representation that round-trips exactly. Used everywhere a
// double is written to a file so that re-reading reproduces the same bits.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

// splitmix64 step; used to derive independent per-replication seeds from a
// master seed so parallel runs are order-independent.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + (index + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace stagdid
