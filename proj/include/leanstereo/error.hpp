#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace leanstereo {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (divisibility, unknown keys, ranges).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A tensor handed to an operation violates its shape/level contract.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// File format parse failure; carries the byte offset where parsing stopped.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// A loss or metric was asked to reduce over zero valid pixels.
class EmptyMaskError : public Error {
 public:
  EmptyMaskError() : Error("validity mask selects no pixels") {}
};

}  // namespace leanstereo
