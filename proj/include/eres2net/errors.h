// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_ERRORS_H_
#define ERES2NET_ERRORS_H_

#include <stdexcept>
#include <string>

namespace eres2net {

/// Base of every error thrown by the library. `exit_code()` is the stable CLI
/// contract: 1 validation, 2 numerical failure, 3 I/O.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

/// Tensor dims disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid model/run configuration (bad key, indivisible widths, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (bad magic, truncated payload, bad trial line).
class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

}  // namespace eres2net

#endif  // ERES2NET_ERRORS_H_
