#pragma once

#include <stdexcept>
#include <string>

namespace mhcg {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent shapes or settings between components (dims, agents, config files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller supplied a malformed value (token out of range, negative count, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A parameter block broke one of its invariants (non-positive scale, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Learning produced a non-finite loss or the loss blew up.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Requested an exhaustive computation over a space that is too large.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// A verification check (MCMC diagnostics) did not pass.
class VerificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace mhcg
