// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ens {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (files, matrices, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A request that cannot be satisfied by the available data, e.g. an
/// ensemble size larger than the model pool or a budget with no split.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameter passed to an operation.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

}  // namespace ens
