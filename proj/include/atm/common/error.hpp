// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace atm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  NumericError(int node, const std::string& op, const std::string& what)
      : Error("numeric failure at node " + std::to_string(node) + " (" + op + "): " + what),
        node_(node) {}
  int node() const { return node_; }

 private:
  int node_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class InfeasibleAlignment : public Error {
 public:
  using Error::Error;
};

}  // namespace atm
