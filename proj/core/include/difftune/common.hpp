// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace difftune {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Bad config or constructor argument; the message names the offending field.
class ConfigError : public Error { public: using Error::Error; };
class IndexError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class LookupError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class TrainingError : public Error { public: using Error::Error; };
class ComparisonError : public Error { public: using Error::Error; };

// Sampling produced a non-finite state; carries the failing step index t.
class RolloutError : public Error {
public:
  RolloutError(const std::string& msg, int step) : Error(msg), step_(step) {}
  int step() const noexcept { return step_; }

private:
  int step_;
};

} // namespace difftune
