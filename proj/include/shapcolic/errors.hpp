// Copyright 2026 The Shapcolic Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace shapcolic {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed model/background/seed files, shape mismatches, bad options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Symbolic variable declared twice in one execution context.
class DeclarationError : public Error {
 public:
  using Error::Error;
};

// Division by a concrete zero. Carries the rendered divisor expression.
class ArithmeticError : public Error {
 public:
  ArithmeticError(const std::string& what, std::string expression)
      : Error(what), expression_(std::move(expression)) {}
  const std::string& expression() const { return expression_; }

 private:
  std::string expression_;
};

// Internal consistency violation, e.g. a branch associated with a neuron that
// has no influence entry.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Solver process could not be launched or produced garbage.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace shapcolic
