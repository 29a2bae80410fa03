/* Copyright 2026 The FedGTST Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef FEDGTST_COMMON_HPP_
#define FEDGTST_COMMON_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedgtst {

using Vec = std::vector<double>;

// Error taxonomy. The CLI maps each family onto a distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, arguments or preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Mismatched vector/matrix shapes.
class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Non-finite values or failed numerical invariants during a computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// File system and parse failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  // Appends one row; the first row fixes the column count.
  void append_row(std::span<const double> values);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace linalg {

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double squared_norm(std::span<const double> a);
// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);
void scale(double a, std::span<double> x);
Vec add(std::span<const double> a, std::span<const double> b);
Vec sub(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> a);
// ||a - b|| / max(||a||, ||b||, floor)
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

}  // namespace linalg

// Counter-based seed derivation: a named stream plus optional counters maps a
// master seed onto an independent 64-bit seed. Adding a new stream name never
// perturbs the seeds of existing streams.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t counter_a = 0, std::uint64_t counter_b = 0);

// Warnings go to stderr unless silenced (tests and benchmarks silence them).
void log_warning(std::string_view message);
void set_warnings_enabled(bool enabled);

// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace fedgtst

#endif  // FEDGTST_COMMON_HPP_
