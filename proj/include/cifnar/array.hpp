// Copyright 2026 The cifnar Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cifnar {

// Raised when a forward value or gradient stops being finite. The training
// loop treats this as divergence (exit code 3), everything else as a bug.
struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major array of doubles, rank 1..3. Copies are cheap (shared
// storage); treat an Array as immutable once published and use clone() when
// a private mutable copy is needed.
class Array {
 public:
  Array() = default;

  explicit Array(std::vector<int> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(checked_numel(shape_), 0.0)) {}

  Array(std::vector<int> shape, std::vector<double> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))) {
    if (data_->size() != checked_numel(shape_)) {
      throw ShapeError("Array: data length " + std::to_string(data_->size()) +
                       " does not match shape " + shape_string());
    }
  }

  static Array zeros(std::vector<int> shape) { return Array(std::move(shape)); }

  static Array full(std::vector<int> shape, double v) {
    Array a(std::move(shape));
    std::fill(a.data().begin(), a.data().end(), v);
    return a;
  }

  static Array scalar(double v) { return Array({1}, {v}); }

  static Array vector(std::vector<double> values) {
    int n = static_cast<int>(values.size());
    return Array({n}, std::move(values));
  }

  bool empty() const { return !data_; }
  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int d) const { return shape_[d]; }
  size_t numel() const { return data_ ? data_->size() : 0; }

  std::vector<double>& data() { return *data_; }
  const std::vector<double>& data() const { return *data_; }

  double& at(int i) { return (*data_)[i]; }
  double at(int i) const { return (*data_)[i]; }
  double& at(int i, int j) { return (*data_)[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return (*data_)[static_cast<size_t>(i) * shape_[1] + j]; }
  double& at(int i, int j, int k) {
    return (*data_)[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k) const {
    return (*data_)[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  // Deep copy with private storage.
  Array clone() const {
    if (empty()) return Array();
    return Array(shape_, *data_);
  }

  bool same_shape(const Array& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : *data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << ",";
      os << shape_[i];
    }
    os << ")";
    return os.str();
  }

 private:
  static size_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 3) {
      throw ShapeError("Array rank must be 1..3, got " + std::to_string(shape.size()));
    }
    size_t n = 1;
    for (int e : shape) {
      if (e <= 0) throw ShapeError("Array extents must be positive");
      n *= static_cast<size_t>(e);
    }
    return n;
  }

  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
};

inline bool array_equal(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) return false;
  return a.data() == b.data();
}

inline double max_abs_diff(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace cifnar
