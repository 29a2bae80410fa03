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

#include "fedgtst/dataset.hpp"

#include <algorithm>
#include <string>

namespace fedgtst {

void Dataset::validate() const {
  if (labels.empty()) throw ConfigError("empty dataset");
  if (features.rows() != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 1) throw ConfigError("dataset num_classes must be >= 1");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ConfigError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                        " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  if (!linalg::all_finite(features.data())) throw ConfigError("dataset has non-finite features");
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.num_classes = data.num_classes;
  out.features = Matrix(indices.size(), data.dim());
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t idx = indices[r];
    if (idx >= data.size()) {
      throw DimensionError("subset index " + std::to_string(idx) + " out of range");
    }
    auto src = data.features.row(idx);
    std::copy(src.begin(), src.end(), out.features.row(r).begin());
    out.labels.push_back(data.labels[idx]);
  }
  return out;
}

Dataset concatenate(const Dataset& a, const Dataset& b) {
  if (a.dim() != b.dim()) throw DimensionError("cannot concatenate datasets of different dims");
  Dataset out = a;
  out.num_classes = std::max(a.num_classes, b.num_classes);
  for (std::size_t r = 0; r < b.size(); ++r) out.features.append_row(b.features.row(r));
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

}  // namespace fedgtst
