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

#ifndef FEDGTST_DATASET_HPP_
#define FEDGTST_DATASET_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "fedgtst/common.hpp"

namespace fedgtst {

// Labelled samples: one feature row per sample. Regression models read the
// integer label as a real-valued target.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 1;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  bool empty() const { return labels.empty(); }

  // Throws ConfigError unless N >= 1, labels are in range and features are finite.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Models take a batch with the same layout as a dataset.
using Batch = Dataset;

Dataset subset(const Dataset& data, std::span<const std::size_t> indices);
Dataset concatenate(const Dataset& a, const Dataset& b);

}  // namespace fedgtst

#endif  // FEDGTST_DATASET_HPP_
