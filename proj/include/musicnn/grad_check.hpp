// Copyright 2026 The musicnn-cpp Authors
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

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "musicnn/tensor.hpp"

namespace musicnn {

/// A tensor the checker perturbs in place, paired with the analytic gradient
/// of the loss with respect to it.
struct GradCheckTarget {
  std::string name;
  Tensor<double>* values;
  const Tensor<double>* analytic;
};

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckResult> results;

  bool passed() const;
  double max_relative_error() const;
  std::string summary() const;
};

/// Central-difference check of `analytic` gradients against a scalar loss.
///
/// Each entry is compared as |a - n| / max(|a|, |n|, 1e-8) with
/// n = (loss(x + eps) - loss(x - eps)) / (2 eps). Every value is restored
/// after probing. 64-bit only.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradCheckTarget> targets,
                           double epsilon, double tolerance);

}  // namespace musicnn
