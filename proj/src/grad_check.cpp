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

#include "musicnn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace musicnn {

bool GradCheckReport::passed() const {
  return std::all_of(results.begin(), results.end(), [](const GradCheckResult& r) { return r.passed; });
}

double GradCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& r : results) worst = std::max(worst, r.max_relative_error);
  return worst;
}

std::string GradCheckReport::summary() const {
  std::ostringstream out;
  for (const auto& r : results) {
    out << (r.passed ? "ok   " : "FAIL ") << r.name << " max_rel=" << r.max_relative_error;
    if (!r.passed) out << " at [" << r.worst_index << "] analytic=" << r.worst_analytic << " numeric=" << r.worst_numeric;
    out << '\n';
  }
  return out.str();
}

GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradCheckTarget> targets,
                           double epsilon, double tolerance) {
  GradCheckReport report;
  for (const auto& target : targets) {
    if (target.values->shape() != target.analytic->shape()) {
      throw Error(ErrorCode::ShapeMismatch, "grad_check: analytic gradient shape differs for " + target.name);
    }
    GradCheckResult result;
    result.name = target.name;
    Tensor<double>& x = *target.values;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + epsilon;
      const double up = loss();
      x[i] = saved - epsilon;
      const double down = loss();
      x[i] = saved;

      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic = (*target.analytic)[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      if (i == 0 || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
    result.passed = result.max_relative_error <= tolerance;
    report.results.push_back(std::move(result));
  }
  return report;
}

}  // namespace musicnn
