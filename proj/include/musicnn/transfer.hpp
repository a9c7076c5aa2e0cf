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

// Downstream classification on clip embeddings (PCA + one-vs-rest linear
// SVM) and ranking metrics.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "musicnn/extractor.hpp"

namespace musicnn {

// ---- PCA ----

struct PcaModel {
  std::vector<double> mean;            // [d]
  Tensor<double> components;           // [k, d], orthonormal rows
  std::vector<double> singular_values;  // [k], descending
  std::size_t requested = 0;
  bool rank_deficient = false;  // fewer than `requested` usable directions

  std::size_t k() const { return singular_values.size(); }
  std::size_t dim() const { return mean.size(); }
};

/// Top-k right singular directions of the centered [n, d] data, computed by
/// one-sided Jacobi SVD. Each component's largest-magnitude entry is positive.
/// k is reduced (with rank_deficient set) when the data has fewer than k
/// nonzero singular values.
PcaModel pca_fit(const Tensor<double>& data, std::size_t k);

std::vector<double> pca_transform(const PcaModel& model, std::span<const double> x);

/// Thin SVD of an [m, n] matrix by one-sided Jacobi rotations in cyclic order.
/// Returns singular values (descending) and the matching right singular
/// vectors as rows of an [n, n] tensor.
struct JacobiSvd {
  std::vector<double> singular_values;
  Tensor<double> right_vectors;
  std::size_t sweeps = 0;
};
JacobiSvd jacobi_svd(const Tensor<double>& a);

// ---- SVM ----

struct SvmConfig {
  double reg_strength = 1e-3;
  std::size_t epochs = 1000;
  std::uint64_t seed = 0;
};

struct SvmModel {
  Tensor<double> weights;    // [classes, d]
  std::vector<double> bias;  // [classes]
  SvmConfig config;
  std::vector<std::vector<double>> objective;  // per class, per epoch (plus the initial value)

  std::size_t classes() const { return bias.size(); }
  std::size_t dim() const { return weights.extent(1); }
};

/// One-vs-rest squared hinge: for class c minimizes
///   (1/n) sum_i max(0, 1 - y_ic (w_c . x_i + b_c))^2 + (lambda / 2) |w_c|^2
/// by full-batch gradient descent with step 1 / L,
///   L = lambda + (2/n) |[X, 1]|_F^2.
/// Throws SingleClass when fewer than two classes have examples and
/// NumericFault if an epoch increases the objective.
SvmModel svm_fit(const Tensor<double>& x, std::span<const std::size_t> labels, std::size_t n_classes,
                 const SvmConfig& config);

struct SvmPrediction {
  std::size_t label = 0;
  std::vector<double> scores;
};

/// Highest affine score wins; ties go to the lower class index.
SvmPrediction svm_predict(const SvmModel& model, std::span<const double> x);

// ---- metrics ----

/// Mann-Whitney: (#{pos > neg} + 0.5 #{pos == neg}) / (P N). Labels are 0/1.
/// Throws DegenerateLabels unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Average precision over positives in descending-score order, equal scores
/// ordered by ascending index. Throws NoPositives.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

struct MacroMetrics {
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  std::vector<std::size_t> roc_skipped;  // columns lacking one class
  std::vector<std::size_t> pr_skipped;   // columns without positives
};

/// Column-averaged metrics of [n, tags] scores against 0/1 labels of the same
/// shape. Throws AllColumnsDegenerate if no column qualifies for either metric.
MacroMetrics macro_metrics(const Tensor<double>& scores, const Tensor<double>& labels);

// ---- pipeline ----

struct ManifestRow {
  std::filesystem::path path;
  std::string label;
  std::string split;  // "train" or "test"
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;
  std::vector<std::string> labels;  // sorted

  /// CSV with header `path,label,split`; relative paths resolve against the
  /// manifest's directory.
  static DatasetManifest load(const std::filesystem::path& path);
  std::size_t label_index(const std::string& label) const;
};

struct PipelineConfig {
  std::string feature_key;  // empty: default_feature_key()
  Reduction reduction = Reduction::Mean;
  std::size_t pca_components = 128;
  SvmConfig svm;
};

struct PipelineReport {
  std::vector<std::string> labels;
  std::string feature_key;
  std::size_t train_size = 0, test_size = 0;
  std::size_t embedding_dim = 0;
  std::size_t pca_requested = 0, pca_used = 0;
  std::vector<std::string> warnings;
  double train_accuracy = 0.0, test_accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted] on the test split

  std::string text() const;
  std::string confusion_csv() const;
};

/// Clip embeddings -> PCA fitted on the train split -> SVM -> test evaluation.
/// PCA outputs are divided by the RMS of the projected train data before the
/// SVM so its step size does not depend on the feature scale.
template <typename T>
PipelineReport run_pipeline(const DatasetManifest& manifest, const Model<T>& model, const PipelineConfig& config);

}  // namespace musicnn
