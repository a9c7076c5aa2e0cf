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

#include "musicnn/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "musicnn/rng.hpp"

namespace musicnn {

// ---- PCA ----

JacobiSvd jacobi_svd(const Tensor<double>& a) {
  if (a.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "jacobi_svd expects a matrix");
  const std::size_t m = a.extent(0), n = a.extent(1);
  std::vector<std::vector<double>> col(n, std::vector<double>(m));
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) col[j][i] = a.at(i, j);
    v[j][j] = 1.0;
  }

  constexpr std::size_t kMaxSweeps = 80;
  constexpr double kTol = 1e-15;
  JacobiSvd out;
  for (; out.sweeps < kMaxSweeps; ++out.sweeps) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += col[p][i] * col[p][i];
          beta += col[q][i] * col[q][i];
          gamma += col[p][i] * col[q][i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        auto rotate = [c, s](std::vector<double>& x, std::vector<double>& y) {
          for (std::size_t i = 0; i < x.size(); ++i) {
            const double xi = x[i], yi = y[i];
            x[i] = c * xi - s * yi;
            y[i] = s * xi + c * yi;
          }
        };
        rotate(col[p], col[q]);
        rotate(v[p], v[q]);
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (double x : col[j]) s += x * x;
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });
  out.right_vectors = Tensor<double>({n, n});
  for (std::size_t r = 0; r < n; ++r) {
    out.singular_values.push_back(sigma[order[r]]);
    for (std::size_t i = 0; i < n; ++i) out.right_vectors.at(r, i) = v[order[r]][i];
  }
  return out;
}

PcaModel pca_fit(const Tensor<double>& data, std::size_t k) {
  if (data.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "pca_fit expects an [n, d] matrix");
  const std::size_t n = data.extent(0), d = data.extent(1);
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "pca_fit needs at least two samples");
  if (k < 1 || k > std::min(n, d)) {
    throw Error(ErrorCode::InvalidArgument, "pca_fit: k = " + std::to_string(k) + " outside [1, " +
                                                std::to_string(std::min(n, d)) + "]");
  }
  check_finite(data, "pca_fit input");

  PcaModel model;
  model.requested = k;
  model.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) model.mean[j] += data.at(i, j);
  for (double& m : model.mean) m /= static_cast<double>(n);
  Tensor<double> centered({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered.at(i, j) = data.at(i, j) - model.mean[j];

  // Directions as rows of [r, d] with their singular values.
  std::vector<double> sigma;
  std::vector<std::vector<double>> directions;
  if (d <= n) {
    const JacobiSvd svd = jacobi_svd(centered);
    sigma = svd.singular_values;
    for (std::size_t r = 0; r < d; ++r) {
      directions.emplace_back(svd.right_vectors.data() + r * d, svd.right_vectors.data() + (r + 1) * d);
    }
  } else {
    // A^T = U S V^T  =>  right singular vectors of A are A^T v / s.
    Tensor<double> transposed({d, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) transposed.at(j, i) = centered.at(i, j);
    const JacobiSvd svd = jacobi_svd(transposed);
    sigma = svd.singular_values;
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<double> u(d, 0.0);
      if (sigma[r] > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
          const double vi = svd.right_vectors.at(r, i);
          for (std::size_t j = 0; j < d; ++j) u[j] += centered.at(i, j) * vi;
        }
        for (double& x : u) x /= sigma[r];
      }
      directions.push_back(std::move(u));
    }
  }

  const double cutoff = sigma.empty() ? 0.0 : sigma[0] * 1e-10;
  std::size_t usable = 0;
  while (usable < sigma.size() && sigma[usable] > cutoff) ++usable;
  if (usable == 0) throw Error(ErrorCode::InvalidArgument, "pca_fit: data has zero variance");
  const std::size_t kept = std::min(k, usable);
  model.rank_deficient = kept < k;

  model.components = Tensor<double>({kept, d});
  for (std::size_t r = 0; r < kept; ++r) {
    std::vector<double>& u = directions[r];
    std::size_t peak = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(u[j]) > std::abs(u[peak])) peak = j;
    }
    const double sign = u[peak] < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) model.components.at(r, j) = sign * u[j];
    model.singular_values.push_back(sigma[r]);
  }
  return model;
}

std::vector<double> pca_transform(const PcaModel& model, std::span<const double> x) {
  const std::size_t d = model.dim();
  if (x.size() != d) {
    throw Error(ErrorCode::ShapeMismatch, "pca_transform: input has " + std::to_string(x.size()) +
                                              " dimensions, model expects " + std::to_string(d));
  }
  std::vector<double> out(model.k(), 0.0);
  for (std::size_t r = 0; r < model.k(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += model.components.at(r, j) * (x[j] - model.mean[j]);
    out[r] = s;
  }
  return out;
}

// ---- SVM ----

SvmModel svm_fit(const Tensor<double>& x, std::span<const std::size_t> labels, std::size_t n_classes,
                 const SvmConfig& config) {
  if (x.rank() != 2 || x.extent(0) != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "svm_fit: need an [n, d] matrix and n labels");
  }
  if (!(config.reg_strength >= 0.0)) throw Error(ErrorCode::InvalidArgument, "svm_fit: reg_strength must be >= 0");
  check_finite(x, "svm_fit input");
  const std::size_t n = x.extent(0), d = x.extent(1);
  std::set<std::size_t> present;
  for (std::size_t l : labels) {
    if (l >= n_classes) throw Error(ErrorCode::InvalidArgument, "svm_fit: label " + std::to_string(l) + " out of range");
    present.insert(l);
  }
  if (present.size() < 2) throw Error(ErrorCode::SingleClass, "svm_fit needs examples of at least two classes");

  const double lambda = config.reg_strength;
  double frob = static_cast<double>(n);  // bias column of ones
  for (double v : x.values()) frob += v * v;
  const double lipschitz = lambda + 2.0 / static_cast<double>(n) * frob;
  const double step = 1.0 / lipschitz;

  SvmModel model;
  model.config = config;
  model.weights = Tensor<double>({n_classes, d});
  model.bias.assign(n_classes, 0.0);
  model.objective.resize(n_classes);
  SplitMix64 rng(derive_seed(config.seed, "svm_init"));
  for (double& w : model.weights.values()) w = 0.01 * rng.normal();

  std::vector<double> margin_gap(n);
  for (std::size_t c = 0; c < n_classes; ++c) {
    double* w = model.weights.data() + c * d;
    double& b = model.bias[c];
    auto objective = [&] {
      double loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double y = labels[i] == c ? 1.0 : -1.0;
        double s = b;
        for (std::size_t j = 0; j < d; ++j) s += w[j] * x.at(i, j);
        margin_gap[i] = std::max(0.0, 1.0 - y * s);
        loss += margin_gap[i] * margin_gap[i];
      }
      double reg = 0.0;
      for (std::size_t j = 0; j < d; ++j) reg += w[j] * w[j];
      return loss / static_cast<double>(n) + 0.5 * lambda * reg;
    };

    double current = objective();
    model.objective[c].push_back(current);
    std::vector<double> gw(d);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      double gb = 0.0;
      for (std::size_t j = 0; j < d; ++j) gw[j] = lambda * w[j];
      for (std::size_t i = 0; i < n; ++i) {
        if (margin_gap[i] == 0.0) continue;
        const double y = labels[i] == c ? 1.0 : -1.0;
        const double coef = -2.0 / static_cast<double>(n) * margin_gap[i] * y;
        for (std::size_t j = 0; j < d; ++j) gw[j] += coef * x.at(i, j);
        gb += coef;
      }
      for (std::size_t j = 0; j < d; ++j) w[j] -= step * gw[j];
      b -= step * gb;
      const double next = objective();
      if (!std::isfinite(next) || next > current + 1e-12 * std::max(1.0, std::abs(current))) {
        throw Error(ErrorCode::NumericFault, "svm_fit: objective rose from " + std::to_string(current) + " to " +
                                                 std::to_string(next) + " at epoch " + std::to_string(epoch));
      }
      current = next;
      model.objective[c].push_back(current);
    }
  }
  return model;
}

SvmPrediction svm_predict(const SvmModel& model, std::span<const double> x) {
  const std::size_t d = model.dim();
  if (x.size() != d) {
    throw Error(ErrorCode::ShapeMismatch, "svm_predict: input has " + std::to_string(x.size()) +
                                              " dimensions, model expects " + std::to_string(d));
  }
  SvmPrediction p;
  for (std::size_t c = 0; c < model.classes(); ++c) {
    double s = model.bias[c];
    for (std::size_t j = 0; j < d; ++j) s += model.weights.at(c, j) * x[j];
    p.scores.push_back(s);
    if (s > p.scores[p.label]) p.label = c;
  }
  return p;
}

// ---- metrics ----

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels, std::string_view op) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + std::to_string(scores.size()) + " scores vs " +
                                              std::to_string(labels.size()) + " labels");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::NumericFault, std::string(op) + ": non-finite score");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw Error(ErrorCode::InvalidArgument, std::string(op) + ": labels must be 0 or 1");
  }
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels, "roc_auc");
  const std::size_t n = scores.size();
  std::uint64_t positives = 0;
  for (int l : labels) positives += static_cast<std::uint64_t>(l);
  const std::uint64_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorCode::DegenerateLabels, "roc_auc needs both positive and negative labels");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney count, so ties contribute integers.
  std::uint64_t twice_wins = 0, negatives_below = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    std::uint64_t pos = 0, neg = 0;
    while (end < n && scores[order[end]] == scores[order[start]]) {
      (labels[order[end]] ? pos : neg) += 1;
      ++end;
    }
    twice_wins += pos * (2 * negatives_below + neg);
    negatives_below += neg;
    start = end;
  }
  return static_cast<double>(twice_wins) / static_cast<double>(2 * positives * negatives);
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels, "pr_auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[order[r]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) throw Error(ErrorCode::NoPositives, "pr_auc needs at least one positive label");
  return sum / static_cast<double>(hits);
}

MacroMetrics macro_metrics(const Tensor<double>& scores, const Tensor<double>& labels) {
  if (scores.rank() != 2 || scores.shape() != labels.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "macro_metrics: scores " + shape_string(scores.shape()) + " vs labels " +
                                              shape_string(labels.shape()));
  }
  const std::size_t n = scores.extent(0), cols = scores.extent(1);
  MacroMetrics m;
  std::size_t roc_count = 0, pr_count = 0;
  std::vector<double> s(n);
  std::vector<int> l(n);
  for (std::size_t c = 0; c < cols; ++c) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = scores.at(i, c);
      const double v = labels.at(i, c);
      if (v != 0.0 && v != 1.0) throw Error(ErrorCode::InvalidArgument, "macro_metrics: labels must be 0 or 1");
      l[i] = v == 1.0 ? 1 : 0;
      pos += static_cast<std::size_t>(l[i]);
    }
    if (pos > 0 && pos < n) {
      m.roc_auc += roc_auc(s, l);
      ++roc_count;
    } else {
      m.roc_skipped.push_back(c);
    }
    if (pos > 0) {
      m.pr_auc += pr_auc(s, l);
      ++pr_count;
    } else {
      m.pr_skipped.push_back(c);
    }
  }
  if (roc_count == 0 || pr_count == 0) {
    throw Error(ErrorCode::AllColumnsDegenerate, "macro_metrics: no column has both classes present");
  }
  m.roc_auc /= static_cast<double>(roc_count);
  m.pr_auc /= static_cast<double>(pr_count);
  return m;
}

// ---- pipeline ----

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest '" + path.string() + "'");
  const std::filesystem::path base = path.parent_path();
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> labels;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "path,label,split") fail("expected header 'path,label,split'");
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 3) fail("expected 3 fields, found " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty()) fail("empty path or label");
    if (fields[2] != "train" && fields[2] != "test") fail("split must be 'train' or 'test'");
    std::filesystem::path p(fields[0]);
    if (p.is_relative()) p = base / p;
    m.rows.push_back({p, fields[1], fields[2]});
    labels.insert(fields[1]);
  }
  if (line_no == 0) fail("empty manifest");
  m.labels.assign(labels.begin(), labels.end());
  return m;
}

std::size_t DatasetManifest::label_index(const std::string& label) const {
  auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) throw Error(ErrorCode::InvalidArgument, "unknown label '" + label + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

std::string PipelineReport::text() const {
  std::ostringstream o;
  o << "feature: " << feature_key << '\n'
    << "labels: ";
  for (std::size_t i = 0; i < labels.size(); ++i) o << (i ? "," : "") << labels[i];
  o << '\n'
    << "train clips: " << train_size << '\n'
    << "test clips: " << test_size << '\n'
    << "embedding dim: " << embedding_dim << '\n'
    << "pca components: " << pca_used << " (requested " << pca_requested << ")\n"
    << "train accuracy: " << fixed(train_accuracy) << '\n'
    << "test accuracy: " << fixed(test_accuracy) << '\n';
  for (const auto& w : warnings) o << "warning: " << w << '\n';
  return o.str();
}

std::string PipelineReport::confusion_csv() const {
  std::ostringstream o;
  o << "true\\predicted";
  for (const auto& l : labels) o << ',' << l;
  o << '\n';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    o << labels[i];
    for (std::size_t v : confusion[i]) o << ',' << v;
    o << '\n';
  }
  return o.str();
}

template <typename T>
PipelineReport run_pipeline(const DatasetManifest& manifest, const Model<T>& model, const PipelineConfig& config) {
  PipelineReport report;
  report.labels = manifest.labels;
  report.feature_key = config.feature_key.empty() ? default_feature_key(model.config) : config.feature_key;
  const auto keys = feature_keys(model.config);
  if (std::find(keys.begin(), keys.end(), report.feature_key) == keys.end()) {
    throw Error(ErrorCode::UnknownFeatureKey, "model has no feature '" + report.feature_key + "'");
  }

  std::vector<std::vector<double>> train_x, test_x;
  std::vector<std::size_t> train_y, test_y;
  for (const auto& row : manifest.rows) {
    const Extraction e = extract(row.path, model, true);
    auto embedding = clip_embedding(e.features, report.feature_key, config.reduction);
    const std::size_t label = manifest.label_index(row.label);
    if (row.split == "train") {
      train_x.push_back(std::move(embedding));
      train_y.push_back(label);
    } else {
      test_x.push_back(std::move(embedding));
      test_y.push_back(label);
    }
  }
  if (train_x.empty() || test_x.empty()) {
    throw Error(ErrorCode::ConfigInvalid, "manifest needs non-empty train and test splits");
  }
  report.train_size = train_x.size();
  report.test_size = test_x.size();
  const std::size_t d = train_x.front().size();
  report.embedding_dim = d;

  Tensor<double> train_matrix({train_x.size(), d});
  for (std::size_t i = 0; i < train_x.size(); ++i) std::copy(train_x[i].begin(), train_x[i].end(), train_matrix.data() + i * d);

  report.pca_requested = config.pca_components;
  std::size_t k = config.pca_components;
  const std::size_t cap = std::min(train_x.size(), d);
  if (k > cap) {
    report.warnings.push_back("pca components clamped from " + std::to_string(k) + " to " + std::to_string(cap) +
                              " (train size " + std::to_string(train_x.size()) + ", embedding dim " +
                              std::to_string(d) + ")");
    k = cap;
  }
  const PcaModel pca = pca_fit(train_matrix, k);
  if (pca.rank_deficient) {
    report.warnings.push_back("rank deficient: only " + std::to_string(pca.k()) + " of " + std::to_string(k) +
                              " components have nonzero variance");
  }
  report.pca_used = pca.k();

  auto project = [&](const std::vector<std::vector<double>>& rows) {
    Tensor<double> out({rows.size(), pca.k()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto z = pca_transform(pca, rows[i]);
      std::copy(z.begin(), z.end(), out.data() + i * pca.k());
    }
    return out;
  };
  Tensor<double> train_z = project(train_x);
  Tensor<double> test_z = project(test_x);
  double sq = 0.0;
  for (double v : train_z.values()) sq += v * v;
  const double rms = std::sqrt(sq / static_cast<double>(train_z.size()));
  if (rms > 0.0) {
    for (double& v : train_z.values()) v /= rms;
    for (double& v : test_z.values()) v /= rms;
  }

  const SvmModel svm = svm_fit(train_z, train_y, manifest.labels.size(), config.svm);
  auto accuracy = [&](const Tensor<double>& z, const std::vector<std::size_t>& y, bool record) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const auto p = svm_predict(svm, std::span<const double>(z.data() + i * pca.k(), pca.k()));
      correct += p.label == y[i];
      if (record) ++report.confusion[y[i]][p.label];
    }
    return static_cast<double>(correct) / static_cast<double>(y.size());
  };
  report.confusion.assign(manifest.labels.size(), std::vector<std::size_t>(manifest.labels.size(), 0));
  report.train_accuracy = accuracy(train_z, train_y, false);
  report.test_accuracy = accuracy(test_z, test_y, true);
  return report;
}

template PipelineReport run_pipeline<float>(const DatasetManifest&, const Model<float>&, const PipelineConfig&);
template PipelineReport run_pipeline<double>(const DatasetManifest&, const Model<double>&, const PipelineConfig&);

}  // namespace musicnn
