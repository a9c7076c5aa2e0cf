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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "musicnn/extractor.hpp"
#include "musicnn/model_store.hpp"
#include "musicnn/tagger.hpp"
#include "musicnn/transfer.hpp"

namespace py = pybind11;
using namespace musicnn;

namespace {

py::array_t<double> to_numpy(const Tensor<double>& t) {
  py::array_t<double> out(t.shape());
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

std::vector<double> as_vector(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  return {a.data(), a.data() + a.size()};
}

std::vector<int> as_labels(py::array_t<int, py::array::c_style | py::array::forcecast> a) {
  return {a.data(), a.data() + a.size()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of musicnn_cpp";

  static py::exception<Error> error(m, "MusicnnError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error(e.what());
    }
  });

  m.def("registry_names", &registry_names, "Names of the built-in models.");

  m.def(
      "vocabulary", [](const std::string& model) { return registry_get(model).tags; }, py::arg("model"),
      "Ordered tag vocabulary of a registry model.");

  m.def(
      "top_tags",
      [](const std::string& file, const std::string& model, std::size_t top_n) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& t : top_tags(compute_taggram(std::filesystem::path(file), resolve_model<float>(model)), top_n)) {
          out.emplace_back(t.tag, t.score);
        }
        return out;
      },
      py::arg("file"), py::arg("model") = "MTT_musicnn", py::arg("topN") = 3,
      "Top-N (tag, score) pairs by mean activation over the clip.");

  m.def(
      "taggram",
      [](const std::string& file, const std::string& model) {
        const Taggram g = compute_taggram(std::filesystem::path(file), resolve_model<float>(model));
        return py::make_tuple(to_numpy(g.values), g.tags);
      },
      py::arg("file"), py::arg("model") = "MTT_musicnn", "Per-patch tag activations and the vocabulary.");

  m.def(
      "extractor",
      [](const std::string& file, const std::string& model, bool extract_features) {
        const Extraction e = extract(std::filesystem::path(file), resolve_model<float>(model), extract_features);
        py::dict features;
        for (const auto& [key, value] : e.features) features[py::str(key)] = to_numpy(value);
        return py::make_tuple(to_numpy(e.taggram.values), e.tags, features);
      },
      py::arg("file"), py::arg("model") = "MTT_musicnn", py::arg("extract_features") = true,
      "(taggram, tags, features) with features stacked over patches.");

  m.def(
      "export_model",
      [](const std::string& model, const std::string& path) { save_model(registry_model<float>(model), path, model); },
      py::arg("model"), py::arg("path"), "Write a registry model to a .mcn container.");

  m.def(
      "roc_auc",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> scores,
         py::array_t<int, py::array::c_style | py::array::forcecast> labels) {
        return roc_auc(as_vector(scores), as_labels(labels));
      },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "pr_auc",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> scores,
         py::array_t<int, py::array::c_style | py::array::forcecast> labels) {
        return pr_auc(as_vector(scores), as_labels(labels));
      },
      py::arg("scores"), py::arg("labels"));
}
