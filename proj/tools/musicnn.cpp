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

// musicnn <tag|extract|transfer|train|export> ...

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "musicnn/extractor.hpp"
#include "musicnn/model_store.hpp"
#include "musicnn/tagger.hpp"
#include "musicnn/trainer.hpp"
#include "musicnn/transfer.hpp"

namespace {

using namespace musicnn;

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  f << text;
  if (!f) throw Error(ErrorCode::IoError, "short write to '" + path + "'");
}

int run(int argc, char** argv) {
  if (argc >= 2 && std::string(argv[1]) == "tag") {
    return tagger_main(std::vector<std::string>(argv + 2, argv + argc), std::cout, std::cerr);
  }

  CLI::App app{"Music auto-tagging models: feature extraction, transfer learning and training"};
  app.require_subcommand(1);
  app.footer("Tagging lives in the separate 'tagger' executable.");

  auto* extract_cmd = app.add_subcommand("extract", "Write one clip's per-patch features as CSV");
  std::string ex_file, ex_model = "MTT_musicnn", ex_feature, ex_out;
  extract_cmd->add_option("file", ex_file, "Input WAV file")->required();
  extract_cmd->add_option("-m,--model", ex_model, "Registry name or .mcn path")->capture_default_str();
  extract_cmd->add_option("--feature", ex_feature, "Feature key (default: penultimate or pool5)");
  extract_cmd->add_option("--out", ex_out, "Output CSV path")->required();

  auto* transfer_cmd = app.add_subcommand("transfer", "Embeddings + PCA + linear SVM on a manifest");
  std::string tr_manifest, tr_model = "MTT_musicnn", tr_feature, tr_report, tr_confusion, tr_reduction = "mean";
  PipelineConfig tr_config;
  transfer_cmd->add_option("--manifest", tr_manifest, "CSV with header path,label,split")->required();
  transfer_cmd->add_option("-m,--model", tr_model, "Registry name or .mcn path")->capture_default_str();
  transfer_cmd->add_option("--feature", tr_feature, "Feature key (default: penultimate or pool5)");
  transfer_cmd->add_option("--reduction", tr_reduction, "Across-patch reduction: mean or max")->capture_default_str();
  transfer_cmd->add_option("--pca", tr_config.pca_components, "PCA components")->capture_default_str();
  transfer_cmd->add_option("--seed", tr_config.svm.seed, "SVM seed")->capture_default_str();
  transfer_cmd->add_option("--reg", tr_config.svm.reg_strength, "SVM L2 strength")->capture_default_str();
  transfer_cmd->add_option("--epochs", tr_config.svm.epochs, "SVM gradient steps")->capture_default_str();
  transfer_cmd->add_option("--report", tr_report, "Also write the text report here");
  transfer_cmd->add_option("--confusion", tr_confusion, "Write the test confusion matrix CSV here");

  auto* train_cmd = app.add_subcommand("train", "Train a model from a key = value config file");
  std::string tn_config, tn_out, tn_log;
  train_cmd->add_option("--config", tn_config, "Training config")->required();
  train_cmd->add_option("--out", tn_out, "Output .mcn container")->required();
  train_cmd->add_option("--log", tn_log, "Training log CSV (overrides the config's 'log')");

  auto* export_cmd = app.add_subcommand("export", "Write a registry model to a .mcn container");
  std::string xp_model, xp_out;
  export_cmd->add_option("-m,--model", xp_model, "Registry name")->required();
  export_cmd->add_option("--out", xp_out, "Output .mcn path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (extract_cmd->parsed()) {
      const Model<float> model = resolve_model<float>(ex_model);
      const std::string key = ex_feature.empty() ? default_feature_key(model.config) : ex_feature;
      const Extraction e = extract(std::filesystem::path(ex_file), model, true);
      std::ofstream f(ex_out, std::ios::binary);
      if (!f) throw Error(ErrorCode::IoError, "cannot write '" + ex_out + "'");
      write_feature_csv(e.features, key, f);
    } else if (transfer_cmd->parsed()) {
      tr_config.feature_key = tr_feature;
      tr_config.reduction = parse_reduction(tr_reduction);
      const Model<float> model = resolve_model<float>(tr_model);
      const PipelineReport report = run_pipeline(DatasetManifest::load(tr_manifest), model, tr_config);
      std::cout << report.text();
      if (!tr_report.empty()) write_file(tr_report, report.text());
      if (!tr_confusion.empty()) write_file(tr_confusion, report.confusion_csv());
    } else if (train_cmd->parsed()) {
      TrainJob job = TrainJob::load(tn_config);
      if (!tn_log.empty()) job.log = tn_log;
      std::string log_csv;
      if (job.train.mode == NumericMode::Float64) {
        auto [model, log] = run_training<double>(job);
        save_model(model, tn_out, job.architecture);
        log_csv = log.csv();
      } else {
        auto [model, log] = run_training<float>(job);
        save_model(model, tn_out, job.architecture);
        log_csv = log.csv();
      }
      if (!job.log.empty()) write_file(job.log.string(), log_csv);
      else std::cout << log_csv;
    } else if (export_cmd->parsed()) {
      save_model(registry_model<float>(xp_model), xp_out, xp_model);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "musicnn: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
