// Copyright 2026 The autous Authors. All Rights Reserved.
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


// Minibatch Adam training on cross-entropy, the evaluation metrics, ablation
// sweeps and report emission.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autous/checkpoint.hpp"
#include "autous/ctu_net.hpp"
#include "autous/video_data.hpp"

namespace autous::train {

struct TrainSpec {
  std::string optimizer = "adam";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// L2 penalty added to the gradient (coupled, as in classic Adam).
  double weight_decay = 1e-4;
  int batch_size = 4;
  double learning_rate = 1e-3;
  int epochs = 10;
  int input_height = 32;
  int input_width = 32;
  std::uint64_t seed = 0;
  double bn_momentum = 0.1;
  /// Where a diagnostic checkpoint is written when the loss diverges.
  std::string snapshot_dir;

  /// Throws ConfigError.
  void Validate() const;
};

nlohmann::json ToJson(const TrainSpec& spec);
TrainSpec TrainSpecFromJson(const nlohmann::json& j);

struct TrainResult {
  model::Checkpoint checkpoint;
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  double seconds = 0;
};

/// Called after every epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(int, double)>;

class Adam {
 public:
  Adam(const TrainSpec& spec, const model::ParameterSet<float>& params);
  /// One update of every trainable parameter.
  void Step(model::ParameterSet<float>& params, const model::Gradients<float>& grads);
  long steps() const { return t_; }

 private:
  TrainSpec spec_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

/// Trains from the model config's seed-determined initialization. Throws
/// DivergenceError (detail holds a JSON diagnostic) on a non-finite loss.
TrainResult Train(const model::ModelConfig& config, std::span<const data::VideoSample> train_set,
                  const TrainSpec& spec, const EpochCallback& on_epoch = {});

/// Loads the manifest's train split at the model's input geometry and trains.
TrainResult Train(const model::ModelConfig& config, const data::DatasetManifest& manifest, const TrainSpec& spec,
                  const EpochCallback& on_epoch = {});

/// Loads one split of a manifest at the model's input geometry and channel
/// count.
std::vector<data::VideoSample> LoadSplit(const data::DatasetManifest& manifest, data::Split split,
                                         const model::ModelConfig& config);

struct MetricsReport {
  std::vector<std::string> class_names;
  std::size_t total = 0;
  double accuracy = 0;
  double macro_recall = 0;
  double macro_precision = 0;
  std::vector<double> recall;     // per class, 0 when undefined
  std::vector<double> precision;  // per class, 0 when undefined
  /// One-vs-rest AUC; nullopt when the class has no positives or no negatives.
  std::vector<std::optional<double>> per_class_auc;
  /// confusion[true][predicted]
  std::vector<std::vector<long>> confusion;
};

nlohmann::json ToJson(const MetricsReport& report);

/// Mann-Whitney estimate P(s+ > s-) + P(s+ = s-) / 2. Throws ValidationError
/// when all labels are equal.
double AucOneVsRest(std::span<const double> scores, std::span<const bool> positive);

/// Metrics from labels and per-sample class probabilities (row-major [N, C]).
/// Predictions are argmax with ties to the lowest class id.
MetricsReport ComputeMetrics(std::span<const int> labels, std::span<const double> probs, int num_classes,
                             std::vector<std::string> class_names = {});

/// Eval-mode (running statistics) predictions over a sample set.
MetricsReport Evaluate(const model::CtuNet<float>& model, std::span<const data::VideoSample> samples,
                       std::vector<std::string> class_names = {}, int batch_size = 8);
MetricsReport Evaluate(const model::Checkpoint& checkpoint, const data::DatasetManifest& manifest, data::Split split);

struct AblationRow {
  model::Ablation variant = model::Ablation::kFull;
  std::optional<MetricsReport> metrics;
  std::string error;  // set when training or evaluation failed
  nlohmann::json metadata;
  std::optional<TrainResult> training;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  nlohmann::json metadata;
};

/// Trains and evaluates the four variants with identical seed, split and spec.
/// A failing variant records its error; the others still run.
AblationTable RunAblations(const model::ModelConfig& base, std::span<const data::VideoSample> train_set,
                           std::span<const data::VideoSample> test_set, const TrainSpec& spec,
                           std::vector<std::string> class_names = {});
AblationTable RunAblations(const model::ModelConfig& base, const data::DatasetManifest& manifest,
                           const TrainSpec& spec);

/// Percent with two decimals, e.g. 0.8673 -> "86.73".
std::string FormatPercent(double fraction);

struct NamedReport {
  std::string variant;
  MetricsReport metrics;
};

/// `variant,accuracy,recall,precision` in percent.
std::string MetricsTableCsv(std::span<const NamedReport> reports);
/// `variant,<class>...` with "n/a" for undefined AUC.
std::string AucTableCsv(std::span<const NamedReport> reports);
/// {"axes": [class...], "series": [{"variant", "auc": {class: value | "n/a"}}]}
nlohmann::json RadarData(std::span<const NamedReport> reports);
/// Writes metrics.csv, auc.csv and radar.json into `dir` (created if needed).
void EmitReport(std::span<const NamedReport> reports, const std::filesystem::path& dir);

/// `step,loss` lines.
std::string LossCurveCsv(std::span<const double> step_losses);

/// Radar chart of AUC per class, one polygon per series.
std::string RenderRadarSvg(const nlohmann::json& radar, int size = 480);

}  // namespace autous::train
