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


#include "autous/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>

#include "autous/error.hpp"
#include "autous/media_io.hpp"
#include "autous/rng.hpp"

namespace autous::train {
namespace {

void Require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid train spec: " + what);
}

std::vector<int> LabelsOf(std::span<const data::VideoSample> samples) {
  std::vector<int> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.class_id);
  return y;
}

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::vector<std::string> ClassNamesOr(std::vector<std::string> names, int num_classes) {
  if (static_cast<int>(names.size()) == num_classes) return names;
  if (num_classes == data::kDefaultNumClasses) return data::DefaultClassNames();
  names.clear();
  for (int c = 0; c < num_classes; ++c) names.push_back("class" + std::to_string(c));
  return names;
}

}  // namespace

void TrainSpec::Validate() const {
  Require(optimizer == "adam", "optimizer must be adam");
  Require(batch_size >= 1, "batch_size must be >= 1");
  Require(learning_rate >= 0 && std::isfinite(learning_rate), "learning_rate must be >= 0");
  Require(epochs >= 0, "epochs must be >= 0");
  Require(beta1 >= 0 && beta1 < 1, "beta1 must be in [0, 1)");
  Require(beta2 >= 0 && beta2 < 1, "beta2 must be in [0, 1)");
  Require(adam_epsilon > 0, "adam_epsilon must be > 0");
  Require(weight_decay >= 0, "weight_decay must be >= 0");
  Require(bn_momentum > 0 && bn_momentum <= 1, "bn_momentum must be in (0, 1]");
}

nlohmann::json ToJson(const TrainSpec& s) {
  return {{"optimizer", s.optimizer},       {"beta1", s.beta1},
          {"beta2", s.beta2},               {"adam_epsilon", s.adam_epsilon},
          {"weight_decay", s.weight_decay}, {"batch_size", s.batch_size},
          {"learning_rate", s.learning_rate}, {"epochs", s.epochs},
          {"input_size", {s.input_height, s.input_width}}, {"seed", s.seed},
          {"bn_momentum", s.bn_momentum}};
}

TrainSpec TrainSpecFromJson(const nlohmann::json& j) {
  TrainSpec s;
  try {
    auto get = [&](const char* key, auto& out) {
      if (j.contains(key)) j.at(key).get_to(out);
    };
    get("optimizer", s.optimizer);
    get("beta1", s.beta1);
    get("beta2", s.beta2);
    get("adam_epsilon", s.adam_epsilon);
    get("weight_decay", s.weight_decay);
    get("batch_size", s.batch_size);
    get("learning_rate", s.learning_rate);
    get("epochs", s.epochs);
    get("seed", s.seed);
    get("bn_momentum", s.bn_momentum);
    get("snapshot_dir", s.snapshot_dir);
    if (j.contains("input_size")) {
      s.input_height = j.at("input_size").at(0).get<int>();
      s.input_width = j.at("input_size").at(1).get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train spec: ") + e.what());
  }
  s.Validate();
  return s;
}

// ---------------------------------------------------------------------------

Adam::Adam(const TrainSpec& spec, const model::ParameterSet<float>& params) : spec_(spec) {
  for (const auto& p : params.entries()) {
    m_.emplace_back(p.trainable ? p.value.size() : 0, 0.0);
    v_.emplace_back(p.trainable ? p.value.size() : 0, 0.0);
  }
}

void Adam::Step(model::ParameterSet<float>& params, const model::Gradients<float>& grads) {
  ++t_;
  const double b1 = spec_.beta1, b2 = spec_.beta2;
  const double c1 = 1 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double w = p.value[k];
      const double g = grads[i][k] + spec_.weight_decay * w;
      m[k] = b1 * m[k] + (1 - b1) * g;
      v[k] = b2 * v[k] + (1 - b2) * g * g;
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      p.value[k] = static_cast<float>(w - spec_.learning_rate * mhat / (std::sqrt(vhat) + spec_.adam_epsilon));
    }
  }
}

TrainResult Train(const model::ModelConfig& config, std::span<const data::VideoSample> train_set,
                  const TrainSpec& spec, const EpochCallback& on_epoch) {
  spec.Validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  model::CtuNet<float> net(config);
  Adam adam(spec, net.params());
  TrainResult result;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  model::ForwardOptions fo;
  fo.training = true;
  fo.dropout = true;
  long step = 0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    Rng shuffle(MixSeed(spec.seed, static_cast<std::uint64_t>(epoch)));
    shuffle.Shuffle(order);
    double epoch_loss = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(spec.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(spec.batch_size));
      std::vector<data::VideoSample> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train_set[order[i]]);
        labels.push_back(train_set[order[i]].class_id);
      }
      fo.dropout_seed = MixSeed(spec.seed ^ 0xd1b54a32d192ed03ULL, static_cast<std::uint64_t>(step));
      const auto x = model::MakeBatch<float>(batch);
      const auto fwd = net.Forward(x, fo, true);
      Tensor<float> dlogits;
      const double loss = model::CrossEntropy(fwd.prediction, labels, &dlogits);
      if (!std::isfinite(loss)) {
        nlohmann::json snap = {{"epoch", epoch}, {"step", step}, {"loss", "nan"},
                               {"recent_losses", nlohmann::json::array()}, {"spec", ToJson(spec)}};
        const std::size_t from = result.step_losses.size() > 10 ? result.step_losses.size() - 10 : 0;
        for (std::size_t i = from; i < result.step_losses.size(); ++i) snap["recent_losses"].push_back(result.step_losses[i]);
        nlohmann::json norms = nlohmann::json::object();
        for (const auto& p : net.params().entries()) {
          double s = 0;
          for (float v : p.value.values()) s += static_cast<double>(v) * v;
          norms[p.name] = std::isfinite(s) ? nlohmann::json(std::sqrt(s)) : nlohmann::json("non-finite");
        }
        snap["param_norms"] = norms;
        if (!spec.snapshot_dir.empty()) {
          std::filesystem::create_directories(spec.snapshot_dir);
          const auto path = std::filesystem::path(spec.snapshot_dir) / "divergence.ckpt";
          model::SaveCheckpoint(model::MakeCheckpoint(net, snap), path.string());
          snap["snapshot"] = path.string();
        }
        throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(step),
                              snap.dump());
      }
      const auto grads = net.Backward(*fwd.trace, dlogits);
      net.UpdateRunningStats(*fwd.trace, spec.bn_momentum);
      adam.Step(net.params(), grads);
      result.step_losses.push_back(loss);
      epoch_loss += loss * static_cast<double>(end - start);
      seen += end - start;
      ++step;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(seen));
    if (on_epoch) on_epoch(epoch, result.epoch_losses.back());
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.checkpoint = model::MakeCheckpoint(net, {{"train_spec", ToJson(spec)},
                                                  {"train_samples", train_set.size()},
                                                  {"steps", step},
                                                  {"epoch_losses", result.epoch_losses}});
  return result;
}

std::vector<data::VideoSample> LoadSplit(const data::DatasetManifest& manifest, data::Split split,
                                         const model::ModelConfig& config) {
  const data::VideoGeometry geo{config.input.frames, config.input.height, config.input.width};
  std::vector<data::VideoSample> out;
  for (const auto& e : manifest.EntriesIn(split)) {
    auto s = data::LoadVideo(e, geo, manifest.base_dir);
    if (s.channels() != config.input.channels) s = data::ConvertChannels(s, config.input.channels);
    if (s.class_id >= config.num_classes) {
      throw ValidationError("entry " + e.id + " has class id " + std::to_string(s.class_id) + " but the model has " +
                            std::to_string(config.num_classes) + " classes");
    }
    out.push_back(std::move(s));
  }
  return out;
}

TrainResult Train(const model::ModelConfig& config, const data::DatasetManifest& manifest, const TrainSpec& spec,
                  const EpochCallback& on_epoch) {
  manifest.Validate();
  const auto train_set = LoadSplit(manifest, data::Split::kTrain, config);
  std::vector<int> present(static_cast<std::size_t>(config.num_classes), 0);
  for (const auto& s : train_set) present[static_cast<std::size_t>(s.class_id)] = 1;
  for (int c = 0; c < config.num_classes; ++c) {
    if (!present[static_cast<std::size_t>(c)]) {
      throw ValidationError("train split has no entry for class " + std::to_string(c));
    }
  }
  auto result = Train(config, train_set, spec, on_epoch);
  result.checkpoint.metadata["class_names"] = manifest.class_names;
  return result;
}

// ---------------------------------------------------------------------------

double AucOneVsRest(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw ValidationError("scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks of the positives (Mann-Whitney U).
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[idx[k]]) {
        rank_sum += mid;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("AUC is undefined without both positives and negatives");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

MetricsReport ComputeMetrics(std::span<const int> labels, std::span<const double> probs, int num_classes,
                             std::vector<std::string> class_names) {
  if (labels.empty()) throw ValidationError("cannot evaluate an empty split");
  const std::size_t C = static_cast<std::size_t>(num_classes);
  if (probs.size() != labels.size() * C) throw ValidationError("probability matrix does not match labels");
  MetricsReport r;
  r.class_names = ClassNamesOr(std::move(class_names), num_classes);
  r.total = labels.size();
  r.confusion.assign(C, std::vector<long>(C, 0));
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw ValidationError("label " + std::to_string(y) + " outside class range");
    const double* row = probs.data() + i * C;
    const std::size_t pred = static_cast<std::size_t>(std::max_element(row, row + C) - row);
    ++r.confusion[static_cast<std::size_t>(y)][pred];
    if (pred == static_cast<std::size_t>(y)) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  r.recall.assign(C, 0.0);
  r.precision.assign(C, 0.0);
  r.per_class_auc.assign(C, std::nullopt);
  std::vector<double> scores(labels.size());
  // std::vector<bool> has no contiguous storage to view as a span
  std::unique_ptr<bool[]> pos(new bool[labels.size()]);
  const std::span<const bool> pos_view(pos.get(), labels.size());
  for (std::size_t c = 0; c < C; ++c) {
    long support = 0, predicted = 0;
    for (std::size_t k = 0; k < C; ++k) {
      support += r.confusion[c][k];
      predicted += r.confusion[k][c];
    }
    if (support > 0) r.recall[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(support);
    if (predicted > 0) r.precision[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(predicted);
    std::size_t npos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs[i * C + c];
      pos[i] = labels[i] == static_cast<int>(c);
      npos += pos[i] ? 1 : 0;
    }
    if (npos > 0 && npos < labels.size()) r.per_class_auc[c] = AucOneVsRest(scores, pos_view);
  }
  r.macro_recall = std::accumulate(r.recall.begin(), r.recall.end(), 0.0) / static_cast<double>(C);
  r.macro_precision = std::accumulate(r.precision.begin(), r.precision.end(), 0.0) / static_cast<double>(C);
  return r;
}

nlohmann::json ToJson(const MetricsReport& r) {
  nlohmann::json auc = nlohmann::json::object();
  for (std::size_t c = 0; c < r.per_class_auc.size(); ++c) {
    auc[r.class_names[c]] = r.per_class_auc[c] ? nlohmann::json(*r.per_class_auc[c]) : nlohmann::json("n/a");
  }
  return {{"total", r.total},         {"accuracy", r.accuracy},   {"macro_recall", r.macro_recall},
          {"macro_precision", r.macro_precision}, {"recall", r.recall}, {"precision", r.precision},
          {"per_class_auc", auc},     {"confusion", r.confusion}, {"class_names", r.class_names}};
}

MetricsReport Evaluate(const model::CtuNet<float>& net, std::span<const data::VideoSample> samples,
                       std::vector<std::string> class_names, int batch_size) {
  if (samples.empty()) throw ValidationError("cannot evaluate an empty split");
  const int C = net.config().num_classes;
  std::vector<int> labels = LabelsOf(samples);
  std::vector<double> probs;
  probs.reserve(samples.size() * static_cast<std::size_t>(C));
  const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    const std::size_t end = std::min(samples.size(), start + bs);
    const auto x = model::MakeBatch<float>(samples.subspan(start, end - start));
    const auto pred = net.Predict(x);
    for (float p : pred.probs.values()) probs.push_back(p);
  }
  return ComputeMetrics(labels, probs, C, std::move(class_names));
}

MetricsReport Evaluate(const model::Checkpoint& ckpt, const data::DatasetManifest& manifest, data::Split split) {
  const auto net = model::ModelFromCheckpoint<float>(ckpt);
  const auto samples = LoadSplit(manifest, split, ckpt.config);
  if (samples.empty()) throw ValidationError(std::string("split '") + data::SplitName(split) + "' is empty");
  return Evaluate(net, samples, manifest.class_names);
}

// ---------------------------------------------------------------------------

AblationTable RunAblations(const model::ModelConfig& base, std::span<const data::VideoSample> train_set,
                           std::span<const data::VideoSample> test_set, const TrainSpec& spec,
                           std::vector<std::string> class_names) {
  AblationTable table;
  table.metadata = {{"model_seed", base.seed},
                    {"train_spec", ToJson(spec)},
                    {"train_samples", train_set.size()},
                    {"test_samples", test_set.size()}};
  for (model::Ablation ab : model::AllAblations()) {
    AblationRow row;
    row.variant = ab;
    model::ModelConfig cfg = base;
    cfg.ablation = ab;
    row.metadata = {{"variant", model::AblationName(ab)},
                    {"model_seed", cfg.seed},
                    {"train_spec", ToJson(spec)},
                    {"train_samples", train_set.size()},
                    {"test_samples", test_set.size()}};
    try {
      auto trained = Train(cfg, train_set, spec);
      const auto net = model::ModelFromCheckpoint<float>(trained.checkpoint);
      row.metrics = Evaluate(net, test_set, class_names);
      row.metadata["train_seconds"] = trained.seconds;
      row.training = std::move(trained);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

AblationTable RunAblations(const model::ModelConfig& base, const data::DatasetManifest& manifest,
                           const TrainSpec& spec) {
  manifest.Validate();
  const auto train_set = LoadSplit(manifest, data::Split::kTrain, base);
  const auto test_set = LoadSplit(manifest, data::Split::kTest, base);
  auto table = RunAblations(base, train_set, test_set, spec, manifest.class_names);
  table.metadata["manifest_source"] = manifest.source_name;
  return table;
}

// ---------------------------------------------------------------------------

std::string FormatPercent(double fraction) { return Fixed(100.0 * fraction, 2); }

std::string MetricsTableCsv(std::span<const NamedReport> reports) {
  std::string out = "variant,accuracy,recall,precision\n";
  for (const auto& r : reports) {
    out += r.variant + "," + FormatPercent(r.metrics.accuracy) + "," + FormatPercent(r.metrics.macro_recall) + "," +
           FormatPercent(r.metrics.macro_precision) + "\n";
  }
  return out;
}

std::string AucTableCsv(std::span<const NamedReport> reports) {
  if (reports.empty()) throw ValidationError("no reports to tabulate");
  std::string out = "variant";
  for (const auto& name : reports[0].metrics.class_names) out += "," + name;
  out += "\n";
  for (const auto& r : reports) {
    out += r.variant;
    for (const auto& auc : r.metrics.per_class_auc) out += "," + (auc ? Fixed(*auc, 4) : std::string("n/a"));
    out += "\n";
  }
  return out;
}

nlohmann::json RadarData(std::span<const NamedReport> reports) {
  if (reports.empty()) throw ValidationError("no reports for radar data");
  nlohmann::json j = {{"axes", reports[0].metrics.class_names}, {"series", nlohmann::json::array()}};
  for (const auto& r : reports) {
    nlohmann::json auc = nlohmann::json::object();
    for (std::size_t c = 0; c < r.metrics.class_names.size(); ++c) {
      const auto& v = r.metrics.per_class_auc[c];
      auc[r.metrics.class_names[c]] = v ? nlohmann::json(*v) : nlohmann::json("n/a");
    }
    j["series"].push_back({{"variant", r.variant}, {"auc", auc}});
  }
  return j;
}

void EmitReport(std::span<const NamedReport> reports, const std::filesystem::path& dir) {
  if (reports.empty()) throw ValidationError("emit_report needs at least one report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  media::WriteFileAtomic(dir / "metrics.csv", MetricsTableCsv(reports));
  media::WriteFileAtomic(dir / "auc.csv", AucTableCsv(reports));
  media::WriteFileAtomic(dir / "radar.json", RadarData(reports).dump(2) + "\n");
}

std::string LossCurveCsv(std::span<const double> step_losses) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < step_losses.size(); ++i) out += std::to_string(i) + "," + Fixed(step_losses[i], 6) + "\n";
  return out;
}

std::string RenderRadarSvg(const nlohmann::json& radar, int size) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  const auto axes = radar.at("axes").get<std::vector<std::string>>();
  if (axes.size() < 3) throw ValidationError("radar chart needs at least 3 axes");
  const double cx = size / 2.0, cy = size / 2.0, rad = size * 0.34;
  const std::size_t n = axes.size();
  auto point = [&](std::size_t k, double v) {
    const double ang = -std::numbers::pi / 2 + 2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    return std::make_pair(cx + rad * v * std::cos(ang), cy + rad * v * std::sin(ang));
  };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << " " << size << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int ring = 1; ring <= 5; ++ring) {
    svg << "<polygon fill=\"none\" stroke=\"#ccc\" points=\"";
    for (std::size_t k = 0; k < n; ++k) {
      const auto [x, y] = point(k, ring / 5.0);
      svg << Fixed(x, 1) << "," << Fixed(y, 1) << " ";
    }
    svg << "\"/>\n";
  }
  for (std::size_t k = 0; k < n; ++k) {
    const auto [x, y] = point(k, 1.0);
    const auto [lx, ly] = point(k, 1.14);
    svg << "<line x1=\"" << cx << "\" y1=\"" << cy << "\" x2=\"" << Fixed(x, 1) << "\" y2=\"" << Fixed(y, 1)
        << "\" stroke=\"#ccc\"/>\n";
    svg << "<text x=\"" << Fixed(lx, 1) << "\" y=\"" << Fixed(ly, 1) << "\" text-anchor=\"middle\">" << axes[k]
        << "</text>\n";
  }
  std::size_t si = 0;
  for (const auto& series : radar.at("series")) {
    const char* color = kColors[si % std::size(kColors)];
    svg << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < n; ++k) {
      const auto& v = series.at("auc").at(axes[k]);
      const auto [x, y] = point(k, v.is_number() ? v.get<double>() : 0.0);
      svg << Fixed(x, 1) << "," << Fixed(y, 1) << " ";
    }
    svg << "\"/>\n";
    svg << "<text x=\"10\" y=\"" << 20 + 16 * si << "\" fill=\"" << color << "\">"
        << series.at("variant").get<std::string>() << "</text>\n";
    ++si;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace autous::train
