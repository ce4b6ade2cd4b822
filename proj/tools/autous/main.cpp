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

// autous command line. Results go to stdout, progress and errors to stderr.
//
// Exit codes: 0 success, 1 negative result (dataset rejected), 2 usage,
// 3 invalid input, 4 runtime failure.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "autous/app_service.hpp"
#include "autous/assessment.hpp"
#include "autous/checkpoint.hpp"
#include "autous/diagnosis_agent.hpp"
#include "autous/error.hpp"
#include "autous/gradient_check.hpp"
#include "autous/media_io.hpp"
#include "autous/rng.hpp"
#include "autous/train_eval.hpp"
#include "autous/video_data.hpp"

namespace {

using nlohmann::json;
using namespace autous;

enum ExitCode { kOk = 0, kNegative = 1, kUsage = 2, kInvalid = 3, kRuntime = 4 };

int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation:
    case ErrorKind::kConfig:
    case ErrorKind::kDecode:
    case ErrorKind::kNotFound:
    case ErrorKind::kConflict:
    case ErrorKind::kTransition: return kInvalid;
    default: return kRuntime;
  }
}

struct ModelOptions {
  std::string preset = "desk";
  std::string config_path;
  std::string ablation = "full";
  std::optional<std::uint64_t> seed;

  void Attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Model size preset")
        ->check(CLI::IsMember({"tiny", "desk", "full"}))
        ->capture_default_str();
    cmd->add_option("--model-config", config_path, "Model config JSON (overrides --preset)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--ablation", ablation, "full, no_slow, no_fast or no_freq")->capture_default_str();
    cmd->add_option("--model-seed", seed, "Initialization seed");
  }

  model::ModelConfig Resolve() const {
    model::ModelConfig cfg;
    if (!config_path.empty()) {
      json j = json::parse(media::ReadFileBytes(config_path), nullptr, false);
      if (j.is_discarded()) throw ConfigError("model config " + config_path + " is not valid JSON");
      cfg = model::ModelConfigFromJson(j);
    } else if (preset == "tiny") {
      cfg = model::ModelConfig::Tiny();
    } else if (preset == "full") {
      cfg = model::ModelConfig::Full();
    } else {
      cfg = model::ModelConfig::Desk();
    }
    cfg.ablation = model::ParseAblation(ablation);
    if (seed) cfg.seed = *seed;
    cfg.Validate();
    return cfg;
  }
};

struct TrainOptions {
  train::TrainSpec spec;
  std::string spec_path;

  void Attach(CLI::App* cmd) {
    cmd->add_option("--train-config", spec_path, "Training spec JSON")->check(CLI::ExistingFile);
    cmd->add_option("--epochs", spec.epochs)->capture_default_str();
    cmd->add_option("--lr", spec.learning_rate)->capture_default_str();
    cmd->add_option("--batch", spec.batch_size)->capture_default_str();
    cmd->add_option("--weight-decay", spec.weight_decay)->capture_default_str();
    cmd->add_option("--seed", spec.seed, "Shuffle and dropout seed")->capture_default_str();
    cmd->add_option("--snapshot-dir", spec.snapshot_dir, "Where to write a diagnostic checkpoint on divergence");
  }

  train::TrainSpec Resolve(const model::ModelConfig& cfg, const CLI::App* cmd) const {
    train::TrainSpec s = spec;
    if (!spec_path.empty()) {
      json j = json::parse(media::ReadFileBytes(spec_path), nullptr, false);
      if (j.is_discarded()) throw ConfigError("training spec " + spec_path + " is not valid JSON");
      s = train::TrainSpecFromJson(j);
      // Explicit flags win over the file.
      if (cmd->count("--epochs")) s.epochs = spec.epochs;
      if (cmd->count("--lr")) s.learning_rate = spec.learning_rate;
      if (cmd->count("--batch")) s.batch_size = spec.batch_size;
      if (cmd->count("--weight-decay")) s.weight_decay = spec.weight_decay;
      if (cmd->count("--seed")) s.seed = spec.seed;
      if (cmd->count("--snapshot-dir")) s.snapshot_dir = spec.snapshot_dir;
    }
    s.input_height = cfg.input.height;
    s.input_width = cfg.input.width;
    s.Validate();
    return s;
  }
};

struct LlmOptions {
  agent::LlmBackendSpec spec;
  std::string kind = "mock";

  void Attach(CLI::App* cmd) {
    cmd->add_option("--backend", kind, "mock or http_chat")->capture_default_str();
    cmd->add_option("--endpoint", spec.endpoint_url, "Chat-completions URL (env AUTOUS_LLM_ENDPOINT)");
    cmd->add_option("--llm-model", spec.model_name, "Model name sent to the backend")->capture_default_str();
    cmd->add_option("--timeout-ms", spec.timeout_ms)->capture_default_str();
    cmd->add_option("--retries", spec.max_retries)->capture_default_str();
    cmd->add_option("--temperature", spec.temperature)->capture_default_str();
    cmd->add_flag("--strict-parse", spec.parse.strict, "Require bare section headers");
  }

  agent::LlmBackendSpec Resolve() const {
    agent::LlmBackendSpec s = spec;
    s.kind = agent::ParseBackendKind(kind);
    s.ApplyEnvironment();
    s.Validate();
    return s;
  }
};

std::vector<std::string> ClassNamesOf(const model::Checkpoint& ckpt) {
  if (ckpt.metadata.contains("class_names")) return ckpt.metadata["class_names"].get<std::vector<std::string>>();
  return data::DefaultClassNames();
}

std::vector<double> ClassifyVideo(const model::Checkpoint& ckpt, const std::string& video) {
  auto net = model::ModelFromCheckpoint<float>(ckpt);
  const auto& in = net.config().input;
  data::VideoSample s = data::LoadVideoFile(video, {in.frames, in.height, in.width});
  s = data::ConvertChannels(s, in.channels);
  auto pred = net.Predict(model::MakeBatch<float>(std::span<const data::VideoSample>(&s, 1)));
  return {pred.probs.data(), pred.probs.data() + pred.probs.size()};
}

std::string Fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

void PrintMetrics(const train::MetricsReport& m) {
  std::cerr << "accuracy " << train::FormatPercent(m.accuracy) << "%  recall " << train::FormatPercent(m.macro_recall)
            << "%  precision " << train::FormatPercent(m.macro_precision) << "%  (" << m.total << " clips)\n";
}

service::HttpServer* g_server = nullptr;

void OnSignal(int) {
  if (g_server != nullptr) g_server->Stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"autous: ultrasound video classification, diagnosis reports and report scoring"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  app.footer(
      "Environment: AUTOUS_LLM_ENDPOINT, AUTOUS_LLM_TOKEN (chat backend), AUTOUS_STORE_DIR (serve).\n"
      "Exit codes: 0 ok, 1 negative result, 2 usage, 3 invalid input, 4 runtime failure.");

  std::function<int()> action;

  // dataset ------------------------------------------------------------------
  CLI::App* dataset = app.add_subcommand("dataset", "Dataset screening and manifest tools");
  dataset->require_subcommand(1);

  double acc = 0, theta = 0.4;
  int classes = 0;
  std::string log_base = "ln";
  CLI::App* filter = dataset->add_subcommand("filter", "Accept or reject a source dataset: Acc >= 1 - theta*log(C)");
  filter->add_option("--acc", acc, "Baseline accuracy on the candidate dataset")->required()->check(CLI::Range(0.0, 1.0));
  filter->add_option("--classes", classes, "Number of classes")->required()->check(CLI::PositiveNumber);
  filter->add_option("--theta", theta)->capture_default_str();
  filter->add_option("--log-base", log_base, "ln, log2 or log10")->capture_default_str();
  filter->callback([&] {
    action = [&] {
      data::FilterDecision d = data::EvaluateDatasetAcceptance(acc, classes, theta, data::ParseLogBase(log_base));
      std::string line = std::string(d.accepted ? "accepted" : "rejected") + " (threshold " + Fixed(d.threshold, 4) + ")";
      std::cout << line << "\n";
      return d.accepted ? kOk : kNegative;
    };
  });

  std::string manifest_in, manifest_out;
  std::vector<std::string> merge_map;
  CLI::App* merge = dataset->add_subcommand("merge", "Relabel classes through old_id=new_name pairs");
  merge->add_option("--manifest", manifest_in)->required()->check(CLI::ExistingFile);
  merge->add_option("--map", merge_map, "old_id=new_name (repeatable)")->required();
  merge->add_option("--out", manifest_out)->required();
  merge->callback([&] {
    action = [&] {
      std::map<int, std::string> mapping;
      for (const std::string& m : merge_map) {
        std::size_t eq = m.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == m.size()) {
          throw ValidationError("--map expects old_id=new_name, got '" + m + "'");
        }
        try {
          mapping[std::stoi(m.substr(0, eq))] = m.substr(eq + 1);
        } catch (const std::logic_error&) {
          throw ValidationError("--map expects an integer class id, got '" + m.substr(0, eq) + "'");
        }
      }
      data::DatasetManifest out = data::MergeCategories(data::ReadManifest(manifest_in), mapping);
      data::WriteManifest(out, manifest_out);
      std::cout << json{{"entries", out.entries.size()}, {"class_names", out.class_names}}.dump() << "\n";
      return kOk;
    };
  });

  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  CLI::App* split = dataset->add_subcommand("split", "Stratified train/test split");
  split->add_option("--manifest", manifest_in)->required()->check(CLI::ExistingFile);
  split->add_option("--train-fraction", train_fraction)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  split->add_option("--seed", split_seed)->capture_default_str();
  split->add_option("--out", manifest_out)->required();
  split->callback([&] {
    action = [&] {
      data::DatasetManifest out = data::SplitTrainTest(data::ReadManifest(manifest_in), train_fraction, split_seed);
      data::WriteManifest(out, manifest_out);
      json counts = {{"train", out.EntriesIn(data::Split::kTrain).size()},
                     {"test", out.EntriesIn(data::Split::kTest).size()}};
      std::cout << counts.dump() << "\n";
      return kOk;
    };
  });

  std::string synth_dir;
  int per_class = 40, synth_frames = 8, synth_size = 32;
  std::uint64_t synth_seed = 0;
  CLI::App* synth = dataset->add_subcommand("synth", "Write the synthetic five-class clip corpus");
  synth->add_option("--out", synth_dir, "Output directory")->required();
  synth->add_option("--per-class", per_class)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--frames", synth_frames)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "Frame height and width")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--train-fraction", train_fraction, "Split after writing; 0 leaves clips unassigned")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  synth->callback([&] {
    action = [&] {
      data::DatasetManifest m =
          data::WriteSyntheticDataset(synth_dir, per_class, synth_seed, {synth_frames, synth_size, synth_size});
      std::filesystem::path path = std::filesystem::path(synth_dir) / "manifest.tsv";
      if (train_fraction > 0) {
        m = data::SplitTrainTest(m, train_fraction, synth_seed);
        data::WriteManifest(m, path);
      }
      std::cout << path.string() << "\n";
      std::cerr << m.entries.size() << " clips written\n";
      return kOk;
    };
  });

  // train --------------------------------------------------------------------
  ModelOptions model_opts;
  TrainOptions train_opts;
  std::string checkpoint, loss_csv;
  CLI::App* train_cmd = app.add_subcommand("train", "Train CTU-Net on a manifest's train split");
  train_cmd->add_option("--manifest", manifest_in)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", checkpoint, "Checkpoint path")->required();
  train_cmd->add_option("--loss-csv", loss_csv, "Write the per-step loss curve");
  model_opts.Attach(train_cmd);
  train_opts.Attach(train_cmd);
  train_cmd->callback([&] {
    action = [&] {
      model::ModelConfig cfg = model_opts.Resolve();
      train::TrainSpec spec = train_opts.Resolve(cfg, train_cmd);
      data::DatasetManifest m = data::ReadManifest(manifest_in);
      train::TrainResult r = train::Train(cfg, m, spec, [&](int epoch, double loss) {
        std::cerr << "epoch " << epoch + 1 << "/" << spec.epochs << "  loss " << Fixed(loss, 4) << "\n";
      });
      model::SaveCheckpoint(r.checkpoint, checkpoint);
      if (!loss_csv.empty()) media::WriteFileAtomic(loss_csv, train::LossCurveCsv(r.step_losses));
      std::cout << json{{"checkpoint", checkpoint},
                        {"epochs", spec.epochs},
                        {"final_loss", r.epoch_losses.empty() ? 0.0 : r.epoch_losses.back()},
                        {"seconds", r.seconds}}
                       .dump()
                << "\n";
      return kOk;
    };
  });

  // eval ---------------------------------------------------------------------
  std::string split_name = "test", out_dir;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", manifest_in)->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split_name)->capture_default_str();
  eval->add_option("--out-dir", out_dir, "Write metrics.csv, auc.csv and radar.json here");
  eval->callback([&] {
    action = [&] {
      model::Checkpoint ckpt = model::LoadCheckpoint(checkpoint);
      train::MetricsReport m = train::Evaluate(ckpt, data::ReadManifest(manifest_in), data::ParseSplit(split_name));
      PrintMetrics(m);
      if (!out_dir.empty()) {
        std::vector<train::NamedReport> reports = {{model::AblationName(ckpt.config.ablation), m}};
        train::EmitReport(reports, out_dir);
      }
      std::cout << train::ToJson(m).dump() << "\n";
      return kOk;
    };
  });

  // ablate -------------------------------------------------------------------
  CLI::App* ablate = app.add_subcommand("ablate", "Train and evaluate the full model and the three ablations");
  ablate->add_option("--manifest", manifest_in)->required()->check(CLI::ExistingFile);
  ablate->add_option("--out-dir", out_dir, "Write metrics.csv, auc.csv and radar.json here")->required();
  model_opts.Attach(ablate);
  train_opts.Attach(ablate);
  ablate->callback([&] {
    action = [&] {
      model::ModelConfig cfg = model_opts.Resolve();
      train::TrainSpec spec = train_opts.Resolve(cfg, ablate);
      train::AblationTable table = train::RunAblations(cfg, data::ReadManifest(manifest_in), spec);
      std::vector<train::NamedReport> reports;
      bool failed = false;
      for (const auto& row : table.rows) {
        if (row.metrics) {
          reports.push_back({model::AblationName(row.variant), *row.metrics});
        } else {
          failed = true;
          std::cerr << model::AblationName(row.variant) << " failed: " << row.error << "\n";
        }
      }
      if (reports.empty()) throw InternalError("every ablation variant failed");
      train::EmitReport(reports, out_dir);
      std::cout << train::MetricsTableCsv(reports);
      return failed ? static_cast<int>(kRuntime) : static_cast<int>(kOk);
    };
  });

  // classify -----------------------------------------------------------------
  std::string video;
  bool as_json = false;
  CLI::App* classify = app.add_subcommand("classify", "Classify one clip");
  classify->add_option("video", video, "Clip (.npy, .npz or a container format)")->required()->check(CLI::ExistingFile);
  classify->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  classify->add_flag("--json", as_json, "Print the full opinion as JSON");
  classify->callback([&] {
    action = [&] {
      model::Checkpoint ckpt = model::LoadCheckpoint(checkpoint);
      std::vector<double> probs = ClassifyVideo(ckpt, video);
      agent::DiagnosisOpinion o = agent::OpinionFromProbs(probs, ClassNamesOf(ckpt));
      if (o.tie()) std::cerr << "note: exact tie between " << o.tied_classes.size() << " classes, lowest id kept\n";
      if (as_json) {
        json j = agent::ToJson(o);
        j["probs"] = probs;
        std::cout << j.dump() << "\n";
      } else {
        std::cout << o.label_text << " " << Fixed(o.confidence, 2) << "\n";
      }
      return kOk;
    };
  });

  // diagnose -----------------------------------------------------------------
  LlmOptions llm_opts;
  agent::ClinicalContext ctx;
  std::string label;
  bool prompt_only = false;
  CLI::App* diagnose = app.add_subcommand("diagnose", "Build the prompt and generate a three-section report");
  auto* video_opt = diagnose->add_option("--video", video)->check(CLI::ExistingFile);
  diagnose->add_option("--checkpoint", checkpoint)->check(CLI::ExistingFile);
  auto* label_opt = diagnose->add_option("--label", label, "Classifier label (e.g. Malignant) instead of a video");
  video_opt->excludes(label_opt);
  diagnose->add_option("--chief-complaint", ctx.chief_complaint)->required();
  diagnose->add_option("--physical-exam", ctx.physical_exam);
  diagnose->add_option("--additional-info", ctx.additional_info);
  diagnose->add_flag("--prompt-only", prompt_only, "Print the prompt and stop");
  diagnose->add_flag("--json", as_json, "Print the report as JSON");
  llm_opts.Attach(diagnose);
  diagnose->callback([&] {
    action = [&] {
      ctx.Validate();
      agent::DiagnosisOpinion o;
      if (!video.empty()) {
        if (checkpoint.empty()) throw ValidationError("--video needs --checkpoint");
        model::Checkpoint ckpt = model::LoadCheckpoint(checkpoint);
        o = agent::OpinionFromProbs(ClassifyVideo(ckpt, video), ClassNamesOf(ckpt));
      } else if (!label.empty()) {
        const auto& names = data::DefaultClassNames();
        auto it = std::find(names.begin(), names.end(), label);
        if (it == names.end()) {
          throw ValidationError("unknown label '" + label + "' (expected one of Benign, Malignant, Gall., COVID, Pneu.)");
        }
        std::vector<double> onehot(names.size(), 0.0);
        onehot[static_cast<std::size_t>(it - names.begin())] = 1.0;
        o = agent::OpinionFromProbs(onehot);
      } else {
        throw ValidationError("give --video with --checkpoint, or --label");
      }
      std::string prompt = agent::BuildPrompt(o, ctx);
      if (prompt_only) {
        std::cout << prompt;
        return kOk;
      }
      agent::LlmBackendSpec spec = llm_opts.Resolve();
      auto backend = agent::MakeBackend(spec);
      agent::DiagnosisReport r = agent::GenerateReport(prompt, *backend, spec);
      if (as_json) {
        json j = agent::ToJson(r);
        j["opinion"] = agent::ToJson(o);
        std::cout << j.dump() << "\n";
      } else {
        std::cout << agent::RenderReport({r.preliminary_diagnosis, r.justification, r.follow_up});
      }
      std::cerr << r.model_id << ", " << r.latency_ms << " ms, " << r.attempts << " attempt(s)\n";
      return kOk;
    };
  });

  // score --------------------------------------------------------------------
  std::string grades_path, case_id, reference_path, report_path, synonyms_path;
  std::optional<double> meteor;
  bool csv = false, no_stem = false;
  CLI::App* score = app.add_subcommand("score", "Final score from Likert grades and METEOR");
  score->add_option("--grades", grades_path, "CSV: case_id,rater_id,role,score")->required()->check(CLI::ExistingFile);
  score->add_option("--case", case_id, "Case id (optional when the file holds one case)");
  auto* meteor_opt = score->add_option("--meteor", meteor, "Precomputed METEOR value")->check(CLI::Range(0.0, 1.0));
  auto* ref_opt = score->add_option("--reference", reference_path, "Reference text file")->check(CLI::ExistingFile);
  score->add_option("--report", report_path, "Generated report (text or diagnose --json output)")
      ->check(CLI::ExistingFile);
  score->add_option("--synonyms", synonyms_path, "Synonym groups, one per line")->check(CLI::ExistingFile);
  score->add_flag("--no-stem", no_stem, "Disable the stemming stage");
  score->add_flag("--csv", csv, "Print a score CSV row instead of the 2-decimal final score");
  meteor_opt->excludes(ref_opt);
  score->callback([&] {
    action = [&] {
      auto all = assess::ParseGradesCsv(media::ReadFileBytes(grades_path));
      if (case_id.empty()) {
        if (all.size() != 1) throw ValidationError("--case is required when the grades file holds several cases");
        case_id = all.begin()->first;
      }
      auto it = all.find(case_id);
      if (it == all.end()) throw NotFoundError("no grades for case " + case_id + " in " + grades_path);
      assess::ScoreResult r;
      if (meteor) {
        r = assess::ScoreWithMeteor(it->second, *meteor);
      } else {
        if (reference_path.empty() || report_path.empty()) {
          throw ValidationError("give --meteor, or --reference together with --report");
        }
        std::string report_text = media::ReadFileBytes(report_path);
        agent::DiagnosisReport report;
        json j = json::parse(report_text, nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.contains("preliminary_diagnosis")) {
          report = agent::DiagnosisReportFromJson(j);
        } else {
          agent::ReportSections s = agent::ParseReport(report_text);
          report = {s.preliminary_diagnosis, s.justification, s.follow_up, report_text, "", 0, 0};
        }
        assess::SynonymTable synonyms;
        assess::MeteorParams params;
        params.use_stemming = !no_stem;
        if (!synonyms_path.empty()) {
          synonyms = assess::SynonymTable::Load(synonyms_path);
          params.synonyms = &synonyms;
        }
        r = assess::ScoreCase(report, media::ReadFileBytes(reference_path), it->second, params);
      }
      if (csv) {
        std::cout << assess::ScoreCsv({{case_id, r}});
      } else {
        std::cout << assess::Format2dp(r.final_score) << "\n";
      }
      std::cerr << "S_amateur " << Fixed(r.s_amateur, 4) << "  S_expert " << Fixed(r.s_expert, 4) << "  METEOR "
                << Fixed(r.meteor, 4) << "  final " << Fixed(r.final_score, 4) << "\n";
      return kOk;
    };
  });

  // plot ---------------------------------------------------------------------
  std::string radar_path, svg_path;
  CLI::App* plot = app.add_subcommand("plot", "Render radar.json as an SVG radar chart");
  plot->add_option("--radar", radar_path, "radar.json from eval/ablate")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", svg_path, "SVG output path")->required();
  plot->callback([&] {
    action = [&] {
      json radar = json::parse(media::ReadFileBytes(radar_path), nullptr, false);
      if (radar.is_discarded()) throw DecodeError(radar_path + " is not valid JSON");
      media::WriteFileAtomic(svg_path, train::RenderRadarSvg(radar));
      std::cout << svg_path << "\n";
      return kOk;
    };
  });

  // gradcheck ----------------------------------------------------------------
  std::size_t samples = 256;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  model_opts.Attach(gradcheck);
  gradcheck->add_option("--samples", samples)->capture_default_str();
  gradcheck->callback([&] {
    action = [&] {
      model::ModelConfig cfg = model_opts.Resolve();
      model::CtuNet<double> net(cfg);
      Rng rng(cfg.seed + 17);
      const auto& in = cfg.input;
      Tensor<double> x({2, static_cast<std::size_t>(in.frames), static_cast<std::size_t>(in.height),
                        static_cast<std::size_t>(in.width), static_cast<std::size_t>(in.channels)});
      for (auto& v : x.values()) v = rng.Uniform();
      model::GradientCheckOptions opts;
      opts.num_samples = samples;
      auto r = model::GradientCheck(net, x, model::CrossEntropyLoss({0, 1}), opts);
      std::cout << json{{"max_rel_err", r.max_rel_err},         {"checked", r.checked},
                        {"kinks_skipped", r.kinks_skipped},     {"worst_param", r.worst_param},
                        {"worst_analytic", r.worst_analytic},   {"worst_numeric", r.worst_numeric}}
                       .dump()
                << "\n";
      return r.max_rel_err < 1e-4 ? kOk : kNegative;
    };
  });

  // serve --------------------------------------------------------------------
  service::HttpOptions http;
  std::string store_dir;
  int inflight = 2, max_upload_mb = 64;
  CLI::App* serve = app.add_subcommand("serve", "Run the case workflow HTTP API");
  serve->add_option("--store", store_dir, "Case store directory (env AUTOUS_STORE_DIR)");
  serve->add_option("--checkpoint", checkpoint, "Classifier checkpoint")->check(CLI::ExistingFile);
  serve->add_option("--host", http.host)->capture_default_str();
  serve->add_option("--port", http.port)->capture_default_str();
  serve->add_option("--token", http.token, "Shared bearer token required on every request");
  serve->add_option("--llm-inflight", inflight, "Concurrent chat requests")->capture_default_str();
  serve->add_option("--max-upload-mb", max_upload_mb)->capture_default_str()->check(CLI::PositiveNumber);
  llm_opts.Attach(serve);
  serve->callback([&] {
    action = [&] {
      if (store_dir.empty()) {
        const char* env = std::getenv("AUTOUS_STORE_DIR");
        store_dir = env != nullptr ? env : "autous-store";
      }
      service::ServiceOptions opts;
      opts.store_dir = store_dir;
      opts.checkpoint_path = checkpoint;
      opts.llm = llm_opts.Resolve();
      opts.llm_inflight = inflight;
      opts.max_upload_bytes = static_cast<std::size_t>(max_upload_mb) << 20;
      auto svc = std::make_shared<service::CaseService>(opts);
      if (!svc->has_model()) std::cerr << "warning: no --checkpoint, classify requests will fail\n";
      service::HttpServer server(svc, http);
      g_server = &server;
      std::signal(SIGINT, OnSignal);
      std::signal(SIGTERM, OnSignal);
      std::cerr << "serving on http://" << http.host << ":" << http.port << " (store " << store_dir << ")\n";
      server.Run();
      return kOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ExitCodeFor(e.kind());
  }

  try {
    return action ? action() : kUsage;
  } catch (const MalformedOutputError& e) {
    std::cerr << "error (" << ErrorKindName(e.kind()) << "): " << e.what() << "\n--- raw response ---\n"
              << e.detail() << "\n";
    return ExitCodeFor(e.kind());
  } catch (const Error& e) {
    std::cerr << "error (" << ErrorKindName(e.kind()) << "): " << e.what() << "\n";
    if (!e.detail().empty()) std::cerr << e.detail() << "\n";
    return ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
