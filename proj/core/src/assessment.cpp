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

#include "autous/assessment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "autous/error.hpp"
#include "autous/media_io.hpp"

namespace autous::assess {
namespace {

bool IsTokenByte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

bool EndsWith(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool IsVowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

std::string_view TrimView(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Per-stage alignment search. Positions of `alignment` already set by earlier
// stages stay fixed; this stage adds the maximum number of matches among
// equal keys and, among those, the fewest chunks it can find.
class StageAligner {
 public:
  StageAligner(const std::vector<std::string>& hyp_keys, const std::vector<std::string>& ref_keys,
               std::vector<int>& alignment, std::vector<bool>& ref_used, long node_limit)
      : alignment_(alignment), ref_used_(ref_used), node_limit_(node_limit) {
    std::map<std::string, int> key_ids;
    std::vector<std::vector<int>> ref_positions;
    for (std::size_t j = 0; j < ref_keys.size(); ++j) {
      if (ref_used_[j] || ref_keys[j].empty()) continue;
      auto [it, inserted] = key_ids.emplace(ref_keys[j], static_cast<int>(ref_positions.size()));
      if (inserted) ref_positions.emplace_back();
      ref_positions[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(j));
    }
    refs_ = std::move(ref_positions);
    hyp_key_.assign(hyp_keys.size(), -1);
    std::vector<int> hyp_count(refs_.size(), 0);
    for (std::size_t i = 0; i < hyp_keys.size(); ++i) {
      if (alignment_[i] >= 0 || hyp_keys[i].empty()) continue;
      auto it = key_ids.find(hyp_keys[i]);
      if (it == key_ids.end()) continue;
      hyp_key_[i] = it->second;
      candidates_.push_back(static_cast<int>(i));
      ++hyp_count[static_cast<std::size_t>(it->second)];
    }
    need_.resize(refs_.size());
    left_ = hyp_count;
    used_.assign(refs_.size(), 0);
    for (std::size_t k = 0; k < refs_.size(); ++k) {
      need_[k] = std::min(hyp_count[k], static_cast<int>(refs_[k].size()));
    }
  }

  // Returns true when the search ran out of budget.
  bool Run() {
    if (candidates_.empty()) return false;
    best_chunks_ = std::numeric_limits<int>::max();
    work_ = alignment_;
    Search(0, 0, 0);
    alignment_ = best_;
    for (std::size_t i = 0; i < alignment_.size(); ++i) {
      if (alignment_[i] >= 0) ref_used_[static_cast<std::size_t>(alignment_[i])] = true;
    }
    return truncated_;
  }

 private:
  int Step(int i) const {
    int r = work_[static_cast<std::size_t>(i)];
    if (r < 0) return 0;
    if (i > 0 && work_[static_cast<std::size_t>(i - 1)] >= 0 && work_[static_cast<std::size_t>(i - 1)] + 1 == r) return 0;
    return 1;
  }

  // Chunks over positions [from, to) with every position decided.
  int CountRange(int from, int to) const {
    int c = 0;
    for (int i = from; i < to; ++i) c += Step(i);
    return c;
  }

  void Search(std::size_t ci, int next_pos, int chunks) {
    if (nodes_ >= node_limit_ && !best_.empty()) {
      truncated_ = true;
      return;
    }
    ++nodes_;
    if (ci == candidates_.size()) {
      int total = chunks + CountRange(next_pos, static_cast<int>(work_.size()));
      if (total < best_chunks_) {
        best_chunks_ = total;
        best_ = work_;
      }
      return;
    }
    int p = candidates_[ci];
    chunks += CountRange(next_pos, p);
    if (chunks >= best_chunks_) return;
    std::size_t k = static_cast<std::size_t>(hyp_key_[static_cast<std::size_t>(p)]);
    --left_[k];
    if (used_[k] < need_[k]) {
      int prev = p > 0 ? work_[static_cast<std::size_t>(p - 1)] : -2;
      std::vector<int> order;
      order.reserve(refs_[k].size());
      for (int r : refs_[k]) {
        if (!taken_.count(r)) {
          if (r == prev + 1) {
            order.insert(order.begin(), r);
          } else {
            order.push_back(r);
          }
        }
      }
      for (int r : order) {
        work_[static_cast<std::size_t>(p)] = r;
        taken_.insert(r);
        ++used_[k];
        Search(ci + 1, p + 1, chunks + Step(p));
        --used_[k];
        taken_.erase(r);
        work_[static_cast<std::size_t>(p)] = -1;
        if (truncated_) break;
      }
    }
    if (!truncated_ && left_[k] >= need_[k] - used_[k]) Search(ci + 1, p + 1, chunks);
    ++left_[k];
  }

  std::vector<int>& alignment_;
  std::vector<bool>& ref_used_;
  long node_limit_;
  std::vector<std::vector<int>> refs_;
  std::vector<int> hyp_key_;
  std::vector<int> candidates_;
  std::vector<int> need_, left_, used_;
  std::vector<int> work_, best_;
  std::set<int> taken_;
  int best_chunks_ = 0;
  long nodes_ = 0;
  bool truncated_ = false;
};

std::vector<std::string> SplitCsvLine(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(TrimView(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.emplace_back(TrimView(field));
  return out;
}

std::string Fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace

std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (IsTokenByte(c)) {
      cur += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch;
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::string Stem(std::string_view token) {
  std::string w(token);
  for (char c : w) {
    if (c < 'a' || c > 'z') return w;
  }
  if (EndsWith(w, "sses")) {
    w.resize(w.size() - 2);
  } else if (EndsWith(w, "ies") && w.size() >= 5) {
    w.resize(w.size() - 3);
    w += 'y';
  } else if (EndsWith(w, "s") && !EndsWith(w, "ss") && !EndsWith(w, "us") && !EndsWith(w, "is") && w.size() > 3) {
    w.pop_back();
  }
  for (std::string_view suffix : {std::string_view("ing"), std::string_view("ed")}) {
    if (EndsWith(w, suffix) && w.size() >= suffix.size() + 3) {
      w.resize(w.size() - suffix.size());
      std::size_t n = w.size();
      char last = w[n - 1];
      if (last == w[n - 2] && !IsVowel(last) && last != 'l' && last != 's' && last != 'z') w.pop_back();
      break;
    }
  }
  if (EndsWith(w, "ly") && w.size() >= 5) w.resize(w.size() - 2);
  if (EndsWith(w, "e") && w.size() >= 5) w.pop_back();
  return w;
}

SynonymTable::SynonymTable(const std::vector<std::vector<std::string>>& groups) {
  int id = 0;
  for (const auto& group : groups) {
    bool any = false;
    for (const std::string& word : group) {
      for (const std::string& tok : Tokenize(word)) {
        groups_.emplace(tok, id);
        any = true;
      }
    }
    if (any) ++id;
  }
}

SynonymTable SynonymTable::Parse(std::string_view text) {
  std::vector<std::vector<std::string>> groups;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (std::size_t hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream words(line);
    std::vector<std::string> group;
    std::string w;
    while (words >> w) group.push_back(w);
    if (group.size() >= 2) groups.push_back(std::move(group));
  }
  return SynonymTable(groups);
}

SynonymTable SynonymTable::Load(const std::filesystem::path& path) {
  return Parse(media::ReadFileBytes(path));
}

int SynonymTable::GroupOf(const std::string& token) const {
  if (auto it = groups_.find(token); it != groups_.end()) return it->second;
  if (auto it = groups_.find(Stem(token)); it != groups_.end()) return it->second;
  return -1;
}

void MeteorParams::Validate() const {
  if (!(recall_weight > 0) || !(penalty_gamma >= 0) || !(penalty_power > 0)) {
    throw ValidationError("METEOR weights must be positive");
  }
  if (penalty_gamma > 1) throw ValidationError("METEOR penalty_gamma must be <= 1");
  if (node_limit < 1) throw ValidationError("METEOR node_limit must be >= 1");
}

int CountChunks(const std::vector<int>& alignment) {
  int chunks = 0;
  int prev = -2;
  for (int r : alignment) {
    if (r >= 0 && r != prev + 1) ++chunks;
    prev = r >= 0 ? r : -2;
  }
  return chunks;
}

MeteorDetail MeteorDetailed(std::string_view hypothesis, std::string_view reference, const MeteorParams& params) {
  params.Validate();
  std::vector<std::string> hyp = Tokenize(hypothesis);
  std::vector<std::string> ref = Tokenize(reference);
  MeteorDetail d;
  d.hyp_len = static_cast<int>(hyp.size());
  d.ref_len = static_cast<int>(ref.size());
  d.alignment.assign(hyp.size(), -1);
  if (hyp.empty() && ref.empty()) {
    d.score = 1;
    d.precision = d.recall = d.fmean = 1;
    return d;
  }
  if (hyp.empty() || ref.empty()) return d;

  std::vector<bool> ref_used(ref.size(), false);
  auto run_stage = [&](auto key_of) {
    std::vector<std::string> hk(hyp.size()), rk(ref.size());
    for (std::size_t i = 0; i < hyp.size(); ++i) hk[i] = key_of(hyp[i]);
    for (std::size_t j = 0; j < ref.size(); ++j) rk[j] = key_of(ref[j]);
    StageAligner aligner(hk, rk, d.alignment, ref_used, params.node_limit);
    d.search_truncated = aligner.Run() || d.search_truncated;
  };
  run_stage([](const std::string& t) { return t; });
  if (params.use_stemming) run_stage([](const std::string& t) { return Stem(t); });
  if (params.synonyms != nullptr && !params.synonyms->empty()) {
    const SynonymTable& table = *params.synonyms;
    run_stage([&table](const std::string& t) {
      int g = table.GroupOf(t);
      return g < 0 ? std::string() : std::to_string(g);
    });
  }

  d.matches = static_cast<int>(std::count_if(d.alignment.begin(), d.alignment.end(), [](int r) { return r >= 0; }));
  if (d.matches == 0) return d;
  d.chunks = CountChunks(d.alignment);
  double m = d.matches;
  d.precision = m / d.hyp_len;
  d.recall = m / d.ref_len;
  double w = params.recall_weight;
  d.fmean = (1 + w) * d.precision * d.recall / (d.recall + w * d.precision);
  d.penalty = params.penalty_gamma * std::pow(d.chunks / m, params.penalty_power);
  d.score = d.fmean * (1 - d.penalty);
  return d;
}

double Meteor(std::string_view hypothesis, std::string_view reference, const MeteorParams& params) {
  return MeteorDetailed(hypothesis, reference, params).score;
}

const char* RoleName(Role role) { return role == Role::kAmateur ? "amateur" : "expert"; }

Role ParseRole(const std::string& text) {
  std::string t;
  for (char c : text) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "amateur") return Role::kAmateur;
  if (t == "expert") return Role::kExpert;
  throw ValidationError("unknown rater role '" + text + "' (expected amateur or expert)");
}

void Grade::Validate() const {
  if (TrimView(rater_id).empty()) throw ValidationError("rater_id must not be empty");
  if (score < 1 || score > 5) {
    throw ValidationError("score must be an integer in [1, 5], got " + std::to_string(score));
  }
}

void GradeSheet::Upsert(const Grade& grade) {
  grade.Validate();
  for (Grade& g : grades) {
    if (g.rater_id == grade.rater_id) {
      g = grade;
      return;
    }
  }
  grades.push_back(grade);
}

nlohmann::json ToJson(const Grade& g) {
  return {{"rater_id", g.rater_id}, {"role", RoleName(g.role)}, {"score", g.score}};
}

Grade GradeFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("grade must be an object");
  Grade g;
  if (!j.contains("rater_id") || !j["rater_id"].is_string()) throw ValidationError("rater_id must be a string");
  if (!j.contains("role") || !j["role"].is_string()) throw ValidationError("role must be a string");
  if (!j.contains("score") || !j["score"].is_number_integer()) {
    throw ValidationError("score must be an integer in [1, 5]");
  }
  g.rater_id = j["rater_id"].get<std::string>();
  g.role = ParseRole(j["role"].get<std::string>());
  g.score = j["score"].get<int>();
  g.Validate();
  return g;
}

nlohmann::json ToJson(const GradeSheet& sheet) {
  nlohmann::json grades = nlohmann::json::array();
  for (const Grade& g : sheet.grades) grades.push_back(ToJson(g));
  nlohmann::json j = {{"grades", grades}};
  j["meteor"] = sheet.meteor ? nlohmann::json(*sheet.meteor) : nlohmann::json(nullptr);
  return j;
}

GradeSheet GradeSheetFromJson(const nlohmann::json& j) {
  GradeSheet sheet;
  for (const auto& g : j.at("grades")) sheet.grades.push_back(GradeFromJson(g));
  if (j.contains("meteor") && !j["meteor"].is_null()) sheet.meteor = j["meteor"].get<double>();
  return sheet;
}

RoleMeans AggregateLikert(const std::vector<Grade>& grades) {
  double sum[2] = {0, 0};
  int count[2] = {0, 0};
  for (const Grade& g : grades) {
    g.Validate();
    int r = g.role == Role::kAmateur ? 0 : 1;
    sum[r] += g.score;
    ++count[r];
  }
  if (count[0] == 0) throw ValidationError("no grades from role amateur");
  if (count[1] == 0) throw ValidationError("no grades from role expert");
  return {sum[0] / count[0], sum[1] / count[1]};
}

double FinalScore(double s_amateur, double s_expert, double meteor) {
  auto check = [](double v, double lo, double hi, const char* name) {
    if (!std::isfinite(v) || v < lo || v > hi) {
      throw ValidationError(std::string(name) + " must lie in [" + Fixed(lo, 0) + ", " + Fixed(hi, 0) + "], got " +
                            Fixed(v, 6));
    }
  };
  check(s_amateur, 1, 5, "S_amateur");
  check(s_expert, 1, 5, "S_expert");
  check(meteor, 0, 1, "meteor");
  return 0.2 * s_amateur + 0.6 * s_expert + 0.2 * 5 * meteor;
}

std::string Format2dp(double value) { return Fixed(std::round(value * 100) / 100, 2); }

std::string ReportText(const agent::DiagnosisReport& report) {
  return report.preliminary_diagnosis + " " + report.justification + " " + report.follow_up;
}

nlohmann::json ToJson(const ScoreResult& r) {
  return {{"S_amateur", r.s_amateur},     {"S_expert", r.s_expert},
          {"meteor", r.meteor},           {"final", r.final_score},
          {"final_2dp", Format2dp(r.final_score)}, {"grade_sheet", ToJson(r.sheet)}};
}

ScoreResult ScoreWithMeteor(const std::vector<Grade>& grades, double meteor) {
  if (grades.empty()) throw ValidationError("no grades recorded: grading protocol incomplete");
  RoleMeans means = AggregateLikert(grades);
  ScoreResult r;
  r.sheet.grades = grades;
  r.sheet.meteor = meteor;
  r.s_amateur = means.amateur;
  r.s_expert = means.expert;
  r.meteor = meteor;
  r.final_score = FinalScore(means.amateur, means.expert, meteor);
  return r;
}

ScoreResult ScoreCase(const agent::DiagnosisReport& report, std::string_view reference,
                      const std::vector<Grade>& grades, const MeteorParams& params) {
  if (TrimView(reference).empty()) throw ValidationError("reference text must not be empty");
  if (grades.empty()) throw ValidationError("no grades recorded: grading protocol incomplete");
  return ScoreWithMeteor(grades, Meteor(ReportText(report), reference, params));
}

std::map<std::string, std::vector<Grade>> ParseGradesCsv(std::string_view text) {
  std::map<std::string, std::vector<Grade>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view trimmed = TrimView(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    std::vector<std::string> f = SplitCsvLine(trimmed);
    if (f.size() == 4 && f[0] == "case_id") continue;
    std::string where = "grades line " + std::to_string(line_no);
    if (f.size() != 4) throw ValidationError(where + ": expected 4 fields, got " + std::to_string(f.size()));
    if (f[0].empty()) throw ValidationError(where + ": empty case_id");
    Grade g;
    g.rater_id = f[1];
    try {
      g.role = ParseRole(f[2]);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    auto [ptr, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), g.score);
    if (ec != std::errc() || ptr != f[3].data() + f[3].size()) {
      throw ValidationError(where + ": score '" + f[3] + "' is not an integer");
    }
    try {
      g.Validate();
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    std::vector<Grade>& grades = out[f[0]];
    auto dup = std::find_if(grades.begin(), grades.end(), [&](const Grade& x) { return x.rater_id == g.rater_id; });
    if (dup != grades.end()) throw ValidationError(where + ": duplicate rater " + g.rater_id);
    grades.push_back(g);
  }
  return out;
}

std::string ScoreCsv(const std::vector<std::pair<std::string, ScoreResult>>& rows) {
  std::string out = "case_id,S_amateur,S_expert,meteor,final,final_2dp\n";
  for (const auto& [id, r] : rows) {
    out += id + "," + Fixed(r.s_amateur, 4) + "," + Fixed(r.s_expert, 4) + "," + Fixed(r.meteor, 4) + "," +
           Fixed(r.final_score, 4) + "," + Format2dp(r.final_score) + "\n";
  }
  return out;
}

}  // namespace autous::assess
