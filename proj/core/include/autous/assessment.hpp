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

// Report quality: METEOR against a reference text, Likert grades by rater
// role, and the weighted final score
//
//   final = 0.2 * S_amateur + 0.6 * S_expert + 0.2 * 5 * M.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "autous/diagnosis_agent.hpp"

namespace autous::assess {

/// Lowercases ASCII and splits on anything that is not [a-z0-9]. Bytes >= 0x80
/// are kept inside tokens so UTF-8 words survive intact.
std::vector<std::string> Tokenize(std::string_view text);

/// Suffix stripper. Rules, applied once each in order:
///   1. sses -> ss, ies -> y (stem >= 2), s -> "" unless ss/us/is (len > 3)
///   2. ing / ed -> "" when >= 3 characters remain, then a doubled final
///      consonant other than l, s, z is undoubled
///   3. ly -> "" when >= 3 characters remain
///   4. a final e is dropped when >= 4 characters remain
/// Tokens containing digits or non-ASCII bytes are returned unchanged.
std::string Stem(std::string_view token);

/// Word groups treated as interchangeable by the synonym stage.
class SynonymTable {
 public:
  SynonymTable() = default;
  explicit SynonymTable(const std::vector<std::vector<std::string>>& groups);

  /// One group per line, words separated by commas or whitespace; '#' starts a
  /// comment.
  static SynonymTable Parse(std::string_view text);
  static SynonymTable Load(const std::filesystem::path& path);

  /// Group id of a token (tried as given, then stemmed), or -1.
  int GroupOf(const std::string& token) const;
  bool empty() const { return groups_.empty(); }

 private:
  std::unordered_map<std::string, int> groups_;
};

struct MeteorParams {
  /// F = (1 + w) P R / (R + w P); w = 9 gives 10PR / (R + 9P).
  double recall_weight = 9.0;
  double penalty_gamma = 0.5;
  double penalty_power = 3.0;
  bool use_stemming = true;
  const SynonymTable* synonyms = nullptr;
  /// Search budget for chunk minimization; when exhausted the best alignment
  /// found so far is used (the first one tried is the greedy alignment).
  long node_limit = 200000;

  void Validate() const;
};

struct MeteorDetail {
  double score = 0;
  int matches = 0;
  int chunks = 0;
  int hyp_len = 0;
  int ref_len = 0;
  double precision = 0;
  double recall = 0;
  double fmean = 0;
  double penalty = 0;
  /// Matched reference index for each hypothesis token, -1 if unmatched.
  std::vector<int> alignment;
  bool search_truncated = false;
};

MeteorDetail MeteorDetailed(std::string_view hypothesis, std::string_view reference,
                            const MeteorParams& params = {});
double Meteor(std::string_view hypothesis, std::string_view reference, const MeteorParams& params = {});

/// Number of runs of consecutive hypothesis positions aligned to consecutive
/// reference positions.
int CountChunks(const std::vector<int>& alignment);

enum class Role { kAmateur, kExpert };

const char* RoleName(Role role);
Role ParseRole(const std::string& text);

struct Grade {
  std::string rater_id;
  Role role = Role::kAmateur;
  int score = 0;

  /// Throws ValidationError unless the rater id is non-empty and 1 <= score <= 5.
  void Validate() const;
};

struct GradeSheet {
  std::vector<Grade> grades;
  std::optional<double> meteor;

  /// Inserts or replaces the grade of grade.rater_id.
  void Upsert(const Grade& grade);
};

nlohmann::json ToJson(const Grade& grade);
Grade GradeFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const GradeSheet& sheet);
GradeSheet GradeSheetFromJson(const nlohmann::json& j);

struct RoleMeans {
  double amateur = 0;
  double expert = 0;
};

/// Arithmetic mean per role. Throws ValidationError naming a role with no
/// grades.
RoleMeans AggregateLikert(const std::vector<Grade>& grades);

/// 0.2 * s_amateur + 0.6 * s_expert + 0.2 * 5 * meteor. Role means must lie in
/// [1, 5] and meteor in [0, 1].
double FinalScore(double s_amateur, double s_expert, double meteor);

/// Rounds half away from zero to two decimals and formats ("3.25").
std::string Format2dp(double value);

/// Sections joined with single spaces, headers excluded.
std::string ReportText(const agent::DiagnosisReport& report);

struct ScoreResult {
  GradeSheet sheet;
  double s_amateur = 0;
  double s_expert = 0;
  double meteor = 0;
  double final_score = 0;
};

nlohmann::json ToJson(const ScoreResult& result);

/// METEOR of the report text against reference plus the grade aggregation.
ScoreResult ScoreCase(const agent::DiagnosisReport& report, std::string_view reference,
                      const std::vector<Grade>& grades, const MeteorParams& params = {});

/// Same, with a precomputed METEOR value.
ScoreResult ScoreWithMeteor(const std::vector<Grade>& grades, double meteor);

/// Parses `case_id,rater_id,role,score` rows (optional header line) into
/// grades per case id.
std::map<std::string, std::vector<Grade>> ParseGradesCsv(std::string_view text);

/// `case_id,S_amateur,S_expert,meteor,final,final_2dp` with a header row.
std::string ScoreCsv(const std::vector<std::pair<std::string, ScoreResult>>& rows);

}  // namespace autous::assess
