#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpad/common/kv_text.hpp"

// Presentation-attack metrics. Scores are "liveness": higher means more
// likely bona fide. A sample is accepted as bona fide when score >= threshold.
namespace fpad::metrics {

struct ScoreSet {
  std::vector<double> bona_fide;
  std::map<std::string, std::vector<double>> attacks;  // PAI species -> scores

  // Every attack score, species in sorted order.
  std::vector<double> pooled_attacks() const;
  std::size_t attack_count() const;
  // Scores must be finite and in [0,1]; species lists must be non-empty.
  void validate() const;
};

// Fraction of attack scores >= threshold. Empty input is a UsageError.
double apcer(std::span<const double> attack_scores, double threshold);
// Fraction of bona fide scores < threshold. Empty input is a UsageError.
double bpcer(std::span<const double> bona_fide_scores, double threshold);

struct RocPoint {
  double threshold;
  double fpr;  // pooled APCER
  double tpr;  // 1 − BPCER
};

struct RocCurve {
  // Thresholds run from +inf through every distinct score (descending) to
  // −inf, so the first point is (0,0) and the last is (1,1).
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// Needs at least one bona fide and one attack score (UsageError otherwise).
// AUC is the trapezoidal area, computed from integer counts so it equals the
// Mann–Whitney statistic (2·#[b>a] + #[b=a]) / (2·n_b·n_a) exactly.
RocCurve roc(const ScoreSet& set);

struct OperatingPoint {
  double target = 0.0;
  double threshold = 0.0;
  double apcer = 0.0;
  double bpcer = 1.0;
  bool attainable = false;
};

// Smallest threshold among the observed scores with pooled APCER <= target;
// BPCER is reported there. When no observed score qualifies the point is
// flagged unattainable with BPCER 1. Target must be in (0,1).
OperatingPoint bpcer_at_apcer(const ScoreSet& set, double target);

struct ThresholdPolicy {
  enum class Kind { min_acer, fixed };
  Kind kind = Kind::min_acer;
  double value = 0.5;  // used by Kind::fixed

  static ThresholdPolicy parse(const std::string& text);  // "min-acer" or "fixed:<t>"
  std::string to_string() const;
};

// Threshold chosen on a (validation) ScoreSet. For min_acer: the observed
// score minimizing ACER (ties to the higher score), then moved halfway down
// to the next lower observed score so that near-saturated scores at the
// boundary are not split by rounding.
double choose_threshold(const ScoreSet& set, const ThresholdPolicy& policy);

struct EvalReport {
  std::map<std::string, double> apcer_per_species;
  double apcer = 0.0;  // unweighted mean over species present
  double bpcer = 0.0;
  double acer = 0.0;
  double auc = 0.0;
  double threshold = 0.0;
  std::map<std::string, std::size_t> attack_counts;
  std::size_t bona_fide_count = 0;
  std::vector<OperatingPoint> bpcer_at;

  KeyValues to_kv() const;
  // Aligned human-readable table: one APCER row per species (upper case),
  // then BPCER for LIVE, then the overall rows.
  std::string render_table() const;
};

EvalReport evaluate(const ScoreSet& set, double threshold, std::span<const double> bpcer_targets = {});

// Rate in [0,1] shown as a percentage with two decimals: the percentage is
// first rounded to 12 significant digits (absorbing binary noise such as
// 0.37499999999999994), then rounded half-to-even at the second decimal.
std::string format_percent(double rate);

// Score file rows: sample_id,label,pai_species,score.
struct ScoreRow {
  std::string sample_id;
  bool bona_fide = true;
  std::string pai_species;  // empty for bona fide
  double score = 0.0;
};

void write_scores(std::ostream& out, std::span<const ScoreRow> rows);
std::vector<ScoreRow> read_scores(std::istream& in);
ScoreSet to_score_set(std::span<const ScoreRow> rows);

void write_roc(std::ostream& out, const RocCurve& curve);

}  // namespace fpad::metrics
