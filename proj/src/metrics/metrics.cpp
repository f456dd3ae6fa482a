#include "fpad/metrics/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "fpad/errors.hpp"

namespace fpad::metrics {

namespace {

std::size_t count_at_least(std::span<const double> sorted, double t) {
  return static_cast<std::size_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
}

std::vector<double> sorted_copy(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  return s;
}

// Sorted score lists for repeated threshold queries.
struct SortedSet {
  std::vector<double> bona_fide;
  std::vector<std::vector<double>> species;
  std::vector<double> pooled;

  explicit SortedSet(const ScoreSet& set) : bona_fide(sorted_copy(set.bona_fide)), pooled(sorted_copy(set.pooled_attacks())) {
    for (const auto& [name, scores] : set.attacks) species.push_back(sorted_copy(scores));
  }

  double bpcer_at(double t) const {
    return static_cast<double>(bona_fide.size() - count_at_least(bona_fide, t)) /
           static_cast<double>(bona_fide.size());
  }
  double pooled_apcer_at(double t) const {
    return static_cast<double>(count_at_least(pooled, t)) / static_cast<double>(pooled.size());
  }
  double mean_apcer_at(double t) const {
    double total = 0.0;
    for (const auto& s : species) total += static_cast<double>(count_at_least(s, t)) / static_cast<double>(s.size());
    return total / static_cast<double>(species.size());
  }
};

std::vector<double> distinct_scores(const ScoreSet& set) {
  std::vector<double> all = set.pooled_attacks();
  all.insert(all.end(), set.bona_fide.begin(), set.bona_fide.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

void require_both_classes(const ScoreSet& set, const char* what) {
  set.validate();
  if (set.bona_fide.empty() || set.attack_count() == 0) {
    throw UsageError(std::string(what) + " needs both bona fide and attack scores");
  }
}

}  // namespace

std::vector<double> ScoreSet::pooled_attacks() const {
  std::vector<double> out;
  for (const auto& [name, scores] : attacks) out.insert(out.end(), scores.begin(), scores.end());
  return out;
}

std::size_t ScoreSet::attack_count() const {
  std::size_t n = 0;
  for (const auto& [name, scores] : attacks) n += scores.size();
  return n;
}

void ScoreSet::validate() const {
  auto check = [](double s, const std::string& where) {
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
      throw UsageError("score " + format_double(s) + " (" + where + ") is outside [0,1]");
    }
  };
  for (double s : bona_fide) check(s, "bona fide");
  for (const auto& [name, scores] : attacks) {
    if (scores.empty()) throw UsageError("attack species '" + name + "' has no scores");
    for (double s : scores) check(s, name);
  }
}

double apcer(std::span<const double> attack_scores, double threshold) {
  if (attack_scores.empty()) throw UsageError("apcer of an empty attack list");
  const auto n = std::count_if(attack_scores.begin(), attack_scores.end(), [&](double s) { return s >= threshold; });
  return static_cast<double>(n) / static_cast<double>(attack_scores.size());
}

double bpcer(std::span<const double> bona_fide_scores, double threshold) {
  if (bona_fide_scores.empty()) throw UsageError("bpcer of an empty bona fide list");
  const auto n =
      std::count_if(bona_fide_scores.begin(), bona_fide_scores.end(), [&](double s) { return s < threshold; });
  return static_cast<double>(n) / static_cast<double>(bona_fide_scores.size());
}

RocCurve roc(const ScoreSet& set) {
  require_both_classes(set, "roc");
  const SortedSet sorted(set);
  const auto nb = static_cast<std::uint64_t>(sorted.bona_fide.size());
  const auto na = static_cast<std::uint64_t>(sorted.pooled.size());
  std::vector<double> thresholds = distinct_scores(set);
  std::reverse(thresholds.begin(), thresholds.end());

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::uint64_t prev_a = 0, prev_b = 0, area2 = 0;
  for (double t : thresholds) {
    const std::uint64_t ca = count_at_least(sorted.pooled, t);
    const std::uint64_t cb = count_at_least(sorted.bona_fide, t);
    area2 += (ca - prev_a) * (cb + prev_b);
    curve.points.push_back({t, static_cast<double>(ca) / static_cast<double>(na),
                            static_cast<double>(cb) / static_cast<double>(nb)});
    prev_a = ca;
    prev_b = cb;
  }
  curve.points.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
  curve.auc = static_cast<double>(area2) / static_cast<double>(2 * na * nb);
  return curve;
}

OperatingPoint bpcer_at_apcer(const ScoreSet& set, double target) {
  if (!(target > 0.0 && target < 1.0)) throw UsageError("APCER target must be in (0,1), got " + format_double(target));
  require_both_classes(set, "bpcer_at_apcer");
  const SortedSet sorted(set);
  OperatingPoint op;
  op.target = target;
  for (double t : distinct_scores(set)) {
    const double a = sorted.pooled_apcer_at(t);
    if (a <= target) {
      op.threshold = t;
      op.apcer = a;
      op.bpcer = sorted.bpcer_at(t);
      op.attainable = true;
      return op;
    }
  }
  op.threshold = std::numeric_limits<double>::infinity();
  op.apcer = 0.0;
  op.bpcer = 1.0;
  return op;
}

ThresholdPolicy ThresholdPolicy::parse(const std::string& text) {
  ThresholdPolicy p;
  if (text == "min-acer") return p;
  if (text.starts_with("fixed:")) {
    p.kind = Kind::fixed;
    p.value = parse_double(text.substr(6), "fixed threshold");
    return p;
  }
  if (text == "fixed") {
    p.kind = Kind::fixed;
    return p;
  }
  throw UsageError("unknown threshold policy '" + text + "' (expected min-acer or fixed:<t>)");
}

std::string ThresholdPolicy::to_string() const {
  return kind == Kind::min_acer ? "min-acer" : "fixed:" + format_double(value);
}

double choose_threshold(const ScoreSet& set, const ThresholdPolicy& policy) {
  if (policy.kind == ThresholdPolicy::Kind::fixed) return policy.value;
  require_both_classes(set, "choose_threshold");
  const SortedSet sorted(set);
  const std::vector<double> candidates = distinct_scores(set);
  std::size_t best = 0;
  double best_acer = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double acer = (sorted.mean_apcer_at(candidates[i]) + sorted.bpcer_at(candidates[i])) / 2.0;
    if (acer <= best_acer) {
      best_acer = acer;
      best = i;
    }
  }
  if (best == 0) return candidates[0];
  return candidates[best - 1] + (candidates[best] - candidates[best - 1]) / 2.0;
}

EvalReport evaluate(const ScoreSet& set, double threshold, std::span<const double> bpcer_targets) {
  require_both_classes(set, "evaluate");
  EvalReport r;
  r.threshold = threshold;
  r.bona_fide_count = set.bona_fide.size();
  double total = 0.0;
  for (const auto& [name, scores] : set.attacks) {
    const double a = apcer(scores, threshold);
    r.apcer_per_species[name] = a;
    r.attack_counts[name] = scores.size();
    total += a;
  }
  r.apcer = total / static_cast<double>(set.attacks.size());
  r.bpcer = bpcer(set.bona_fide, threshold);
  r.acer = (r.apcer + r.bpcer) / 2.0;
  r.auc = roc(set).auc;
  for (double t : bpcer_targets) r.bpcer_at.push_back(bpcer_at_apcer(set, t));
  return r;
}

KeyValues EvalReport::to_kv() const {
  KeyValues kv;
  for (const auto& [name, a] : apcer_per_species) {
    kv.set("apcer." + name, a);
    kv.set("count.attack." + name, static_cast<std::int64_t>(attack_counts.at(name)));
  }
  kv.set("count.bona_fide", static_cast<std::int64_t>(bona_fide_count));
  kv.set("apcer", apcer);
  kv.set("bpcer", bpcer);
  kv.set("acer", acer);
  kv.set("auc", auc);
  kv.set("threshold", threshold);
  for (const auto& op : bpcer_at) {
    const std::string key = "bpcer_at_apcer." + format_double(op.target);
    kv.set(key, op.bpcer);
    kv.set(key + ".attainable", op.attainable);
    kv.set(key + ".threshold", op.threshold);
  }
  return kv;
}

std::string EvalReport::render_table() const {
  auto upper = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
  };
  std::ostringstream out;
  auto line = [&](const std::string& cls, const std::string& metric, const std::string& value) {
    out << std::left << std::setw(18) << cls << std::setw(13) << metric << std::right << std::setw(9) << value
        << '\n';
  };
  line("PAI", "METRIC", "VALUE(%)");
  for (const auto& [name, a] : apcer_per_species) line(upper(name), "APCER", format_percent(a));
  line("LIVE", "BPCER", format_percent(bpcer));
  line("AVERAGE", "APCER", format_percent(apcer));
  line("AVERAGE", "BPCER", format_percent(bpcer));
  line("AVERAGE", "ACER", format_percent(acer));
  line("ALL", "AUC", format_percent(auc));
  for (const auto& op : bpcer_at) {
    std::string value = format_percent(op.bpcer);
    if (!op.attainable) value += "*";
    line("LIVE", "BPCER@" + format_percent(op.target), value);
  }
  out << "threshold " << format_double(threshold) << '\n';
  if (std::any_of(bpcer_at.begin(), bpcer_at.end(), [](const OperatingPoint& op) { return !op.attainable; })) {
    out << "* APCER target not attainable at any observed score\n";
  }
  return out.str();
}

std::string format_percent(double rate) {
  const double v = rate * 100.0;
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.11e", std::abs(v));
  // buf = d.ddddddddddde±XX: twelve significant digits D, exponent E, so
  // |v| = D·10^(E−11) and the value in hundredths is D·10^(E−9).
  std::uint64_t digits = 0;
  const char* p = buf;
  for (; *p != 'e'; ++p) {
    if (*p != '.') digits = digits * 10 + static_cast<std::uint64_t>(*p - '0');
  }
  const int shift = std::atoi(p + 1) - 9;
  std::uint64_t cents = 0;
  if (shift >= 0) {
    cents = digits;
    for (int i = 0; i < shift; ++i) cents *= 10;
  } else if (shift > -13) {
    std::uint64_t div = 1;
    for (int i = 0; i < -shift; ++i) div *= 10;
    cents = digits / div;
    const std::uint64_t rem = digits % div;
    if (2 * rem > div || (2 * rem == div && cents % 2 == 1)) ++cents;
  }
  std::snprintf(buf, sizeof buf, "%s%llu.%02llu", (v < 0 && cents > 0) ? "-" : "",
                static_cast<unsigned long long>(cents / 100), static_cast<unsigned long long>(cents % 100));
  return buf;
}

void write_scores(std::ostream& out, std::span<const ScoreRow> rows) {
  out << "sample_id,label,pai_species,score\n";
  for (const auto& r : rows) {
    for (const auto* field : {&r.sample_id, &r.pai_species}) {
      if (field->find_first_of(",\"\n\r") != std::string::npos) {
        throw UsageError("score file field '" + *field + "' contains a separator");
      }
    }
    out << r.sample_id << ',' << (r.bona_fide ? "bona_fide" : "attack") << ',' << r.pai_species << ','
        << format_double(r.score) << '\n';
  }
  if (!out) throw IoError("failed writing score file");
}

std::vector<ScoreRow> read_scores(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("score file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sample_id,label,pai_species,score") throw IoError("score file has an unexpected header: " + line);
  std::vector<ScoreRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    const std::string where = "score file line " + std::to_string(lineno);
    if (f.size() != 4) throw IoError(where + ": expected 4 fields");
    ScoreRow r;
    r.sample_id = f[0];
    if (f[1] == "bona_fide") {
      r.bona_fide = true;
      if (!f[2].empty()) throw IoError(where + ": bona fide rows carry no species");
    } else if (f[1] == "attack") {
      r.bona_fide = false;
      if (f[2].empty()) throw IoError(where + ": attack rows need a species");
    } else {
      throw IoError(where + ": unknown label '" + f[1] + "'");
    }
    r.pai_species = f[2];
    try {
      r.score = parse_double(f[3], "score");
    } catch (const UsageError& e) {
      throw IoError(where + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

ScoreSet to_score_set(std::span<const ScoreRow> rows) {
  ScoreSet set;
  for (const auto& r : rows) {
    if (r.bona_fide) {
      set.bona_fide.push_back(r.score);
    } else {
      set.attacks[r.pai_species].push_back(r.score);
    }
  }
  return set;
}

void write_roc(std::ostream& out, const RocCurve& curve) {
  out << "threshold,fpr,tpr\n";
  for (const auto& p : curve.points) {
    out << format_double(p.threshold) << ',' << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
  }
}

}  // namespace fpad::metrics
