#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Dataset manifests: one JSON object per line with the fields
// id, class, pai_species, subject, split, path (null where absent).
// An optional first line {"fpad_manifest": {...}} carries provenance.
namespace fpad::dataio {

enum class SampleClass { live, synthetic, attack };
enum class Split { train, val, test };

const char* to_string(SampleClass c);
const char* to_string(Split s);
std::optional<SampleClass> parse_class(std::string_view text);
std::optional<Split> parse_split(std::string_view text);

// Species of both corpora; anything else is kept as a custom species.
const std::vector<std::string>& clarkson_species();
const std::vector<std::string>& colfispoof_species();
bool is_known_species(const std::string& name);

// Species label used when a synthetic record is scored as an attack source.
inline constexpr const char* kSyntheticSpecies = "synthetic";

struct SampleRecord {
  std::string id;
  SampleClass cls = SampleClass::live;
  std::optional<std::string> pai_species;
  std::optional<std::string> subject;
  std::optional<Split> split;
  std::string path;  // relative to the manifest directory unless absolute

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
  std::string corpus;
  std::optional<std::uint64_t> generator_seed;
  std::vector<SampleRecord> records;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct Diagnostic {
  std::size_t line = 0;  // 1-based
  std::string message;
  bool protocol = false;  // a protocol violation rather than a format error
};

struct ParseResult {
  DatasetManifest manifest;
  std::vector<Diagnostic> errors;
  std::vector<Diagnostic> warnings;

  bool ok() const { return errors.empty(); }
  // Throws ProtocolError if any error is a protocol violation, IoError for
  // other errors; the message lists every error with its line.
  void raise_if_failed() const;
};

// Never throws on bad content; problems are reported per line.
ParseResult parse_manifest(std::string_view text);
// Canonical text; parse_manifest(render_manifest(m)).manifest == m.
std::string render_manifest(const DatasetManifest& manifest);

DatasetManifest load_manifest(const std::filesystem::path& path);  // throws on errors
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct ManifestSummary {
  std::map<std::string, std::size_t> by_class;
  std::map<std::string, std::size_t> attacks_by_species;
  std::map<std::string, std::size_t> by_split;  // "unassigned" when split is null
  std::map<std::string, std::size_t> subjects_by_split;
  std::size_t subjects = 0;
};
ManifestSummary summarize(const DatasetManifest& manifest);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  double synthetic_train = 0.8;  // remainder of synthetic records goes to val
};

// Subject-level split of live records by seeded shuffle. floor(n·(val+test))
// subjects are held out (at least one per non-empty split) and train keeps the
// rest; the held-out subjects are divided between val and test in proportion
// to their ratios, val taking the ceiling. Synthetic records are shuffled and
// split train/val by `synthetic_train`; attack records always go to test. Too few subjects for
// the requested splits is a UsageError.
DatasetManifest make_splits(DatasetManifest manifest, const SplitRatios& ratios, std::uint64_t seed);

}  // namespace fpad::dataio
