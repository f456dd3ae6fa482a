#include "fpad/dataio/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fpad/common/rng.hpp"
#include "fpad/errors.hpp"

namespace fpad::dataio {

using Json = nlohmann::ordered_json;

const char* to_string(SampleClass c) {
  switch (c) {
    case SampleClass::live: return "live";
    case SampleClass::synthetic: return "synthetic";
    case SampleClass::attack: return "attack";
  }
  return "?";
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::optional<SampleClass> parse_class(std::string_view text) {
  for (auto c : {SampleClass::live, SampleClass::synthetic, SampleClass::attack}) {
    if (text == to_string(c)) return c;
  }
  return std::nullopt;
}

std::optional<Split> parse_split(std::string_view text) {
  for (auto s : {Split::train, Split::val, Split::test}) {
    if (text == to_string(s)) return s;
  }
  return std::nullopt;
}

const std::vector<std::string>& clarkson_species() {
  static const std::vector<std::string> v = {"ecoflex", "photopaper", "playdoh", "woodglue", "synthetic"};
  return v;
}

const std::vector<std::string>& colfispoof_species() {
  static const std::vector<std::string> v = {"dragonskin", "ecoflex",        "gelafix",        "gelatin",
                                             "glue",       "knetosil",       "latex",          "modelling-clay",
                                             "mouldable-glue", "paper-printout", "playdoh",    "silly-putty"};
  return v;
}

bool is_known_species(const std::string& name) {
  const auto& a = clarkson_species();
  const auto& b = colfispoof_species();
  return std::find(a.begin(), a.end(), name) != a.end() || std::find(b.begin(), b.end(), name) != b.end();
}

namespace {

constexpr const char* kFields[] = {"id", "class", "pai_species", "subject", "split", "path"};

Json optional_json(const std::optional<std::string>& v) { return v ? Json(*v) : Json(nullptr); }

std::string join_errors(const std::vector<Diagnostic>& errors) {
  std::string out;
  for (const auto& d : errors) out += "\n  line " + std::to_string(d.line) + ": " + d.message;
  return out;
}

}  // namespace

void ParseResult::raise_if_failed() const {
  if (errors.empty()) return;
  const bool protocol = std::any_of(errors.begin(), errors.end(), [](const Diagnostic& d) { return d.protocol; });
  const std::string msg = "manifest has " + std::to_string(errors.size()) + " error(s):" + join_errors(errors);
  if (protocol) throw ProtocolError(msg);
  throw IoError(msg);
}

ParseResult parse_manifest(std::string_view text) {
  ParseResult result;
  std::set<std::string> ids;
  std::map<std::string, std::pair<Split, std::size_t>> subject_split;  // subject -> (split, first line)
  std::size_t lineno = 0;
  std::size_t pos = 0;
  bool first_content = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    auto error = [&](std::string msg, bool protocol = false) {
      result.errors.push_back({lineno, std::move(msg), protocol});
    };
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      error(std::string("invalid JSON: ") + e.what());
      first_content = false;
      continue;
    }
    if (!j.is_object()) {
      error("expected a JSON object");
      first_content = false;
      continue;
    }
    if (first_content && j.size() == 1 && j.contains("fpad_manifest")) {
      first_content = false;
      const Json& h = j["fpad_manifest"];
      if (!h.is_object()) {
        error("provenance header must be an object");
        continue;
      }
      if (h.contains("corpus") && h["corpus"].is_string()) result.manifest.corpus = h["corpus"].get<std::string>();
      if (h.contains("generator_seed") && h["generator_seed"].is_number_unsigned()) {
        result.manifest.generator_seed = h["generator_seed"].get<std::uint64_t>();
      }
      continue;
    }
    first_content = false;

    bool shape_ok = j.size() == std::size(kFields);
    for (const char* f : kFields) shape_ok = shape_ok && j.contains(f);
    if (!shape_ok) {
      error("record must have exactly the fields id, class, pai_species, subject, split, path");
      continue;
    }
    auto str_or_null = [&](const char* f, std::optional<std::string>& out) {
      const Json& v = j[f];
      if (v.is_null()) return true;
      if (!v.is_string()) {
        error(std::string("field '") + f + "' must be a string or null");
        return false;
      }
      out = v.get<std::string>();
      return true;
    };
    std::optional<std::string> id, cls, species, subject, split, path;
    if (!str_or_null("id", id) || !str_or_null("class", cls) || !str_or_null("pai_species", species) ||
        !str_or_null("subject", subject) || !str_or_null("split", split) || !str_or_null("path", path)) {
      continue;
    }
    if (!id || id->empty()) {
      error("missing id");
      continue;
    }
    SampleRecord r;
    r.id = *id;
    const auto parsed_class = cls ? parse_class(*cls) : std::nullopt;
    if (!parsed_class) {
      error("record '" + r.id + "': class must be live, synthetic or attack");
      continue;
    }
    r.cls = *parsed_class;
    if (split) {
      r.split = parse_split(*split);
      if (!r.split) {
        error("record '" + r.id + "': split must be train, val, test or null");
        continue;
      }
    }
    if (!path || path->empty()) {
      error("record '" + r.id + "': missing path");
      continue;
    }
    r.path = *path;
    r.pai_species = species;
    r.subject = subject;

    bool ok = true;
    if (!ids.insert(r.id).second) {
      error("duplicate id '" + r.id + "'");
      ok = false;
    }
    if (r.cls == SampleClass::attack && !r.pai_species) {
      error("attack record '" + r.id + "' has no pai_species");
      ok = false;
    }
    if (r.cls == SampleClass::live && r.pai_species) {
      error("live record '" + r.id + "' must not carry a pai_species");
      ok = false;
    }
    if (r.cls == SampleClass::synthetic && r.pai_species && *r.pai_species != kSyntheticSpecies) {
      error("synthetic record '" + r.id + "' has pai_species '" + *r.pai_species + "'");
      ok = false;
    }
    if (r.cls == SampleClass::live && !r.subject) {
      error("live record '" + r.id + "' has no subject");
      ok = false;
    }
    if (r.cls == SampleClass::attack && r.split == Split::train) {
      error("attack record '" + r.id + "' is in the train split; training uses live and synthetic data only", true);
      ok = false;
    }
    if (r.subject && r.split) {
      auto [it, fresh] = subject_split.emplace(*r.subject, std::make_pair(*r.split, lineno));
      if (!fresh && it->second.first != *r.split) {
        error("subject '" + *r.subject + "' appears in split " + to_string(*r.split) + " and in split " +
                  to_string(it->second.first) + " (line " + std::to_string(it->second.second) + ")",
              true);
        ok = false;
      }
    }
    if (r.cls == SampleClass::attack && r.pai_species && !is_known_species(*r.pai_species)) {
      result.warnings.push_back({lineno, "unknown species '" + *r.pai_species + "' kept as a custom species"});
    }
    if (ok) result.manifest.records.push_back(std::move(r));
  }
  return result;
}

std::string render_manifest(const DatasetManifest& m) {
  std::string out;
  if (!m.corpus.empty() || m.generator_seed) {
    Json h = Json::object();
    h["corpus"] = m.corpus;
    h["generator_seed"] = m.generator_seed ? Json(*m.generator_seed) : Json(nullptr);
    Json line = Json::object();
    line["fpad_manifest"] = h;
    out += line.dump() + '\n';
  }
  for (const auto& r : m.records) {
    Json j = Json::object();
    j["id"] = r.id;
    j["class"] = to_string(r.cls);
    j["pai_species"] = optional_json(r.pai_species);
    j["subject"] = optional_json(r.subject);
    j["split"] = r.split ? Json(to_string(*r.split)) : Json(nullptr);
    j["path"] = r.path;
    out += j.dump() + '\n';
  }
  return out;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  ParseResult r = parse_manifest(buf.str());
  r.raise_if_failed();
  return std::move(r.manifest);
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << render_manifest(manifest);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ManifestSummary summarize(const DatasetManifest& m) {
  ManifestSummary s;
  std::set<std::string> subjects;
  std::map<std::string, std::set<std::string>> split_subjects;
  for (const auto& r : m.records) {
    ++s.by_class[to_string(r.cls)];
    if (r.cls == SampleClass::attack) ++s.attacks_by_species[r.pai_species.value_or("?")];
    const std::string split = r.split ? to_string(*r.split) : "unassigned";
    ++s.by_split[split];
    if (r.subject) {
      subjects.insert(*r.subject);
      split_subjects[split].insert(*r.subject);
    }
  }
  s.subjects = subjects.size();
  for (const auto& [split, set] : split_subjects) s.subjects_by_split[split] = set.size();
  return s;
}

DatasetManifest make_splits(DatasetManifest manifest, const SplitRatios& ratios, std::uint64_t seed) {
  for (double r : {ratios.train, ratios.val, ratios.test, ratios.synthetic_train}) {
    if (!(r >= 0.0 && r <= 1.0)) throw UsageError("split ratios must lie in [0,1]");
  }
  if (!(ratios.train > 0.0)) throw UsageError("train ratio must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw UsageError("train/val/test ratios must sum to 1");
  }

  std::set<std::string> subject_set;
  for (const auto& r : manifest.records) {
    if (r.cls == SampleClass::live) {
      if (!r.subject) throw UsageError("live record '" + r.id + "' has no subject");
      subject_set.insert(*r.subject);
    }
  }
  std::vector<std::string> subjects(subject_set.begin(), subject_set.end());
  const std::size_t n = subjects.size();
  const std::size_t wanted = 1 + (ratios.val > 0.0 ? 1 : 0) + (ratios.test > 0.0 ? 1 : 0);
  const std::size_t held_out = std::max<std::size_t>(
      wanted - 1, static_cast<std::size_t>(std::floor(static_cast<double>(n) * (ratios.val + ratios.test) + 1e-9)));
  if (n < wanted || held_out >= n) {
    throw UsageError(std::to_string(n) + " live subject(s) cannot fill " + std::to_string(wanted) + " splits");
  }
  const std::size_t rest = held_out;
  std::size_t n_val = 0, n_test = 0;
  if (ratios.val > 0.0 && ratios.test > 0.0) {
    const auto k = static_cast<std::size_t>(
        std::ceil(static_cast<double>(rest) * ratios.val / (ratios.val + ratios.test) - 1e-9));
    n_val = std::clamp<std::size_t>(k, 1, rest - 1);
    n_test = rest - n_val;
  } else if (ratios.val > 0.0) {
    n_val = rest;
  } else if (ratios.test > 0.0) {
    n_test = rest;
  }

  Rng rng(derive_seed(seed, hash_string("subjects")));
  rng.shuffle(subjects.begin(), subjects.end());
  std::map<std::string, Split> assignment;
  for (std::size_t i = 0; i < n; ++i) {
    assignment[subjects[i]] = i < n_val ? Split::val : (i < n_val + n_test ? Split::test : Split::train);
  }

  std::vector<std::size_t> synthetic;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    auto& r = manifest.records[i];
    switch (r.cls) {
      case SampleClass::live: r.split = assignment.at(*r.subject); break;
      case SampleClass::attack: r.split = Split::test; break;
      case SampleClass::synthetic: synthetic.push_back(i); break;
    }
  }
  Rng syn_rng(derive_seed(seed, hash_string("synthetic")));
  syn_rng.shuffle(synthetic.begin(), synthetic.end());
  const auto n_syn_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(synthetic.size()) * ratios.synthetic_train + 1e-9));
  for (std::size_t k = 0; k < synthetic.size(); ++k) {
    manifest.records[synthetic[k]].split = k < n_syn_train ? Split::train : Split::val;
  }
  return manifest;
}

}  // namespace fpad::dataio
