#include "fpad/dataio/generator.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "fpad/errors.hpp"
#include "fpad/tensorcore/serialize.hpp"

namespace fpad::dataio {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

using Displacement = std::function<std::pair<double, double>(double, double)>;

Tensor render(const RidgeParams& p, int size, const Displacement& warp) {
  const auto n = static_cast<std::size_t>(size);
  Tensor out(Shape{1, n, n});
  const double c = (size - 1) / 2.0;
  const double cs = std::cos(p.orientation), sn = std::sin(p.orientation);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double xs = x - c - p.shift_x, ys = y - c - p.shift_y;
      if (warp) {
        const auto [dx, dy] = warp(x, y);
        xs += dx;
        ys += dy;
      }
      const double u = xs * cs + ys * sn;
      const double v = -xs * sn + ys * cs;
      out[static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x)] =
          std::sin(kTwoPi * p.frequency * u + p.curvature * v * v / size + p.phase);
    }
  }
  return out;
}

RidgeParams random_ridges(Rng& rng) {
  RidgeParams p;
  p.frequency = rng.uniform(0.15, 0.26);
  p.orientation = rng.uniform(0.0, std::numbers::pi);
  p.curvature = rng.uniform(-1.5, 1.5);
  return p;
}

// Per-sample variation of a subject's ridge pattern: placement (any
// rotation and shift) plus small changes in ridge spacing and curvature.
RidgeParams jitter(RidgeParams p, Rng& rng) {
  p.orientation = rng.uniform(0.0, std::numbers::pi);
  p.frequency *= 1.0 + 0.06 * rng.normal();
  p.curvature += 0.3 * rng.normal();
  p.phase = rng.uniform(0.0, kTwoPi);
  p.shift_x = rng.uniform(-4.0, 4.0);
  p.shift_y = rng.uniform(-4.0, 4.0);
  return p;
}

void add_noise(Tensor& t, double sigma, Rng& rng) {
  for (auto& v : t.data()) v += sigma * rng.normal();
}

void gaussian_blur(Tensor& t, double sigma) {
  const std::size_t h = t.dim(1), w = t.dim(2);
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  auto clampi = [](long v, long hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  std::vector<double> tmp(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * t[y * w + clampi(static_cast<long>(x) + i, static_cast<long>(w) - 1)];
      tmp[y * w + x] = s;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[clampi(static_cast<long>(y) + i, static_cast<long>(h) - 1) * w + x];
      t[y * w + x] = s;
    }
  }
}

std::string subject_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%02d", i + 1);
  return buf;
}

std::string numbered(const std::string& prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return prefix + buf;
}

}  // namespace

Tensor render_ridges(const RidgeParams& p, int size) { return render(p, size, nullptr); }

Corruption corruption_for(const std::string& species) {
  if (species == "photopaper") return Corruption::blur;
  if (species == "playdoh") return Corruption::quantize;
  if (species == "woodglue") return Corruption::contrast;
  if (species == "ecoflex") return Corruption::speckle;
  throw UsageError("no procedural corruption for species '" + species + "'");
}

void apply_corruption(Tensor& image, Corruption kind, Rng& rng) {
  switch (kind) {
    case Corruption::blur:
      gaussian_blur(image, rng.uniform(0.9, 1.4));
      break;
    case Corruption::quantize: {
      const double levels = 2.0 + static_cast<double>(rng.below(2));
      for (auto& v : image.data()) v = std::round((v + 1.0) / 2.0 * (levels - 1.0)) / (levels - 1.0) * 2.0 - 1.0;
      break;
    }
    case Corruption::contrast: {
      const double gain = rng.uniform(0.3, 0.5), offset = rng.uniform(-0.2, 0.2);
      for (auto& v : image.data()) v = gain * v + offset;
      break;
    }
    case Corruption::speckle: {
      const double sigma = rng.uniform(0.4, 0.7);
      for (auto& v : image.data()) v *= 1.0 + sigma * rng.normal();
      break;
    }
  }
}

void GeneratorConfig::validate() const {
  if (subjects < 1) throw UsageError("--subjects must be at least 1");
  if (per_subject < 1) throw UsageError("--per-subject must be at least 1");
  if (synthetic < -1) throw UsageError("synthetic count must be non-negative");
  if (attacks_per_species < 0) throw UsageError("attacks per species must be non-negative");
  if (size < 8) throw UsageError("image size must be at least 8");
  if (!(noise >= 0.0) || !(warp_pixels >= 0.0) || !(amplitude_mod >= 0.0 && amplitude_mod < 1.0)) {
    throw UsageError("invalid generator noise/warp/amplitude settings");
  }
  for (const auto& s : species) corruption_for(s);
}

KeyValues GeneratorConfig::to_kv() const {
  KeyValues kv;
  kv.set("gen.subjects", subjects);
  kv.set("gen.per_subject", per_subject);
  kv.set("gen.synthetic", synthetic);
  kv.set("gen.attacks_per_species", attacks_per_species);
  kv.set("gen.size", size);
  kv.set("gen.noise", noise);
  kv.set("gen.warp_pixels", warp_pixels);
  kv.set("gen.amplitude_mod", amplitude_mod);
  std::string joined;
  for (const auto& s : species) joined += (joined.empty() ? "" : ",") + s;
  kv.set("gen.species", joined);
  return kv;
}

GeneratorConfig GeneratorConfig::from_kv(const KeyValues& kv, const GeneratorConfig& defaults) {
  GeneratorConfig c = defaults;
  auto get_int = [&](const char* key, int& out) {
    if (kv.contains(key)) out = static_cast<int>(kv.get_int(key));
  };
  auto get_double = [&](const char* key, double& out) {
    if (kv.contains(key)) out = kv.get_double(key);
  };
  get_int("gen.subjects", c.subjects);
  get_int("gen.per_subject", c.per_subject);
  get_int("gen.synthetic", c.synthetic);
  get_int("gen.attacks_per_species", c.attacks_per_species);
  get_int("gen.size", c.size);
  get_double("gen.noise", c.noise);
  get_double("gen.warp_pixels", c.warp_pixels);
  get_double("gen.amplitude_mod", c.amplitude_mod);
  if (kv.contains("gen.species")) {
    c.species.clear();
    std::stringstream ss(kv.get("gen.species"));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) c.species.push_back(item);
    }
  }
  return c;
}

Tensor generate_image(const SampleRecord& r, const GeneratorConfig& config, std::uint64_t seed) {
  Rng rng(derive_seed(seed, hash_string(r.id)));
  Tensor image;
  switch (r.cls) {
    case SampleClass::live: {
      if (!r.subject) throw UsageError("live record '" + r.id + "' has no subject");
      Rng subject_rng(derive_seed(seed, hash_string("subject:" + *r.subject)));
      image = render_ridges(jitter(random_ridges(subject_rng), rng), config.size);
      break;
    }
    case SampleClass::synthetic: {
      // Synthetic prints come from a pool of generated identities, as many as
      // there are live subjects, so ridge geometry alone does not mark a fake.
      Rng identity_rng(derive_seed(seed, hash_string("identity:" + std::to_string(rng.below(config.subjects)))));
      const RidgeParams p = jitter(random_ridges(identity_rng), rng);
      const double strength = rng.uniform(0.45, 1.0);
      const double a = strength * config.warp_pixels;
      const double m = strength * config.amplitude_mod;
      const double k1 = rng.uniform(0.5, 1.5) / config.size, k2 = rng.uniform(0.5, 1.5) / config.size;
      const double p1 = rng.uniform(0.0, kTwoPi), p2 = rng.uniform(0.0, kTwoPi), p3 = rng.uniform(0.0, kTwoPi);
      const double dir = rng.uniform(0.0, std::numbers::pi);
      image = render(p, config.size, [&](double x, double y) {
        return std::make_pair(a * std::sin(kTwoPi * k1 * y + p1), a * std::sin(kTwoPi * k2 * x + p2));
      });
      const double c = (config.size - 1) / 2.0;
      const auto n = static_cast<std::size_t>(config.size);
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const double t = (static_cast<double>(x) - c) * std::cos(dir) + (static_cast<double>(y) - c) * std::sin(dir);
          image[y * n + x] *= 1.0 + m * std::sin(kTwoPi * k1 * t + p3);
        }
      }
      // Rendering imperfections: fine grain, a clipped waveform, a faded print.
      const double grain = rng.uniform() < 0.5 ? std::sqrt(rng.uniform()) * 0.35 : 0.0;
      const double gain = rng.uniform() < 0.5 ? 1.0 + std::sqrt(rng.uniform()) * 3.0 : 1.0;
      const double fade = rng.uniform() < 1.0 / 3.0 ? rng.uniform(0.5, 0.85) : 1.0;
      for (auto& v : image.data()) v = fade * std::tanh(gain * v) / std::tanh(gain) * (1.0 + grain * rng.normal());
      break;
    }
    case SampleClass::attack: {
      if (!r.pai_species) throw UsageError("attack record '" + r.id + "' has no species");
      image = render_ridges(jitter(random_ridges(rng), rng), config.size);
      apply_corruption(image, corruption_for(*r.pai_species), rng);
      break;
    }
  }
  add_noise(image, config.noise, rng);
  return image;
}

GeneratedData generate(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  GeneratedData out;
  out.manifest.corpus = "procedural";
  out.manifest.generator_seed = seed;
  auto add = [&](SampleRecord r) {
    r.path = "images/" + r.id + ".tensor";
    out.manifest.records.push_back(r);
  };
  for (int s = 0; s < config.subjects; ++s) {
    const std::string subject = subject_name(s);
    for (int i = 0; i < config.per_subject; ++i) {
      SampleRecord r;
      r.id = numbered("live-" + subject + "-", i);
      r.cls = SampleClass::live;
      r.subject = subject;
      add(r);
    }
  }
  const int synthetic = config.synthetic < 0 ? config.subjects * config.per_subject : config.synthetic;
  for (int i = 0; i < synthetic; ++i) {
    SampleRecord r;
    r.id = numbered("syn-", i);
    r.cls = SampleClass::synthetic;
    r.pai_species = kSyntheticSpecies;
    add(r);
  }
  for (const auto& species : config.species) {
    for (int i = 0; i < config.attacks_per_species; ++i) {
      SampleRecord r;
      r.id = numbered("atk-" + species + "-", i);
      r.cls = SampleClass::attack;
      r.pai_species = species;
      add(r);
    }
  }
  for (const auto& r : out.manifest.records) out.images.emplace(r.id, generate_image(r, config, seed));
  return out;
}

void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                   const std::map<std::string, Tensor>& images) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create '" + (dir / "images").string() + "': " + ec.message());
  for (const auto& r : manifest.records) {
    auto it = images.find(r.id);
    if (it == images.end()) throw UsageError("no image for record '" + r.id + "'");
    save_tensor(dir / r.path, it->second);
  }
  save_manifest(dir / "manifest.jsonl", manifest);
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t += c;
    }
    return t;
  };
  if (token() != "P5") throw IoError("'" + path.string() + "' is not a binary PGM (P5)");
  long w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw IoError("'" + path.string() + "' has a malformed PGM header");
  }
  if (w < 1 || h < 1) throw IoError("'" + path.string() + "' has invalid PGM extents");
  if (maxval != 255) throw IoError("'" + path.string() + "': only maxval 255 is supported");
  std::vector<unsigned char> pixels(static_cast<std::size_t>(w * h));
  if (!in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()))) {
    throw IoError("'" + path.string() + "' is truncated");
  }
  Tensor out(Shape{1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = pixels[i] / 127.5 - 1.0;
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) throw DimensionError("write_pgm expects [1×H×W], got " + shape_str(image.shape()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << image.dim(2) << ' ' << image.dim(1) << "\n255\n";
  for (double v : image.storage()) {
    const double p = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
    out.put(static_cast<char>(static_cast<unsigned char>(p)));
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Tensor load_image(const std::filesystem::path& path) {
  if (path.extension() == ".pgm") return read_pgm(path);
  return load_tensor(path);
}

ImageSet stack_images(std::vector<SampleRecord> records, const std::vector<Tensor>& images) {
  if (records.empty()) throw UsageError("no images selected");
  if (records.size() != images.size()) throw DimensionError("record and image counts differ");
  const Shape& shape = images.front().shape();
  Shape stacked{images.size()};
  stacked.insert(stacked.end(), shape.begin(), shape.end());
  Tensor all(stacked);
  const std::size_t each = images.front().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != shape) {
      throw DimensionError("image '" + records[i].id + "' has shape " + shape_str(images[i].shape()) + ", expected " +
                           shape_str(shape));
    }
    std::copy(images[i].storage().begin(), images[i].storage().end(), all.data().begin() + static_cast<long>(i * each));
  }
  return {std::move(all), std::move(records)};
}

ImageSet load_split(const DatasetManifest& manifest, const std::filesystem::path& base_dir, Split split) {
  std::vector<SampleRecord> records;
  std::vector<Tensor> images;
  for (const auto& r : manifest.records) {
    if (r.split != split) continue;
    const std::filesystem::path rel(r.path);
    const std::filesystem::path p = rel.is_absolute() ? rel : base_dir / rel;
    images.push_back(load_image(p));
    records.push_back(r);
  }
  if (records.empty()) throw UsageError(std::string("manifest has no records in split ") + to_string(split));
  return stack_images(std::move(records), images);
}

}  // namespace fpad::dataio
