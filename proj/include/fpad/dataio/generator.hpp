#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fpad/common/kv_text.hpp"
#include "fpad/common/rng.hpp"
#include "fpad/dataio/manifest.hpp"
#include "fpad/tensorcore/tensor.hpp"

// Procedural stand-in data: single-channel ridge textures. Live samples are
// oriented sinusoidal ridge fields with per-subject parameters; synthetic
// samples are drawn from their own identity pool, warped, amplitude modulated
// and given mild rendering flaws; pseudo attack species are ridge fields
// under a corruption.
namespace fpad::dataio {

struct RidgeParams {
  double frequency = 0.2;    // cycles per pixel along the ridge normal
  double orientation = 0.0;  // radians
  double curvature = 0.0;    // quadratic phase along the ridges
  double phase = 0.0;
  double shift_x = 0.0;
  double shift_y = 0.0;
};

// Clean ridge field in [-1,1], shape [1×size×size].
Tensor render_ridges(const RidgeParams& p, int size);

// Corruptions applied to clean fields. Each reads its strength from `rng`.
enum class Corruption { blur, quantize, contrast, speckle };
// photopaper → blur, playdoh → quantize, woodglue → contrast, ecoflex → speckle.
Corruption corruption_for(const std::string& species);
void apply_corruption(Tensor& image, Corruption kind, Rng& rng);

struct GeneratorConfig {
  int subjects = 26;
  int per_subject = 40;
  int synthetic = -1;            // -1: same as the live count
  int attacks_per_species = 40;
  int size = 32;
  double noise = 0.05;           // additive sensor noise (all classes)
  double warp_pixels = 3.0;      // synthetic warp amplitude at full strength
  double amplitude_mod = 0.6;    // synthetic amplitude modulation at full strength
  std::vector<std::string> species = {"ecoflex", "photopaper", "playdoh", "woodglue"};

  void validate() const;  // UsageError on non-positive counts or unknown corruption species
  KeyValues to_kv() const;
  // Keys absent from `kv` keep the values of `defaults`.
  static GeneratorConfig from_kv(const KeyValues& kv, const GeneratorConfig& defaults);
};

struct GeneratedData {
  DatasetManifest manifest;                // splits unassigned
  std::map<std::string, Tensor> images;    // id -> [1×size×size]
};

// Deterministic in (config, seed); each record draws from its own stream
// derived from the seed and its id.
GeneratedData generate(const GeneratorConfig& config, std::uint64_t seed);
// Image of one record of a generated manifest (used by generate).
Tensor generate_image(const SampleRecord& record, const GeneratorConfig& config, std::uint64_t seed);

// Writes images/<id>.tensor under `dir` plus `manifest.jsonl`.
void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                   const std::map<std::string, Tensor>& images);

// Binary portable graymap (P5, maxval 255) as a [1×H×W] tensor scaled to [-1,1].
Tensor read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor& image);

// `.pgm` files go through read_pgm, anything else through load_tensor.
Tensor load_image(const std::filesystem::path& path);

struct ImageSet {
  Tensor images;  // [N×C×H×W]
  std::vector<SampleRecord> records;
};

// Stacks the images of every record in `split` (paths resolved against
// `base_dir`). All images must share one shape. Empty selections are a
// UsageError.
ImageSet load_split(const DatasetManifest& manifest, const std::filesystem::path& base_dir, Split split);
ImageSet stack_images(std::vector<SampleRecord> records, const std::vector<Tensor>& images);

}  // namespace fpad::dataio
