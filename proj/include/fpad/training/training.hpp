#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpad/common/kv_text.hpp"
#include "fpad/dataio/generator.hpp"
#include "fpad/dataio/manifest.hpp"
#include "fpad/metrics/metrics.hpp"
#include "fpad/network/checkpoint.hpp"
#include "fpad/network/network.hpp"

namespace fpad::training {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

// Bias-corrected Adam update from each tensor's grad buffer (a tensor
// without one counts as a zero gradient). Moments are created on the first
// call. A non-finite gradient throws NumericError naming the parameter, before
// anything is modified.
void adam_step(const NamedParams& params, AdamState& state, double lr);

struct TrainConfig {
  int epochs = 20;
  double lr = 0.001;
  int batch_size = 32;
  double lambda = 0.0411;
  std::uint64_t seed = 0;
  double s = 30.0;
  double m = 0.3;
  double alpha = 0.5;

  void validate() const;  // ConfigError
  KeyValues to_kv() const;  // train.* keys
  static TrainConfig from_kv(const KeyValues& kv, const TrainConfig& defaults);
  losses::JointLossConfig loss() const { return {lambda, s, m, alpha}; }
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double joint = 0.0;
  double arcface = 0.0;
  double center = 0.0;
};

// One line per epoch: epoch<TAB>joint<TAB>arcface<TAB>center.
void write_loss_log(std::ostream& out, std::span<const EpochLog> log);

// live → 0, synthetic → 1; attack records violate the training protocol
// (ProtocolError).
int training_label(const dataio::SampleRecord& record);

struct TrainResult {
  network::Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

struct BatchReport {
  int epoch = 0;   // 1-based
  int batch = 0;   // 1-based within the epoch
  double joint = 0.0;
  double arcface = 0.0;
  double center = 0.0;
  const network::Checkpoint* state = nullptr;  // after the update
};
using BatchObserver = std::function<void(const BatchReport&)>;

// Builds the network from `net_config` (seeded from cfg.seed) and trains it.
// Per batch: forward (train mode), joint loss, backward, Adam step, center
// update on the normalized embeddings, head column renormalization. Batches
// are reshuffled every epoch. Non-finite losses throw NumericError.
// `observer`, if set, sees every batch after its update.
TrainResult train(const network::NetworkConfig& net_config, const TrainConfig& cfg, const dataio::ImageSet& data,
                  const BatchObserver& observer = {});

// Eval-mode live-class probabilities, computed in chunks.
std::vector<double> score_images(const network::Network& net, const Tensor& images, std::size_t chunk = 128);

// live → bona fide; synthetic → attack species "synthetic"; attack → its species.
metrics::ScoreSet make_score_set(std::span<const dataio::SampleRecord> records, std::span<const double> scores);
std::vector<metrics::ScoreRow> make_score_rows(std::span<const dataio::SampleRecord> records,
                                               std::span<const double> scores);

std::vector<double> default_lambda_grid();

struct SweepEntry {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  metrics::RocCurve roc;
  double threshold = 0.0;  // min-ACER validation threshold
  TrainResult result;
};

struct SweepResult {
  std::vector<SweepEntry> entries;  // grid order
  std::size_t selected = 0;

  const SweepEntry& best() const { return entries.at(selected); }
};

// Trains one model per λ on an independent seed stream derived from
// (base.seed, λ), scores the validation set and selects the λ with the
// largest validation AUC, ties going to the smaller λ. `threads` > 1 trains
// several λ at once; results do not depend on it.
SweepResult sweep_lambda(std::span<const double> grid, const network::NetworkConfig& net_config,
                         const TrainConfig& base, const dataio::ImageSet& train_set, const dataio::ImageSet& val_set,
                         int threads = 1);

std::uint64_t lambda_seed(std::uint64_t seed, double lambda);

// Index of the largest AUC; equal AUCs go to the smaller λ.
std::size_t select_lambda(std::span<const double> lambdas, std::span<const double> aucs);

}  // namespace fpad::training
