#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fpad/common/kv_text.hpp"
#include "fpad/losses/losses.hpp"
#include "fpad/tensorcore/graph.hpp"
#include "fpad/tensorcore/ops.hpp"

namespace fpad::network {

using ops::ActivationKind;
using ops::Mode;

struct StageConfig {
  int blocks = 1;
  int channels = 8;
  int stride = 1;

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

// Residual CNN description. The stem is conv(k, stride, pad k/2) → bn → act,
// optionally followed by a 3×3/2 max pool; each stage is a run of two-conv
// residual blocks whose first block applies the stage stride.
struct NetworkConfig {
  int in_channels = 1;
  int in_height = 32;
  int in_width = 32;
  int stem_channels = 8;
  int stem_kernel = 3;
  int stem_stride = 1;
  bool stem_pool = false;
  std::vector<StageConfig> stages;
  ActivationKind activation = ActivationKind::leaky_relu;
  double negative_slope = 0.01;
  int embedding_dim = 16;
  int classes = 2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  // 1×32×32 input, stem 8, stages [1,1] with channels [8,16].
  static NetworkConfig desk();
  // 3×1024×1024 input, 7×7/2 stem with 64 channels and max pool, four
  // stages of two blocks with 64/128/256/512 channels (ResNet-18 layout).
  static NetworkConfig paper();

  // Throws ConfigError for invalid fields or, naming the stage, when the
  // spatial extent would fall below the stride or below 1.
  void validate() const;
  // Spatial extent (height, width) after the stem and after each stage.
  std::vector<std::pair<int, int>> spatial_extents() const;

  KeyValues to_kv() const;
  static NetworkConfig from_kv(const KeyValues& kv);

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Parameters are named `<layer>.<kind>`, e.g. `stage1.block0.conv1.weight`.
struct Network {
  NetworkConfig config;
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, ops::BatchNormState>> bn;
  losses::ArcFaceHead head;

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  ops::BatchNormState& bn_state(const std::string& name);
  const ops::BatchNormState& bn_state(const std::string& name) const;

  // Every trainable tensor, head weights last.
  std::vector<std::pair<std::string, Tensor*>> trainable();
  std::size_t parameter_count() const;
};

// Deterministic in `seed`: He-normal conv/dense weights (std √(2/fan_in)),
// zero biases, gamma 1, beta 0, random unit-norm head columns.
Network build(const NetworkConfig& config, std::uint64_t seed);

struct ForwardOutput {
  Var features;   // [B×C×h×w], last stage output before pooling
  Var embedding;  // [B×D]
  Var probs;      // [B×classes], margin-free softmax over the head
};

// Train mode updates batch-norm running statistics.
ForwardOutput forward(Network& net, Graph& g, Var batch, Mode mode);

struct Inference {
  Shape feature_shape;
  Tensor embedding;
  Tensor probs;
};

// Eval-mode forward that leaves `net` untouched.
Inference infer(const Network& net, const Tensor& batch);

inline constexpr int kLiveClass = 0;
inline constexpr int kSpoofClass = 1;

// Live-class probability per sample, in [0,1].
std::vector<double> score(const Network& net, const Tensor& batch);

}  // namespace fpad::network
