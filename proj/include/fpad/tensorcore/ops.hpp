#pragma once

#include <span>
#include <string_view>

#include "fpad/tensorcore/graph.hpp"
#include "fpad/tensorcore/tensor.hpp"

// Differentiable operations. Every op records its output on the graph that
// owns its inputs; inputs from different graphs are a usage error.
namespace fpad::ops {

enum class Mode { train, eval };

enum class ActivationKind { relu, leaky_relu };

const char* to_string(ActivationKind kind);
ActivationKind parse_activation(std::string_view text);

// [M×K]·[K×N] -> [M×N]
Var matmul(Var a, Var b);
// Elementwise sum of equally shaped tensors.
Var add(Var a, Var b);
// [B×N] + [N], broadcast over rows.
Var add_bias(Var x, Var bias);
Var scale(Var x, double factor);
// Elementwise product of equally shaped tensors.
Var mul(Var a, Var b);
// Sum of all elements -> shape [1].
Var sum(Var x);
Var reshape(Var x, Shape shape);

// Cross-correlation (the kernel is not flipped).
// x: [B×C×H×W], w: [F×C×k×k] -> [B×F×H'×W'] with H' = (H + 2·pad − k)/stride + 1.
Var conv2d(Var x, Var w, int stride, int pad);

struct BatchNormState {
  Tensor running_mean;  // [C], starts at 0
  Tensor running_var;   // [C], starts at 1

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

// Per-channel normalization over every axis except 1. Train mode uses batch
// statistics and updates `state` (running variance takes the unbiased
// estimate); eval mode uses the running statistics.
Var batchnorm2d(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode, BatchNormOptions options = {});

// relu: x < 0 -> 0. leaky_relu: x < 0 -> slope·x. The subgradient at exactly
// 0 is taken from the positive side; slope 0 reproduces relu bit for bit.
Var activation(Var x, ActivationKind kind, double negative_slope = 0.0);

// Padding positions never win the max.
Var max_pool2d(Var x, int kernel, int stride, int pad);
// [B×C×H×W] -> [B×C]
Var global_avg_pool(Var x);

// Unit L2 norm per row / per column. A zero row or column throws
// DegenerateInputError.
Var normalize_rows(Var x);
Var normalize_cols(Var x);

Var softmax_rows(Var x);
// Mean over rows of −log softmax(logits)[label]. Labels must be in [0, N).
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

}  // namespace fpad::ops
