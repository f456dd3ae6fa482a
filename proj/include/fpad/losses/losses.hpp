#pragma once

#include <cstdint>
#include <span>

#include "fpad/tensorcore/graph.hpp"
#include "fpad/tensorcore/tensor.hpp"

// Joint angular-margin + center loss:
//
//   L = L_arc + lambda · L_center
//   L_arc    = mean_i −log( e^{s·cos(θ_{y_i} + m)} / (e^{s·cos(θ_{y_i} + m)} + Σ_{j≠y_i} e^{s·cos θ_j}) )
//   L_center = ½ Σ_i ‖x̂_i − c_{y_i}‖²
//
// where θ_j is the angle between the row-normalized embedding x̂_i and the
// column-normalized class weight w_j. Both terms see the same x̂.
namespace fpad::losses {

// Class weight matrix of the angular-margin classifier. Columns have unit norm.
struct ArcFaceHead {
  Tensor weights;  // [D×N]
  double s = 30.0;
  double m = 0.3;  // radians

  static ArcFaceHead create(std::size_t embedding_dim, std::size_t classes, std::uint64_t seed, double s = 30.0,
                            double m = 0.3);

  std::size_t dim() const { return weights.dim(0); }
  std::size_t classes() const { return weights.dim(1); }
  // Rescales every column to unit L2 norm.
  void renormalize();
  // Throws ConfigError unless s > 0 and 0 <= m < π/2.
  void validate() const { check_params(s, m); }
  static void check_params(double s, double m);
};

// One center per class. Centers are not trained by backprop; only
// center_update moves them.
struct CenterBank {
  Tensor centers;  // [N×D]
  double alpha = 0.5;

  static CenterBank zeros(std::size_t classes, std::size_t embedding_dim, double alpha = 0.5);
};

struct JointLossConfig {
  double lambda = 0.0411;
  double s = 30.0;
  double m = 0.3;
  double alpha = 0.5;

  void validate() const;
};

// Cosines outside [−1+1e-7, 1−1e-7] are clamped and θ+m is clamped to [0, π];
// gradients are zero wherever a clamp is active.
inline constexpr double kCosineClamp = 1e-7;

// [B×N] cosines -> [B×N] logits: s·cos θ_j off-target, s·cos(θ_y + m) on target.
Var angular_margin_logits(Var cosines, std::span<const int> labels, double s, double m);

struct ArcFaceOutput {
  Var loss;
  Var logits;
};

// Normalizes embeddings by row and weights by column before the angular
// computation. A zero embedding row raises DegenerateInputError.
ArcFaceOutput arcface_loss(Var embeddings, Var weights, std::span<const int> labels, double s, double m);
ArcFaceOutput arcface_loss(Var embeddings, ArcFaceHead& head, std::span<const int> labels);

// ½ Σ_i ‖x_i − c_{y_i}‖² on the embeddings as given; differentiable in x only.
Var center_loss(Var embeddings, std::span<const int> labels, const CenterBank& bank);

// For every class j present in the batch:
//   Δc_j = Σ_{i: y_i = j} (c_j − x_i) / (1 + count_j),  c_j ← c_j − alpha·Δc_j
CenterBank center_update(CenterBank bank, const Tensor& embeddings, std::span<const int> labels);

struct JointLossOutput {
  Var joint;
  Var arcface;
  Var center;
  Var logits;
  Var normalized;  // x̂, the rows both terms consume
};

JointLossOutput joint_loss(Var embeddings, Var weights, std::span<const int> labels, const CenterBank& bank,
                           const JointLossConfig& config);
JointLossOutput joint_loss(Var embeddings, ArcFaceHead& head, std::span<const int> labels, const CenterBank& bank,
                           double lambda);

// Margin-free class probabilities softmax(s · x̂ · Ŵ), one row per embedding.
Tensor inference_probabilities(const Tensor& embeddings, const ArcFaceHead& head);

}  // namespace fpad::losses
