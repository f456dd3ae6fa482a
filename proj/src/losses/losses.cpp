#include "fpad/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <vector>

#include "fpad/common/rng.hpp"
#include "fpad/errors.hpp"
#include "fpad/tensorcore/ops.hpp"

namespace fpad::losses {

namespace {

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes, const char* op) {
  if (labels.empty()) throw UsageError(std::string(op) + ": empty batch");
  if (labels.size() != rows) {
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " embeddings");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw UsageError(std::string(op) + ": label " + std::to_string(y) + " out of range [0," +
                       std::to_string(classes) + ")");
    }
  }
}

}  // namespace

ArcFaceHead ArcFaceHead::create(std::size_t embedding_dim, std::size_t classes, std::uint64_t seed, double s,
                                double m) {
  ArcFaceHead head;
  head.s = s;
  head.m = m;
  head.validate();
  head.weights = Tensor(Shape{embedding_dim, classes});
  Rng rng(seed);
  for (auto& v : head.weights.data()) v = rng.normal();
  head.weights.requires_grad = true;
  head.renormalize();
  return head;
}

void ArcFaceHead::renormalize() {
  const std::size_t d = dim(), n = classes();
  for (std::size_t j = 0; j < n; ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) ss += weights[i * n + j] * weights[i * n + j];
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0)) throw DegenerateInputError("class weight column " + std::to_string(j) + " has zero norm");
    for (std::size_t i = 0; i < d; ++i) weights[i * n + j] /= norm;
  }
}

void ArcFaceHead::check_params(double s, double m) {
  if (!(s > 0.0)) throw ConfigError("arcface scale s must be positive");
  if (!(m >= 0.0 && m < std::numbers::pi / 2)) throw ConfigError("arcface margin m must be in [0, pi/2)");
}

CenterBank CenterBank::zeros(std::size_t classes, std::size_t embedding_dim, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("center learning rate alpha must be in (0,1]");
  return CenterBank{Tensor(Shape{classes, embedding_dim}, 0.0), alpha};
}

void JointLossConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
  ArcFaceHead::check_params(s, m);
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("center learning rate alpha must be in (0,1]");
}

Var angular_margin_logits(Var cosines, std::span<const int> labels, double s, double m) {
  Graph& g = *cosines.graph;
  const Tensor& c = cosines.value();
  if (c.rank() != 2) throw DimensionError("angular_margin_logits: expected [B×N], got " + shape_str(c.shape()));
  const std::size_t rows = c.dim(0), n = c.dim(1);
  check_labels(labels, rows, n, "angular_margin_logits");

  // Per-element derivative d logit / d cosine.
  auto slope = std::make_shared<std::vector<double>>(c.size());
  Tensor out(c.shape());
  const double lo = -1.0 + kCosineClamp, hi = 1.0 - kCosineClamp;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = i * n + j;
      const double raw = c[k];
      const double cc = std::clamp(raw, lo, hi);
      const bool clamped = raw != cc;
      if (clamped) g.note_branch(k);
      if (static_cast<int>(j) != labels[i] || m == 0.0) {
        out[k] = s * cc;
        (*slope)[k] = clamped ? 0.0 : s;
        continue;
      }
      const double theta = std::acos(cc);
      const double shifted = theta + m;
      const double t = std::clamp(shifted, 0.0, std::numbers::pi);
      out[k] = s * std::cos(t);
      // d cos(θ+m)/dc = sin(θ+m) / sin θ
      if (t != shifted) g.note_branch(~k);
      (*slope)[k] = (clamped || t != shifted) ? 0.0 : s * std::sin(t) / std::sin(theta);
    }
  }
  return g.record("angular_margin_logits", std::move(out), {cosines}, [cosines, slope](Graph& g, std::span<const double> d) {
    auto dc = g.grad_buffer(cosines.id);
    for (std::size_t k = 0; k < dc.size(); ++k) dc[k] += (*slope)[k] * d[k];
  });
}

namespace {

ArcFaceOutput arcface_from_normalized(Var x_hat, Var weights, std::span<const int> labels, double s, double m) {
  ArcFaceHead::check_params(s, m);
  const Tensor& w = weights.value();
  if (w.rank() != 2 || w.dim(0) != x_hat.value().dim(1)) {
    throw DimensionError("arcface: weights " + shape_str(w.shape()) + " do not match embeddings " +
                         shape_str(x_hat.shape()));
  }
  check_labels(labels, x_hat.value().dim(0), w.dim(1), "arcface_loss");
  Var cosines = ops::matmul(x_hat, ops::normalize_cols(weights));
  Var logits = angular_margin_logits(cosines, labels, s, m);
  return {ops::softmax_cross_entropy(logits, labels), logits};
}

}  // namespace

ArcFaceOutput arcface_loss(Var embeddings, Var weights, std::span<const int> labels, double s, double m) {
  if (embeddings.value().rank() != 2) {
    throw DimensionError("arcface_loss: embeddings must be [B×D], got " + shape_str(embeddings.shape()));
  }
  return arcface_from_normalized(ops::normalize_rows(embeddings), weights, labels, s, m);
}

ArcFaceOutput arcface_loss(Var embeddings, ArcFaceHead& head, std::span<const int> labels) {
  return arcface_loss(embeddings, embeddings.graph->parameter(head.weights), labels, head.s, head.m);
}

Var center_loss(Var embeddings, std::span<const int> labels, const CenterBank& bank) {
  Graph& g = *embeddings.graph;
  const Tensor& x = embeddings.value();
  if (x.rank() != 2 || x.dim(1) != bank.centers.dim(1)) {
    throw DimensionError("center_loss: embeddings " + shape_str(x.shape()) + " do not match centers " +
                         shape_str(bank.centers.shape()));
  }
  const std::size_t rows = x.dim(0), d = x.dim(1);
  check_labels(labels, rows, bank.centers.dim(0), "center_loss");
  auto diff = std::make_shared<std::vector<double>>(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* c = bank.centers.data().data() + static_cast<std::size_t>(labels[i]) * d;
    for (std::size_t k = 0; k < d; ++k) {
      const double v = x[i * d + k] - c[k];
      (*diff)[i * d + k] = v;
      total += v * v;
    }
  }
  return g.record("center_loss", Tensor::scalar(0.5 * total), {embeddings},
                  [embeddings, diff](Graph& g, std::span<const double> d) {
                    auto dx = g.grad_buffer(embeddings.id);
                    for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += d[0] * (*diff)[k];
                  });
}

CenterBank center_update(CenterBank bank, const Tensor& embeddings, std::span<const int> labels) {
  const std::size_t n = bank.centers.dim(0), d = bank.centers.dim(1);
  if (embeddings.rank() != 2 || embeddings.dim(1) != d) {
    throw DimensionError("center_update: embeddings " + shape_str(embeddings.shape()) + " do not match centers " +
                         shape_str(bank.centers.shape()));
  }
  check_labels(labels, embeddings.dim(0), n, "center_update");
  std::vector<double> delta(n * d, 0.0);
  std::vector<std::size_t> count(n, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto j = static_cast<std::size_t>(labels[i]);
    ++count[j];
    for (std::size_t k = 0; k < d; ++k) delta[j * d + k] += bank.centers[j * d + k] - embeddings[i * d + k];
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (count[j] == 0) continue;
    const double denom = 1.0 + static_cast<double>(count[j]);
    for (std::size_t k = 0; k < d; ++k) bank.centers[j * d + k] -= bank.alpha * (delta[j * d + k] / denom);
  }
  return bank;
}

JointLossOutput joint_loss(Var embeddings, Var weights, std::span<const int> labels, const CenterBank& bank,
                           const JointLossConfig& config) {
  if (!(config.lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (embeddings.value().rank() != 2) {
    throw DimensionError("joint_loss: embeddings must be [B×D], got " + shape_str(embeddings.shape()));
  }
  Var x_hat = ops::normalize_rows(embeddings);
  auto arc = arcface_from_normalized(x_hat, weights, labels, config.s, config.m);
  Var center = center_loss(x_hat, labels, bank);
  Var joint = ops::add(arc.loss, ops::scale(center, config.lambda));
  return {joint, arc.loss, center, arc.logits, x_hat};
}

JointLossOutput joint_loss(Var embeddings, ArcFaceHead& head, std::span<const int> labels, const CenterBank& bank,
                           double lambda) {
  JointLossConfig cfg{lambda, head.s, head.m, bank.alpha};
  return joint_loss(embeddings, embeddings.graph->parameter(head.weights), labels, bank, cfg);
}

Tensor inference_probabilities(const Tensor& embeddings, const ArcFaceHead& head) {
  Graph g;
  Var x_hat = ops::normalize_rows(g.constant(embeddings));
  Var cosines = ops::matmul(x_hat, ops::normalize_cols(g.constant(head.weights)));
  return ops::softmax_rows(ops::scale(cosines, head.s)).value();
}

}  // namespace fpad::losses
