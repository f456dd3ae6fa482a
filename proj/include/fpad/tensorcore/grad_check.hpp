#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "fpad/tensorcore/graph.hpp"

namespace fpad {

struct GradCheckOptions {
  double eps = 1e-4;
  // 0 checks every coordinate; otherwise this many coordinates drawn with `seed`.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Skip coordinates whose ±eps evaluations leave the smooth piece of the
  // unperturbed point (a different Graph::branch_signature), where a central
  // difference straddles a kink. Skips are counted in the result.
  bool skip_branch_changes = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Scalar function of the tensors it binds with Graph::parameter.
using LossFn = std::function<Var(Graph&)>;

// Compares autodiff against central differences (f(x+eps·e) − f(x−eps·e))/(2·eps)
// for coordinates of every tensor in `wrt`. Error per coordinate is
// |a − n| / max(1, |a|, |n|). Tensors are perturbed in place and restored.
// A non-scalar f is a UsageError.
GradCheckResult grad_check(const LossFn& f, std::span<Tensor* const> wrt, const GradCheckOptions& options = {});

// Single-input form: f receives x bound as a leaf.
GradCheckResult grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x,
                           const GradCheckOptions& options = {});

}  // namespace fpad
