#include "fpad/tensorcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fpad/common/rng.hpp"
#include "fpad/errors.hpp"

namespace fpad {

namespace {

struct Evaluation {
  double value;
  std::uint64_t branches;
};

Evaluation evaluate(const LossFn& f) {
  Graph g;
  Var y = f(g);
  if (y.value().size() != 1) {
    throw UsageError("grad_check: function output has shape " + shape_str(y.shape()) + ", expected a scalar");
  }
  return {y.value()[0], g.branch_signature()};
}

}  // namespace

GradCheckResult grad_check(const LossFn& f, std::span<Tensor* const> wrt, const GradCheckOptions& options) {
  std::vector<bool> saved_flags;
  for (Tensor* t : wrt) {
    saved_flags.push_back(t->requires_grad);
    t->requires_grad = true;
    t->zero_grad();
  }
  std::uint64_t base_branches = 0;
  {
    Graph g;
    Var y = f(g);
    if (y.value().size() != 1) {
      throw UsageError("grad_check: function output has shape " + shape_str(y.shape()) + ", expected a scalar");
    }
    g.backward(y);
    base_branches = g.branch_signature();
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor* t : wrt) analytic.emplace_back(t->grad().begin(), t->grad().end());

  // (tensor, coordinate) pairs to check.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    for (std::size_t i = 0; i < wrt[ti]->size(); ++i) coords.emplace_back(ti, i);
  }
  if (options.max_coords > 0 && options.max_coords < coords.size()) {
    Rng rng(options.seed);
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  for (auto [ti, i] : coords) {
    double& v = (*wrt[ti])[i];
    const double orig = v;
    v = orig + options.eps;
    const Evaluation fp = evaluate(f);
    v = orig - options.eps;
    const Evaluation fm = evaluate(f);
    v = orig;
    if (options.skip_branch_changes && (fp.branches != base_branches || fm.branches != base_branches)) {
      ++result.coords_skipped;
      continue;
    }
    const double numeric = (fp.value - fm.value) / (2.0 * options.eps);
    const double a = analytic[ti][i];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (err > result.max_rel_error || result.coords_checked == 0) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      result.analytic_at_worst = a;
      result.numeric_at_worst = numeric;
    }
    ++result.coords_checked;
  }
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    wrt[ti]->requires_grad = saved_flags[ti];
    wrt[ti]->clear_grad();
  }
  return result;
}

GradCheckResult grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x,
                           const GradCheckOptions& options) {
  Tensor xp = x;
  Tensor* wrt[] = {&xp};
  return grad_check([&](Graph& g) { return f(g, g.parameter(xp)); }, wrt, options);
}

}  // namespace fpad
