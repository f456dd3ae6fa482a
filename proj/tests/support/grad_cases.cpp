#include "grad_cases.hpp"

#include <array>
#include <numeric>

#include "fpad/common/rng.hpp"
#include "fpad/losses/losses.hpp"
#include "fpad/network/network.hpp"
#include "fpad/tensorcore/ops.hpp"
#include "random_tensors.hpp"

namespace fpad::testing {

namespace {

// Reduces a tensor-valued op to a scalar with fixed random weights so every
// output coordinate contributes a distinct direction.
Var project(Graph& g, Var y, const Tensor& r) { return ops::sum(ops::mul(y, g.constant(r))); }

GradCheckResult check(const LossFn& f, std::vector<Tensor*> wrt) { return grad_check(f, wrt); }

// Values spaced 0.05 apart in random order: no ties within a pooling window.
Tensor distinct_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::vector<double> v(t.size());
  std::iota(v.begin(), v.end(), 0.0);
  rng.shuffle(v.begin(), v.end());
  const double offset = static_cast<double>(v.size()) / 2.0;
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = 0.05 * (v[i] - offset) + 0.01 * rng.uniform();
  return t;
}

std::vector<int> random_labels(std::size_t n, int classes, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return y;
}

GradCheckResult unary_case(std::uint64_t seed, Shape shape, const std::function<Var(Var)>& op, bool nudge) {
  Rng rng(seed);
  Tensor x = random_tensor(shape, rng);
  if (nudge) nudge_off_zero(x, 0.05);
  Graph probe;
  const Tensor r = random_tensor(op(probe.constant(x)).shape(), rng);
  return check([&](Graph& g) { return project(g, op(g.parameter(x)), r); }, {&x});
}

}  // namespace

std::vector<GradCase> op_grad_cases() {
  std::vector<GradCase> cases;

  cases.push_back({"matmul", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor a = random_tensor(Shape{3, 4}, rng), b = random_tensor(Shape{4, 2}, rng);
                     const Tensor r = random_tensor(Shape{3, 2}, rng);
                     return check([&](Graph& g) { return project(g, ops::matmul(g.parameter(a), g.parameter(b)), r); },
                                  {&a, &b});
                   }});
  cases.push_back({"add", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor a = random_tensor(Shape{2, 3, 2}, rng), b = random_tensor(Shape{2, 3, 2}, rng);
                     const Tensor r = random_tensor(Shape{2, 3, 2}, rng);
                     return check([&](Graph& g) { return project(g, ops::add(g.parameter(a), g.parameter(b)), r); },
                                  {&a, &b});
                   }});
  cases.push_back({"add_bias", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_tensor(Shape{4, 3}, rng), b = random_tensor(Shape{3}, rng);
                     const Tensor r = random_tensor(Shape{4, 3}, rng);
                     return check(
                         [&](Graph& g) { return project(g, ops::add_bias(g.parameter(x), g.parameter(b)), r); },
                         {&x, &b});
                   }});
  cases.push_back({"scale", [](std::uint64_t seed) {
                     const double k = 0.5 + static_cast<double>(seed % 7);
                     return unary_case(seed, Shape{3, 3}, [k](Var x) { return ops::scale(x, -k); }, false);
                   }});
  cases.push_back({"mul", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor a = random_tensor(Shape{5, 2}, rng), b = random_tensor(Shape{5, 2}, rng);
                     const Tensor r = random_tensor(Shape{5, 2}, rng);
                     return check([&](Graph& g) { return project(g, ops::mul(g.parameter(a), g.parameter(b)), r); },
                                  {&a, &b});
                   }});
  cases.push_back({"sum", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_tensor(Shape{2, 2, 3}, rng);
                     return check([&](Graph& g) { return ops::sum(ops::mul(g.parameter(x), g.parameter(x))); }, {&x});
                   }});
  cases.push_back({"reshape", [](std::uint64_t seed) {
                     return unary_case(seed, Shape{2, 6}, [](Var x) { return ops::reshape(x, Shape{3, 2, 2}); },
                                       false);
                   }});
  cases.push_back({"conv2d", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const int stride = 1 + static_cast<int>(seed % 2);
                     const int pad = static_cast<int>((seed / 2) % 2);
                     Tensor x = random_tensor(Shape{2, 2, 5, 5}, rng), w = random_tensor(Shape{3, 2, 3, 3}, rng);
                     Graph probe;
                     const Tensor r =
                         random_tensor(ops::conv2d(probe.constant(x), probe.constant(w), stride, pad).shape(), rng);
                     return check(
                         [&](Graph& g) { return project(g, ops::conv2d(g.parameter(x), g.parameter(w), stride, pad), r); },
                         {&x, &w});
                   }});
  cases.push_back({"conv2d_pointwise", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_tensor(Shape{2, 3, 3, 3}, rng), w = random_tensor(Shape{2, 3, 1, 1}, rng);
                     const Tensor r = random_tensor(Shape{2, 2, 3, 3}, rng);
                     return check(
                         [&](Graph& g) { return project(g, ops::conv2d(g.parameter(x), g.parameter(w), 1, 0), r); },
                         {&x, &w});
                   }});
  for (ops::Mode mode : {ops::Mode::train, ops::Mode::eval}) {
    cases.push_back({mode == ops::Mode::train ? "batchnorm2d_train" : "batchnorm2d_eval", [mode](std::uint64_t seed) {
                       Rng rng(seed);
                       Tensor x = random_tensor(Shape{3, 2, 2, 2}, rng);
                       Tensor gamma = random_tensor(Shape{2}, rng), beta = random_tensor(Shape{2}, rng);
                       const Tensor r = random_tensor(Shape{3, 2, 2, 2}, rng);
                       ops::BatchNormState init(2);
                       init.running_mean = random_tensor(Shape{2}, rng, 0.3);
                       for (std::size_t c = 0; c < 2; ++c) init.running_var[c] = 0.5 + rng.uniform();
                       return check(
                           [&](Graph& g) {
                             ops::BatchNormState state = init;
                             return project(g,
                                            ops::batchnorm2d(g.parameter(x), g.parameter(gamma), g.parameter(beta),
                                                             state, mode),
                                            r);
                           },
                           {&x, &gamma, &beta});
                     }});
  }
  cases.push_back({"relu", [](std::uint64_t seed) {
                     return unary_case(
                         seed, Shape{4, 4}, [](Var x) { return ops::activation(x, ops::ActivationKind::relu); }, true);
                   }});
  cases.push_back({"leaky_relu", [](std::uint64_t seed) {
                     return unary_case(
                         seed, Shape{4, 4},
                         [](Var x) { return ops::activation(x, ops::ActivationKind::leaky_relu, 0.01); }, true);
                   }});
  cases.push_back({"max_pool2d", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = distinct_tensor(Shape{2, 2, 5, 5}, rng);
                     const Tensor r = random_tensor(Shape{2, 2, 3, 3}, rng);
                     return check([&](Graph& g) { return project(g, ops::max_pool2d(g.parameter(x), 3, 2, 1), r); },
                                  {&x});
                   }});
  cases.push_back({"global_avg_pool", [](std::uint64_t seed) {
                     return unary_case(seed, Shape{2, 3, 3, 2}, [](Var x) { return ops::global_avg_pool(x); }, false);
                   }});
  cases.push_back({"normalize_rows", [](std::uint64_t seed) {
                     return unary_case(seed, Shape{3, 4}, [](Var x) { return ops::normalize_rows(x); }, false);
                   }});
  cases.push_back({"normalize_cols", [](std::uint64_t seed) {
                     return unary_case(seed, Shape{4, 3}, [](Var x) { return ops::normalize_cols(x); }, false);
                   }});
  cases.push_back({"softmax_rows", [](std::uint64_t seed) {
                     return unary_case(seed, Shape{3, 4}, [](Var x) { return ops::softmax_rows(ops::scale(x, 2.0)); },
                                       false);
                   }});
  cases.push_back({"softmax_cross_entropy", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_tensor(Shape{5, 3}, rng, 2.0);
                     const auto y = random_labels(5, 3, rng);
                     return check([&](Graph& g) { return ops::softmax_cross_entropy(g.parameter(x), y); }, {&x});
                   }});
  cases.push_back({"angular_margin_logits", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor c(Shape{4, 3});
                     for (auto& v : c.data()) v = rng.uniform(-0.9, 0.9);
                     const auto y = random_labels(4, 3, rng);
                     const Tensor r = random_tensor(Shape{4, 3}, rng);
                     return check(
                         [&](Graph& g) { return project(g, losses::angular_margin_logits(g.parameter(c), y, 4.0, 0.3), r); },
                         {&c});
                   }});
  cases.push_back({"arcface_loss", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_tensor(Shape{4, 5}, rng), w = random_tensor(Shape{5, 3}, rng);
                     const auto y = random_labels(4, 3, rng);
                     return check(
                         [&](Graph& g) { return losses::arcface_loss(g.parameter(x), g.parameter(w), y, 30.0, 0.3).loss; },
                         {&x, &w});
                   }});
  cases.push_back({"center_loss", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_tensor(Shape{5, 4}, rng);
                     auto bank = losses::CenterBank::zeros(2, 4);
                     bank.centers = random_tensor(Shape{2, 4}, rng, 0.5);
                     const auto y = random_labels(5, 2, rng);
                     return check([&](Graph& g) { return losses::center_loss(g.parameter(x), y, bank); }, {&x});
                   }});
  cases.push_back({"joint_loss", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_tensor(Shape{4, 5}, rng), w = random_tensor(Shape{5, 2}, rng);
                     auto bank = losses::CenterBank::zeros(2, 5);
                     bank.centers = random_tensor(Shape{2, 5}, rng, 0.4);
                     const auto y = random_labels(4, 2, rng);
                     losses::JointLossConfig cfg;
                     cfg.lambda = 0.0411 * static_cast<double>(1 + seed % 25);
                     return check(
                         [&](Graph& g) { return losses::joint_loss(g.parameter(x), g.parameter(w), y, bank, cfg).joint; },
                         {&x, &w});
                   }});
  return cases;
}

GradCheckResult desk_network_grad_check(std::uint64_t seed, std::size_t max_coords) {
  Rng rng(seed);
  network::Network net = network::build(network::NetworkConfig::desk(), derive_seed(seed, 1));
  Tensor batch = random_tensor(Shape{4, 1, 32, 32}, rng);
  batch.requires_grad = false;
  const std::vector<int> labels = {0, 1, 0, 1};
  auto bank = losses::CenterBank::zeros(2, 16);
  bank.centers = random_tensor(Shape{2, 16}, rng, 0.25);
  losses::JointLossConfig cfg;

  // Batch-norm running statistics are side effects only; each evaluation
  // starts from the same state so every call computes the same function.
  const auto bn_init = net.bn;
  std::vector<Tensor*> wrt;
  for (auto& [name, t] : net.trainable()) wrt.push_back(t);
  wrt.push_back(&batch);
  auto f = [&](Graph& g) {
    net.bn = bn_init;
    auto out = network::forward(net, g, g.parameter(batch), ops::Mode::train);
    return losses::joint_loss(out.embedding, g.parameter(net.head.weights), labels, bank, cfg).joint;
  };
  GradCheckOptions options;
  options.max_coords = max_coords;
  options.seed = derive_seed(seed, 2);
  options.skip_branch_changes = true;
  return grad_check(f, wrt, options);
}

}  // namespace fpad::testing
