#include "fpad/network/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "fpad/common/rng.hpp"
#include "fpad/errors.hpp"

namespace fpad::network {

NetworkConfig NetworkConfig::desk() {
  NetworkConfig c;
  c.in_channels = 1;
  c.in_height = 32;
  c.in_width = 32;
  c.stem_channels = 8;
  c.stem_kernel = 3;
  c.stem_stride = 2;
  c.stem_pool = false;
  c.stages = {{1, 8, 2}, {1, 16, 2}};
  c.embedding_dim = 16;
  c.classes = 2;
  return c;
}

NetworkConfig NetworkConfig::paper() {
  NetworkConfig c;
  c.in_channels = 3;
  c.in_height = 1024;
  c.in_width = 1024;
  c.stem_channels = 64;
  c.stem_kernel = 7;
  c.stem_stride = 2;
  c.stem_pool = true;
  c.stages = {{2, 64, 1}, {2, 128, 2}, {2, 256, 2}, {2, 512, 2}};
  c.embedding_dim = 512;
  c.classes = 2;
  return c;
}

namespace {

int conv_extent(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

std::string stages_to_text(const std::vector<StageConfig>& stages) {
  std::ostringstream out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) out << ',';
    out << stages[i].blocks << ':' << stages[i].channels << ':' << stages[i].stride;
  }
  return out.str();
}

std::vector<StageConfig> stages_from_text(const std::string& text) {
  std::vector<StageConfig> stages;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    StageConfig s;
    char c1 = 0, c2 = 0;
    std::istringstream fields(item);
    if (!(fields >> s.blocks >> c1 >> s.channels >> c2 >> s.stride) || c1 != ':' || c2 != ':' || !fields.eof()) {
      throw ConfigError("bad stage spec '" + item + "' (expected blocks:channels:stride)");
    }
    stages.push_back(s);
  }
  return stages;
}

}  // namespace

std::vector<std::pair<int, int>> NetworkConfig::spatial_extents() const {
  std::vector<std::pair<int, int>> out;
  int h = conv_extent(in_height, stem_kernel, stem_stride, stem_kernel / 2);
  int w = conv_extent(in_width, stem_kernel, stem_stride, stem_kernel / 2);
  if (stem_pool) {
    h = conv_extent(h, 3, 2, 1);
    w = conv_extent(w, 3, 2, 1);
  }
  out.emplace_back(h, w);
  for (const auto& st : stages) {
    h = conv_extent(h, 3, st.stride, 1);
    w = conv_extent(w, 3, st.stride, 1);
    out.emplace_back(h, w);
  }
  return out;
}

void NetworkConfig::validate() const {
  if (in_channels < 1 || in_height < 1 || in_width < 1) throw ConfigError("input extents must be positive");
  if (stem_channels < 1) throw ConfigError("stem channels must be positive");
  if (stem_kernel < 1 || stem_stride < 1) throw ConfigError("stem kernel and stride must be positive");
  if (stages.empty()) throw ConfigError("at least one stage is required");
  if (embedding_dim < 1) throw ConfigError("embedding dimension must be positive");
  if (classes < 2) throw ConfigError("at least two classes are required");
  if (!(negative_slope >= 0.0 && negative_slope < 1.0)) throw ConfigError("negative slope must be in [0,1)");
  if (!(bn_eps > 0.0) || !(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("invalid batch-norm settings");

  int h = in_height, w = in_width;
  if (h + 2 * (stem_kernel / 2) < stem_kernel || w + 2 * (stem_kernel / 2) < stem_kernel) {
    throw ConfigError("stem: kernel " + std::to_string(stem_kernel) + " does not fit the input");
  }
  h = conv_extent(h, stem_kernel, stem_stride, stem_kernel / 2);
  w = conv_extent(w, stem_kernel, stem_stride, stem_kernel / 2);
  if (stem_pool) {
    if (h < 2 || w < 2) throw ConfigError("stem: max pool on a " + std::to_string(h) + "x" + std::to_string(w) + " map");
    h = conv_extent(h, 3, 2, 1);
    w = conv_extent(w, 3, 2, 1);
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    const std::string name = "stage " + std::to_string(i + 1);
    if (st.blocks < 1) throw ConfigError(name + ": needs at least one block");
    if (st.channels < 1) throw ConfigError(name + ": channel count must be positive");
    if (st.stride != 1 && st.stride != 2) throw ConfigError(name + ": stride must be 1 or 2");
    if (h < st.stride || w < st.stride) {
      throw ConfigError(name + ": stride " + std::to_string(st.stride) + " on a " + std::to_string(h) + "x" +
                        std::to_string(w) + " map collapses the spatial extent");
    }
    h = conv_extent(h, 3, st.stride, 1);
    w = conv_extent(w, 3, st.stride, 1);
    if (h < 1 || w < 1) throw ConfigError(name + ": spatial extent collapses below 1");
  }
}

KeyValues NetworkConfig::to_kv() const {
  KeyValues kv;
  kv.set("net.in_channels", in_channels);
  kv.set("net.in_height", in_height);
  kv.set("net.in_width", in_width);
  kv.set("net.stem_channels", stem_channels);
  kv.set("net.stem_kernel", stem_kernel);
  kv.set("net.stem_stride", stem_stride);
  kv.set("net.stem_pool", stem_pool);
  kv.set("net.stages", stages_to_text(stages));
  kv.set("net.activation", ops::to_string(activation));
  kv.set("net.negative_slope", negative_slope);
  kv.set("net.embedding_dim", embedding_dim);
  kv.set("net.classes", classes);
  kv.set("net.bn_eps", bn_eps);
  kv.set("net.bn_momentum", bn_momentum);
  return kv;
}

NetworkConfig NetworkConfig::from_kv(const KeyValues& kv) {
  NetworkConfig c;
  c.in_channels = static_cast<int>(kv.get_int("net.in_channels"));
  c.in_height = static_cast<int>(kv.get_int("net.in_height"));
  c.in_width = static_cast<int>(kv.get_int("net.in_width"));
  c.stem_channels = static_cast<int>(kv.get_int("net.stem_channels"));
  c.stem_kernel = static_cast<int>(kv.get_int("net.stem_kernel"));
  c.stem_stride = static_cast<int>(kv.get_int("net.stem_stride"));
  c.stem_pool = kv.get_bool("net.stem_pool");
  c.stages = stages_from_text(kv.get("net.stages"));
  c.activation = ops::parse_activation(kv.get("net.activation"));
  c.negative_slope = kv.get_double("net.negative_slope");
  c.embedding_dim = static_cast<int>(kv.get_int("net.embedding_dim"));
  c.classes = static_cast<int>(kv.get_int("net.classes"));
  c.bn_eps = kv.get_double("net.bn_eps");
  c.bn_momentum = kv.get_double("net.bn_momentum");
  c.validate();
  return c;
}

Tensor& Network::param(const std::string& name) {
  for (auto& [n, t] : params) {
    if (n == name) return t;
  }
  throw UsageError("no parameter named '" + name + "'");
}

const Tensor& Network::param(const std::string& name) const { return const_cast<Network*>(this)->param(name); }

ops::BatchNormState& Network::bn_state(const std::string& name) {
  for (auto& [n, s] : bn) {
    if (n == name) return s;
  }
  throw UsageError("no batch-norm layer named '" + name + "'");
}

const ops::BatchNormState& Network::bn_state(const std::string& name) const {
  return const_cast<Network*>(this)->bn_state(name);
}

std::vector<std::pair<std::string, Tensor*>> Network::trainable() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [n, t] : params) out.emplace_back(n, &t);
  out.emplace_back("head.weight", &head.weights);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = head.weights.size();
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

namespace {

// Visits the layer structure in a fixed order; shared by build and forward so
// both agree on names and shapes.
struct Layout {
  struct Block {
    std::string prefix;
    int in_channels, out_channels, stride;
    bool projection;
  };
  std::vector<Block> blocks;
  int last_channels = 0;
};

Layout layout_of(const NetworkConfig& c) {
  Layout l;
  int ch = c.stem_channels;
  for (std::size_t s = 0; s < c.stages.size(); ++s) {
    for (int b = 0; b < c.stages[s].blocks; ++b) {
      const int stride = b == 0 ? c.stages[s].stride : 1;
      const int out = c.stages[s].channels;
      l.blocks.push_back({"stage" + std::to_string(s + 1) + ".block" + std::to_string(b), ch, out, stride,
                          stride != 1 || ch != out});
      ch = out;
    }
  }
  l.last_channels = ch;
  return l;
}

}  // namespace

Network build(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Network net;
  net.config = config;
  Rng rng(seed);

  auto add_conv = [&](const std::string& name, int out, int in, int k) {
    Tensor w(Shape{static_cast<std::size_t>(out), static_cast<std::size_t>(in), static_cast<std::size_t>(k),
                   static_cast<std::size_t>(k)});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in * k * k));
    for (auto& v : w.data()) v = std_dev * rng.normal();
    w.requires_grad = true;
    net.params.emplace_back(name + ".weight", std::move(w));
  };
  auto add_bn = [&](const std::string& name, int channels) {
    const auto c = static_cast<std::size_t>(channels);
    Tensor gamma(Shape{c}, 1.0), beta(Shape{c}, 0.0);
    gamma.requires_grad = beta.requires_grad = true;
    net.params.emplace_back(name + ".gamma", std::move(gamma));
    net.params.emplace_back(name + ".beta", std::move(beta));
    net.bn.emplace_back(name, ops::BatchNormState(c));
  };

  add_conv("stem.conv", config.stem_channels, config.in_channels, config.stem_kernel);
  add_bn("stem.bn", config.stem_channels);
  const Layout layout = layout_of(config);
  for (const auto& b : layout.blocks) {
    add_conv(b.prefix + ".conv1", b.out_channels, b.in_channels, 3);
    add_bn(b.prefix + ".bn1", b.out_channels);
    add_conv(b.prefix + ".conv2", b.out_channels, b.out_channels, 3);
    add_bn(b.prefix + ".bn2", b.out_channels);
    if (b.projection) {
      add_conv(b.prefix + ".shortcut.conv", b.out_channels, b.in_channels, 1);
      add_bn(b.prefix + ".shortcut.bn", b.out_channels);
    }
  }
  const auto in = static_cast<std::size_t>(layout.last_channels);
  const auto d = static_cast<std::size_t>(config.embedding_dim);
  Tensor w(Shape{in, d});
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
  for (auto& v : w.data()) v = std_dev * rng.normal();
  w.requires_grad = true;
  Tensor bias(Shape{d}, 0.0);
  bias.requires_grad = true;
  net.params.emplace_back("embed.weight", std::move(w));
  net.params.emplace_back("embed.bias", std::move(bias));

  net.head = losses::ArcFaceHead::create(d, static_cast<std::size_t>(config.classes), rng.next_u64());
  return net;
}

namespace {

// Supplies parameters and batch-norm state to the forward pass.
class ParamSource {
 public:
  virtual ~ParamSource() = default;
  virtual Var get(Graph& g, const std::string& name) = 0;
  virtual Var head(Graph& g) = 0;
  virtual ops::BatchNormState& bn(const std::string& name) = 0;
};

class BoundSource final : public ParamSource {
 public:
  explicit BoundSource(Network& net) : net_(net) {}
  Var get(Graph& g, const std::string& name) override { return g.parameter(net_.param(name)); }
  Var head(Graph& g) override { return g.parameter(net_.head.weights); }
  ops::BatchNormState& bn(const std::string& name) override { return net_.bn_state(name); }

 private:
  Network& net_;
};

// Read-only view: values enter the graph as constants and batch-norm state
// is copied, so a shared Network is never written.
class ConstSource final : public ParamSource {
 public:
  explicit ConstSource(const Network& net) : net_(net) {}
  Var get(Graph& g, const std::string& name) override { return g.constant(net_.param(name)); }
  Var head(Graph& g) override { return g.constant(net_.head.weights); }
  ops::BatchNormState& bn(const std::string& name) override {
    auto it = copies_.find(name);
    if (it == copies_.end()) it = copies_.emplace(name, net_.bn_state(name)).first;
    return it->second;
  }

 private:
  const Network& net_;
  std::map<std::string, ops::BatchNormState> copies_;
};

ForwardOutput forward_impl(const Network& net, ParamSource& src, Graph& g, Var batch, Mode mode) {
  const NetworkConfig& c = net.config;
  const Shape& in = batch.shape();
  if (in.size() != 4 || in[1] != static_cast<std::size_t>(c.in_channels) ||
      in[2] != static_cast<std::size_t>(c.in_height) || in[3] != static_cast<std::size_t>(c.in_width)) {
    throw DimensionError("network expects input [Bx" + std::to_string(c.in_channels) + "x" +
                         std::to_string(c.in_height) + "x" + std::to_string(c.in_width) + "], got " + shape_str(in));
  }
  const ops::BatchNormOptions bn_opts{c.bn_eps, c.bn_momentum};
  auto bn = [&](Var x, const std::string& name) {
    return ops::batchnorm2d(x, src.get(g, name + ".gamma"), src.get(g, name + ".beta"), src.bn(name), mode, bn_opts);
  };
  auto act = [&](Var x) { return ops::activation(x, c.activation, c.negative_slope); };

  Var x = ops::conv2d(batch, src.get(g, "stem.conv.weight"), c.stem_stride, c.stem_kernel / 2);
  x = act(bn(x, "stem.bn"));
  if (c.stem_pool) x = ops::max_pool2d(x, 3, 2, 1);

  for (const auto& b : layout_of(c).blocks) {
    Var y = ops::conv2d(x, src.get(g, b.prefix + ".conv1.weight"), b.stride, 1);
    y = act(bn(y, b.prefix + ".bn1"));
    y = ops::conv2d(y, src.get(g, b.prefix + ".conv2.weight"), 1, 1);
    y = bn(y, b.prefix + ".bn2");
    Var shortcut = x;
    if (b.projection) {
      shortcut = ops::conv2d(x, src.get(g, b.prefix + ".shortcut.conv.weight"), b.stride, 0);
      shortcut = bn(shortcut, b.prefix + ".shortcut.bn");
    }
    x = act(ops::add(y, shortcut));
  }

  ForwardOutput out;
  out.features = x;
  Var pooled = ops::global_avg_pool(x);
  out.embedding = ops::add_bias(ops::matmul(pooled, src.get(g, "embed.weight")), src.get(g, "embed.bias"));
  Var cosines = ops::matmul(ops::normalize_rows(out.embedding), ops::normalize_cols(src.head(g)));
  out.probs = ops::softmax_rows(ops::scale(cosines, net.head.s));
  return out;
}

}  // namespace

ForwardOutput forward(Network& net, Graph& g, Var batch, Mode mode) {
  BoundSource src(net);
  return forward_impl(net, src, g, batch, mode);
}

Inference infer(const Network& net, const Tensor& batch) {
  Graph g;
  ConstSource src(net);
  auto out = forward_impl(net, src, g, g.constant(batch), Mode::eval);
  return {out.features.shape(), out.embedding.value(), out.probs.value()};
}

std::vector<double> score(const Network& net, const Tensor& batch) {
  const Inference inf = infer(net, batch);
  const std::size_t n = inf.probs.dim(0), k = inf.probs.dim(1);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = inf.probs[i * k + kLiveClass];
  return out;
}

}  // namespace fpad::network
