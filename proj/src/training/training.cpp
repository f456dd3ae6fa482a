#include "fpad/training/training.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "fpad/common/rng.hpp"
#include "fpad/errors.hpp"

namespace fpad::training {

void adam_step(const NamedParams& params, AdamState& state, double lr) {
  for (const auto& [name, t] : params) {
    if (!t->has_grad()) continue;
    for (double g : t->grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
    }
  }
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t->shape(), 0.0);
      state.v.emplace_back(t->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("Adam state holds a different parameter count");
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].second;
    if (state.m[p].shape() != t.shape()) throw DimensionError("Adam moments for '" + params[p].first + "' do not match");
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto m = state.m[p].data();
    auto v = state.v[p].data();
    auto w = t.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  loss().validate();
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  kv.set("train.epochs", epochs);
  kv.set("train.lr", lr);
  kv.set("train.batch_size", batch_size);
  kv.set("train.lambda", lambda);
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.s", s);
  kv.set("train.m", m);
  kv.set("train.alpha", alpha);
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  if (kv.contains("train.epochs")) c.epochs = static_cast<int>(kv.get_int("train.epochs"));
  if (kv.contains("train.lr")) c.lr = kv.get_double("train.lr");
  if (kv.contains("train.batch_size")) c.batch_size = static_cast<int>(kv.get_int("train.batch_size"));
  if (kv.contains("train.lambda")) c.lambda = kv.get_double("train.lambda");
  if (kv.contains("train.seed")) c.seed = kv.get_uint("train.seed");
  if (kv.contains("train.s")) c.s = kv.get_double("train.s");
  if (kv.contains("train.m")) c.m = kv.get_double("train.m");
  if (kv.contains("train.alpha")) c.alpha = kv.get_double("train.alpha");
  return c;
}

void write_loss_log(std::ostream& out, std::span<const EpochLog> log) {
  for (const auto& e : log) {
    out << e.epoch << '\t' << format_double(e.joint) << '\t' << format_double(e.arcface) << '\t'
        << format_double(e.center) << '\n';
  }
}

int training_label(const dataio::SampleRecord& r) {
  switch (r.cls) {
    case dataio::SampleClass::live: return network::kLiveClass;
    case dataio::SampleClass::synthetic: return network::kSpoofClass;
    case dataio::SampleClass::attack: break;
  }
  throw ProtocolError("attack record '" + r.id + "' in training data; training uses live and synthetic samples only");
}

namespace {

Tensor gather(const Tensor& images, std::span<const std::size_t> rows) {
  Shape shape = images.shape();
  const std::size_t each = images.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = images.storage().begin() + static_cast<long>(rows[i] * each);
    std::copy(src, src + static_cast<long>(each), out.data().begin() + static_cast<long>(i * each));
  }
  return out;
}

}  // namespace

TrainResult train(const network::NetworkConfig& net_config, const TrainConfig& cfg, const dataio::ImageSet& data,
                  const BatchObserver& observer) {
  cfg.validate();
  std::vector<int> labels;
  labels.reserve(data.records.size());
  for (const auto& r : data.records) labels.push_back(training_label(r));
  if (labels.empty()) throw UsageError("training set is empty");
  if (data.images.dim(0) != labels.size()) throw DimensionError("image count does not match record count");

  TrainResult result;
  network::Checkpoint& ck = result.checkpoint;
  ck.net = network::build(net_config, derive_seed(cfg.seed, hash_string("network")));
  ck.net.head.s = cfg.s;
  ck.net.head.m = cfg.m;
  ck.bank = losses::CenterBank::zeros(static_cast<std::size_t>(net_config.classes),
                                      static_cast<std::size_t>(net_config.embedding_dim), cfg.alpha);
  ck.lambda = cfg.lambda;
  ck.meta = cfg.to_kv();

  const losses::JointLossConfig loss_cfg = cfg.loss();
  NamedParams params = ck.net.trainable();
  AdamState adam;
  std::vector<std::size_t> order(labels.size());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, hash_string("epoch") + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    EpochLog log{epoch, 0.0, 0.0, 0.0};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch, order.size() - start));
      std::vector<int> y;
      for (std::size_t r : rows) y.push_back(labels[r]);
      const Tensor x = gather(data.images, rows);

      Graph g;
      losses::JointLossOutput out;
      try {
        auto fwd = network::forward(ck.net, g, g.constant(x), ops::Mode::train);
        out = losses::joint_loss(fwd.embedding, g.parameter(ck.net.head.weights), y, ck.bank, loss_cfg);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches + 1) + ": " +
                           e.what());
      }
      const double joint = out.joint.value()[0];
      if (!std::isfinite(joint)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches + 1));
      }
      g.backward(out.joint);
      adam_step(params, adam, cfg.lr);
      for (auto& [name, t] : params) t->clear_grad();
      ck.bank = losses::center_update(std::move(ck.bank), out.normalized.value(), y);
      ck.net.head.renormalize();

      const double arcface = out.arcface.value()[0], center = out.center.value()[0];
      log.joint += joint;
      log.arcface += arcface;
      log.center += center;
      ++batches;
      if (observer) observer({epoch, static_cast<int>(batches), joint, arcface, center, &ck});
    }
    const auto n = static_cast<double>(batches);
    log.joint /= n;
    log.arcface /= n;
    log.center /= n;
    result.log.push_back(log);
  }
  return result;
}

std::vector<double> score_images(const network::Network& net, const Tensor& images, std::size_t chunk) {
  const std::size_t n = images.dim(0);
  std::vector<double> scores;
  scores.reserve(n);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += chunk) {
    rows.resize(std::min(chunk, n - start));
    std::iota(rows.begin(), rows.end(), start);
    const auto part = network::score(net, gather(images, rows));
    scores.insert(scores.end(), part.begin(), part.end());
  }
  return scores;
}

metrics::ScoreSet make_score_set(std::span<const dataio::SampleRecord> records, std::span<const double> scores) {
  if (records.size() != scores.size()) throw DimensionError("record and score counts differ");
  metrics::ScoreSet set;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.cls == dataio::SampleClass::live) {
      set.bona_fide.push_back(scores[i]);
    } else if (r.cls == dataio::SampleClass::synthetic) {
      set.attacks[dataio::kSyntheticSpecies].push_back(scores[i]);
    } else {
      set.attacks[r.pai_species.value_or("unknown")].push_back(scores[i]);
    }
  }
  return set;
}

std::vector<metrics::ScoreRow> make_score_rows(std::span<const dataio::SampleRecord> records,
                                               std::span<const double> scores) {
  if (records.size() != scores.size()) throw DimensionError("record and score counts differ");
  std::vector<metrics::ScoreRow> rows;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    metrics::ScoreRow row;
    row.sample_id = r.id;
    row.bona_fide = r.cls == dataio::SampleClass::live;
    if (!row.bona_fide) {
      row.pai_species = r.cls == dataio::SampleClass::synthetic ? std::string(dataio::kSyntheticSpecies)
                                                                 : r.pai_species.value_or("unknown");
    }
    row.score = scores[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> default_lambda_grid() { return {0.0, 0.001, 0.00411, 0.01, 0.0411, 0.1, 0.411, 1.0}; }

std::uint64_t lambda_seed(std::uint64_t seed, double lambda) {
  return derive_seed(seed, std::bit_cast<std::uint64_t>(lambda));
}

std::size_t select_lambda(std::span<const double> lambdas, std::span<const double> aucs) {
  if (lambdas.empty() || lambdas.size() != aucs.size()) throw UsageError("need one AUC per lambda");
  std::size_t best = 0;
  for (std::size_t i = 1; i < lambdas.size(); ++i) {
    if (aucs[i] > aucs[best] || (aucs[i] == aucs[best] && lambdas[i] < lambdas[best])) best = i;
  }
  return best;
}

SweepResult sweep_lambda(std::span<const double> grid, const network::NetworkConfig& net_config,
                         const TrainConfig& base, const dataio::ImageSet& train_set, const dataio::ImageSet& val_set,
                         int threads) {
  if (grid.empty()) throw UsageError("lambda grid is empty");
  for (double l : grid) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw UsageError("lambda values must be finite and non-negative");
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t j = i + 1; j < grid.size(); ++j) {
      if (grid[i] == grid[j]) throw UsageError("lambda grid contains " + format_double(grid[i]) + " twice");
    }
  }
  {
    const auto probe = make_score_set(val_set.records, std::vector<double>(val_set.records.size(), 0.5));
    if (probe.bona_fide.empty() || probe.attacks.empty()) {
      throw UsageError("validation split needs both bona fide and attack-source samples");
    }
  }
  for (const auto& r : train_set.records) training_label(r);

  SweepResult result;
  result.entries.resize(grid.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      try {
        SweepEntry& e = result.entries[i];
        e.lambda = grid[i];
        e.seed = lambda_seed(base.seed, grid[i]);
        TrainConfig cfg = base;
        cfg.lambda = grid[i];
        cfg.seed = e.seed;
        e.result = train(net_config, cfg, train_set);
        const auto scores = score_images(e.result.checkpoint.net, val_set.images);
        const auto set = make_score_set(val_set.records, scores);
        e.roc = metrics::roc(set);
        e.threshold = metrics::choose_threshold(set, {});
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n_threads = std::clamp(threads, 1, static_cast<int>(grid.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<double> aucs;
  for (const auto& e : result.entries) aucs.push_back(e.roc.auc);
  result.selected = select_lambda(grid, aucs);
  return result;
}

}  // namespace fpad::training
