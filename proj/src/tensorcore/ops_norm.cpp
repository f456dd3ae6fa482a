#include <cmath>
#include <memory>
#include <vector>

#include "fpad/errors.hpp"
#include "fpad/tensorcore/ops.hpp"

namespace fpad::ops {

namespace {

// Mean with one correction pass; exact for constant inputs.
double stable_mean(const double* const* planes, std::size_t nplanes, std::size_t len) {
  double s = 0.0;
  for (std::size_t p = 0; p < nplanes; ++p) {
    for (std::size_t i = 0; i < len; ++i) s += planes[p][i];
  }
  const double n = static_cast<double>(nplanes * len);
  double mean = s / n;
  double corr = 0.0;
  for (std::size_t p = 0; p < nplanes; ++p) {
    for (std::size_t i = 0; i < len; ++i) corr += planes[p][i] - mean;
  }
  return mean + corr / n;
}

}  // namespace

Var batchnorm2d(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode, BatchNormOptions options) {
  if (!x.graph || x.graph != gamma.graph || x.graph != beta.graph) {
    throw UsageError("operands belong to different graphs");
  }
  Graph& g = *x.graph;
  const Tensor& tx = x.value();
  if (tx.rank() < 2) throw DimensionError("batchnorm2d: input needs a channel axis, got " + shape_str(tx.shape()));
  const std::size_t batch = tx.dim(0), channels = tx.dim(1);
  const std::size_t spatial = tx.size() / (batch * channels);
  if (gamma.value().size() != channels || beta.value().size() != channels ||
      state.running_mean.size() != channels || state.running_var.size() != channels) {
    throw DimensionError("batchnorm2d: parameters " + shape_str(gamma.value().shape()) + "/" +
                         shape_str(beta.value().shape()) + " do not match " + std::to_string(channels) +
                         " channels of " + shape_str(tx.shape()));
  }
  const Tensor& tg = gamma.value();
  const Tensor& tb = beta.value();
  const double n = static_cast<double>(batch * spatial);

  auto xhat = std::make_shared<std::vector<double>>(tx.size());
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  Tensor out(tx.shape());
  std::vector<const double*> planes(batch);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t b = 0; b < batch; ++b) planes[b] = tx.data().data() + (b * channels + c) * spatial;
    double mean, var;
    if (mode == Mode::train) {
      mean = stable_mean(planes.data(), batch, spatial);
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < spatial; ++i) {
          const double dv = planes[b][i] - mean;
          ss += dv * dv;
        }
      }
      var = ss / n;
      const double unbiased = n > 1.0 ? ss / (n - 1.0) : var;
      state.running_mean[c] = (1.0 - options.momentum) * state.running_mean[c] + options.momentum * mean;
      state.running_var[c] = (1.0 - options.momentum) * state.running_var[c] + options.momentum * unbiased;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + options.eps);
    (*inv_std)[c] = is;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double h = (planes[b][i] - mean) * is;
        (*xhat)[base + i] = h;
        out[base + i] = tg[c] * h + tb[c];
      }
    }
  }

  const bool train = mode == Mode::train;
  return g.record(train ? "batchnorm2d_train" : "batchnorm2d_eval", std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat, inv_std, batch, channels, spatial, n, train](Graph& g,
                                                                                     std::span<const double> d) {
                    const Tensor& tg = g.value(gamma);
                    double* dx = g.needs_grad(x) ? g.grad_buffer(x.id).data() : nullptr;
                    double* dgamma = g.needs_grad(gamma) ? g.grad_buffer(gamma.id).data() : nullptr;
                    double* dbeta = g.needs_grad(beta) ? g.grad_buffer(beta.id).data() : nullptr;
                    for (std::size_t c = 0; c < channels; ++c) {
                      double sum_d = 0.0, sum_dh = 0.0;
                      for (std::size_t b = 0; b < batch; ++b) {
                        const std::size_t base = (b * channels + c) * spatial;
                        for (std::size_t i = 0; i < spatial; ++i) {
                          sum_d += d[base + i];
                          sum_dh += d[base + i] * (*xhat)[base + i];
                        }
                      }
                      if (dgamma) dgamma[c] += sum_dh;
                      if (dbeta) dbeta[c] += sum_d;
                      if (!dx) continue;
                      const double k = tg[c] * (*inv_std)[c];
                      for (std::size_t b = 0; b < batch; ++b) {
                        const std::size_t base = (b * channels + c) * spatial;
                        for (std::size_t i = 0; i < spatial; ++i) {
                          if (train) {
                            dx[base + i] += k / n * (n * d[base + i] - sum_d - (*xhat)[base + i] * sum_dh);
                          } else {
                            dx[base + i] += k * d[base + i];
                          }
                        }
                      }
                    }
                  });
}

}  // namespace fpad::ops
