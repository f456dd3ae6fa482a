#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <utility>

#include "fpad/errors.hpp"
#include "fpad/tensorcore/ops.hpp"
#include "gemm.hpp"

namespace fpad::ops {

const char* to_string(ActivationKind kind) {
  return kind == ActivationKind::relu ? "relu" : "leaky_relu";
}

ActivationKind parse_activation(std::string_view text) {
  if (text == "relu") return ActivationKind::relu;
  if (text == "leaky_relu") return ActivationKind::leaky_relu;
  throw UsageError("unknown activation '" + std::string(text) + "' (expected relu or leaky_relu)");
}

namespace {

Graph& graph_of(Var a, Var b) {
  if (!a.graph || a.graph != b.graph) throw UsageError("operands belong to different graphs");
  return *a.graph;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(ta.shape()) + " by " + shape_str(tb.shape()));
  }
  const std::size_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Tensor out(Shape{m, n});
  detail::gemm_nn(m, n, k, ta.data().data(), tb.data().data(), out.data().data());
  return g.record("matmul", std::move(out), {a, b}, [a, b, m, n, k](Graph& g, std::span<const double> dc) {
    if (g.needs_grad(a)) {
      detail::gemm_nt(m, k, n, dc.data(), g.value(b).data().data(), g.grad_buffer(a.id).data());
    }
    if (g.needs_grad(b)) {
      detail::gemm_tn(k, n, m, g.value(a).data().data(), dc.data(), g.grad_buffer(b.id).data());
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.shape() != tb.shape()) {
    throw DimensionError("add: shapes " + shape_str(ta.shape()) + " and " + shape_str(tb.shape()) + " differ");
  }
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
  return g.record("add", std::move(out), {a, b}, [a, b](Graph& g, std::span<const double> d) {
    if (g.needs_grad(a)) accumulate(g.grad_buffer(a.id), d);
    if (g.needs_grad(b)) accumulate(g.grad_buffer(b.id), d);
  });
}

Var add_bias(Var x, Var bias) {
  Graph& g = graph_of(x, bias);
  const Tensor& tx = x.value();
  const Tensor& tb = bias.value();
  require_rank(tx, 2, "add_bias");
  const std::size_t rows = tx.dim(0), cols = tx.dim(1);
  if (tb.size() != cols) {
    throw DimensionError("add_bias: bias " + shape_str(tb.shape()) + " does not match " + shape_str(tx.shape()));
  }
  Tensor out = tx;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += tb[c];
  }
  return g.record("add_bias", std::move(out), {x, bias}, [x, bias, rows, cols](Graph& g, std::span<const double> d) {
    if (g.needs_grad(x)) accumulate(g.grad_buffer(x.id), d);
    if (g.needs_grad(bias)) {
      auto db = g.grad_buffer(bias.id);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) db[c] += d[r * cols + c];
      }
    }
  });
}

Var scale(Var x, double factor) {
  Graph& g = *x.graph;
  Tensor out = x.value();
  for (auto& v : out.data()) v *= factor;
  return g.record("scale", std::move(out), {x}, [x, factor](Graph& g, std::span<const double> d) {
    auto dx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * d[i];
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.shape() != tb.shape()) {
    throw DimensionError("mul: shapes " + shape_str(ta.shape()) + " and " + shape_str(tb.shape()) + " differ");
  }
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
  return g.record("mul", std::move(out), {a, b}, [a, b](Graph& g, std::span<const double> d) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    if (g.needs_grad(a)) {
      auto da = g.grad_buffer(a.id);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i] * tb[i];
    }
    if (g.needs_grad(b)) {
      auto db = g.grad_buffer(b.id);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += d[i] * ta[i];
    }
  });
}

Var sum(Var x) {
  Graph& g = *x.graph;
  const auto data = x.value().data();
  const double total = std::accumulate(data.begin(), data.end(), 0.0);
  return g.record("sum", Tensor::scalar(total), {x}, [x](Graph& g, std::span<const double> d) {
    for (auto& v : g.grad_buffer(x.id)) v += d[0];
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = *x.graph;
  Tensor out = x.value().reshaped(std::move(shape));
  return g.record("reshape", std::move(out), {x},
                  [x](Graph& g, std::span<const double> d) { accumulate(g.grad_buffer(x.id), d); });
}

Var activation(Var x, ActivationKind kind, double negative_slope) {
  if (kind == ActivationKind::relu) {
    negative_slope = 0.0;
  } else if (!(negative_slope >= 0.0 && negative_slope < 1.0)) {
    throw ConfigError("leaky_relu negative slope must be in [0,1), got " + std::to_string(negative_slope));
  }
  Graph& g = *x.graph;
  Tensor out = x.value();
  const double slope = negative_slope;
  std::uint64_t signs = 0;
  std::size_t i = 0;
  for (auto& v : out.data()) {
    const bool positive = v >= 0.0;
    if (!positive) v = slope == 0.0 ? 0.0 : slope * v;
    signs = (signs << 1) | (positive ? 1u : 0u);
    if (++i % 64 == 0) g.note_branch(std::exchange(signs, 0));
  }
  g.note_branch(signs);
  return g.record(kind == ActivationKind::relu ? "relu" : "leaky_relu", std::move(out), {x},
                  [x, slope](Graph& g, std::span<const double> d) {
                    const Tensor& in = g.value(x);
                    auto dx = g.grad_buffer(x.id);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += in[i] >= 0.0 ? d[i] : slope * d[i];
                  });
}

Var global_avg_pool(Var x) {
  Graph& g = *x.graph;
  const Tensor& t = x.value();
  require_rank(t, 4, "global_avg_pool");
  const std::size_t b = t.dim(0), c = t.dim(1), hw = t.dim(2) * t.dim(3);
  Tensor out(Shape{b, c});
  for (std::size_t i = 0; i < b * c; ++i) {
    const double* p = t.data().data() + i * hw;
    out[i] = std::accumulate(p, p + hw, 0.0) / static_cast<double>(hw);
  }
  return g.record("global_avg_pool", std::move(out), {x}, [x, b, c, hw](Graph& g, std::span<const double> d) {
    auto dx = g.grad_buffer(x.id);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < b * c; ++i) {
      for (std::size_t j = 0; j < hw; ++j) dx[i * hw + j] += d[i] * inv;
    }
  });
}

Var max_pool2d(Var x, int kernel, int stride, int pad) {
  Graph& g = *x.graph;
  const Tensor& t = x.value();
  require_rank(t, 4, "max_pool2d");
  if (kernel < 1 || stride < 1 || pad < 0 || pad >= kernel) {
    throw ConfigError("max_pool2d: invalid kernel/stride/pad");
  }
  const long h = static_cast<long>(t.dim(2)), w = static_cast<long>(t.dim(3));
  const long ho = (h + 2 * pad - kernel) / stride + 1;
  const long wo = (w + 2 * pad - kernel) / stride + 1;
  if (h + 2 * pad < kernel || w + 2 * pad < kernel || ho < 1 || wo < 1) {
    throw ConfigError("max_pool2d: non-positive output extent for input " + shape_str(t.shape()));
  }
  const std::size_t planes = t.dim(0) * t.dim(1);
  Tensor out(Shape{t.dim(0), t.dim(1), static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = t.data().data() + p * h * w;
    for (long oy = 0; oy < ho; ++oy) {
      for (long ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (long ky = 0; ky < kernel; ++ky) {
          const long iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (long kx = 0; kx < kernel; ++kx) {
            const long ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const double v = src[iy * w + ix];
            if (v > best) {
              best = v;
              best_idx = static_cast<std::size_t>(iy * w + ix);
            }
          }
        }
        const std::size_t o = p * ho * wo + oy * wo + ox;
        out[o] = best;
        (*argmax)[o] = p * h * w + best_idx;
      }
    }
  }
  for (std::size_t idx : *argmax) g.note_branch(idx);
  return g.record("max_pool2d", std::move(out), {x}, [x, argmax](Graph& g, std::span<const double> d) {
    auto dx = g.grad_buffer(x.id);
    for (std::size_t o = 0; o < d.size(); ++o) dx[(*argmax)[o]] += d[o];
  });
}

namespace {

enum class Axis { rows, cols };

Var normalize(Var x, Axis axis) {
  Graph& g = *x.graph;
  const Tensor& t = x.value();
  require_rank(t, 2, axis == Axis::rows ? "normalize_rows" : "normalize_cols");
  const std::size_t r = t.dim(0), c = t.dim(1);
  // Vectors along the normalized axis: count, length, element stride, vector stride.
  const std::size_t count = axis == Axis::rows ? r : c;
  const std::size_t len = axis == Axis::rows ? c : r;
  const std::size_t step = axis == Axis::rows ? 1 : c;
  const std::size_t vstride = axis == Axis::rows ? c : 1;

  auto norms = std::make_shared<std::vector<double>>(count);
  Tensor out = t;
  for (std::size_t v = 0; v < count; ++v) {
    double ss = 0.0;
    for (std::size_t e = 0; e < len; ++e) {
      const double val = t[v * vstride + e * step];
      ss += val * val;
    }
    const double n = std::sqrt(ss);
    if (!(n > 0.0)) {
      throw DegenerateInputError(std::string("cannot normalize zero-norm ") + (axis == Axis::rows ? "row " : "column ") +
                                 std::to_string(v));
    }
    (*norms)[v] = n;
    for (std::size_t e = 0; e < len; ++e) out[v * vstride + e * step] /= n;
  }
  const char* name = axis == Axis::rows ? "normalize_rows" : "normalize_cols";
  return g.record(name, std::move(out), {x},
               [x, norms, count, len, step, vstride, out_id = g.size()](Graph& g, std::span<const double> d) {
                 const Tensor& yv = g.value(Var{&g, out_id});
                 auto dx = g.grad_buffer(x.id);
                 for (std::size_t v = 0; v < count; ++v) {
                   double dot = 0.0;
                   for (std::size_t e = 0; e < len; ++e) {
                     const std::size_t i = v * vstride + e * step;
                     dot += d[i] * yv[i];
                   }
                   const double inv = 1.0 / (*norms)[v];
                   for (std::size_t e = 0; e < len; ++e) {
                     const std::size_t i = v * vstride + e * step;
                     dx[i] += (d[i] - yv[i] * dot) * inv;
                   }
                 }
               });
}

}  // namespace

Var normalize_rows(Var x) { return normalize(x, Axis::rows); }
Var normalize_cols(Var x) { return normalize(x, Axis::cols); }

Var softmax_rows(Var x) {
  Graph& g = *x.graph;
  const Tensor& t = x.value();
  require_rank(t, 2, "softmax_rows");
  const std::size_t r = t.dim(0), c = t.dim(1);
  Tensor out = t;
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= z;
  }
  return g.record("softmax_rows", std::move(out), {x}, [x, r, c, out_id = g.size()](Graph& g, std::span<const double> d) {
    const Tensor& y = g.value(Var{&g, out_id});
    auto dx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += d[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += y[i * c + j] * (d[i * c + j] - dot);
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Graph& g = *logits.graph;
  const Tensor& t = logits.value();
  require_rank(t, 2, "softmax_cross_entropy");
  const std::size_t r = t.dim(0), c = t.dim(1);
  if (labels.size() != r) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(r) + " rows");
  }
  auto probs = std::make_shared<std::vector<double>>(r * c);
  std::vector<int> lab(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const int y = lab[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw UsageError("label " + std::to_string(y) + " out of range [0," + std::to_string(c) + ")");
    }
    const double* row = t.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    if (row[y] >= mx) {
      // lse − l_y cancels to 0 once the target dominates; log1p keeps the tail.
      double rest = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        if (static_cast<int>(j) != y) rest += std::exp(row[j] - row[y]);
      }
      total += std::log1p(rest);
    } else {
      total += lse - row[y];
    }
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - lse);
  }
  const double mean = total / static_cast<double>(r);
  return g.record("softmax_cross_entropy", Tensor::scalar(mean), {logits},
                  [logits, probs, lab = std::move(lab), r, c](Graph& g, std::span<const double> d) {
                    auto dx = g.grad_buffer(logits.id);
                    const double f = d[0] / static_cast<double>(r);
                    for (std::size_t i = 0; i < r; ++i) {
                      for (std::size_t j = 0; j < c; ++j) {
                        const double onehot = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                        dx[i * c + j] += f * ((*probs)[i * c + j] - onehot);
                      }
                    }
                  });
}

}  // namespace fpad::ops
