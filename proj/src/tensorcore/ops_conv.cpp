#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "fpad/errors.hpp"
#include "fpad/tensorcore/ops.hpp"
#include "gemm.hpp"

namespace fpad::ops {

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kernel, stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t out_plane() const { return out_h * out_w; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) read an in-bounds input column for kernel offset kx.
std::pair<long, long> valid_columns(long kx, long s, long p, long w, long ow) {
  long lo = 0;
  while (lo < ow && lo * s - p + kx < 0) ++lo;
  long hi = ow;
  while (hi > lo && (hi - 1) * s - p + kx >= w) --hi;
  return {lo, hi};
}

void im2col(const ConvGeometry& geo, const double* x, double* cols) {
  const long h = static_cast<long>(geo.height), w = static_cast<long>(geo.width);
  const long k = static_cast<long>(geo.kernel), s = static_cast<long>(geo.stride), p = static_cast<long>(geo.pad);
  const long oh = static_cast<long>(geo.out_h), ow = static_cast<long>(geo.out_w);
  for (std::size_t c = 0; c < geo.channels; ++c) {
    const double* plane = x + c * h * w;
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * oh * ow;
        const auto [lo, hi] = valid_columns(kx, s, p, w, ow);
        for (long oy = 0; oy < oh; ++oy) {
          const long iy = oy * s - p + ky;
          double* dst = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const long base = iy * w + kx - p;
          std::fill(dst, dst + lo, 0.0);
          if (s == 1) {
            std::copy(plane + base + lo, plane + base + hi, dst + lo);
          } else {
            for (long ox = lo; ox < hi; ++ox) dst[ox] = plane[base + ox * s];
          }
          std::fill(dst + hi, dst + ow, 0.0);
        }
      }
    }
  }
}

void col2im(const ConvGeometry& geo, const double* cols, double* dx) {
  const long h = static_cast<long>(geo.height), w = static_cast<long>(geo.width);
  const long k = static_cast<long>(geo.kernel), s = static_cast<long>(geo.stride), p = static_cast<long>(geo.pad);
  const long oh = static_cast<long>(geo.out_h), ow = static_cast<long>(geo.out_w);
  for (std::size_t c = 0; c < geo.channels; ++c) {
    double* plane = dx + c * h * w;
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * oh * ow;
        const auto [lo, hi] = valid_columns(kx, s, p, w, ow);
        for (long oy = 0; oy < oh; ++oy) {
          const long iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + oy * ow;
          const long base = iy * w + kx - p;
          for (long ox = lo; ox < hi; ++ox) plane[base + ox * s] += src[ox];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var x, Var w, int stride, int pad) {
  if (!x.graph || x.graph != w.graph) throw UsageError("operands belong to different graphs");
  Graph& g = *x.graph;
  const Tensor& tx = x.value();
  const Tensor& tw = w.value();
  if (tx.rank() != 4 || tw.rank() != 4 || tw.dim(1) != tx.dim(1) || tw.dim(2) != tw.dim(3)) {
    throw DimensionError("conv2d: input " + shape_str(tx.shape()) + " incompatible with kernel " +
                         shape_str(tw.shape()));
  }
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: stride must be >= 1 and pad >= 0");

  ConvGeometry geo{tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3), tw.dim(0), tw.dim(2),
                   static_cast<std::size_t>(stride), static_cast<std::size_t>(pad), 0, 0};
  const long span_h = static_cast<long>(geo.height + 2 * geo.pad) - static_cast<long>(geo.kernel);
  const long span_w = static_cast<long>(geo.width + 2 * geo.pad) - static_cast<long>(geo.kernel);
  if (span_h < 0 || span_w < 0) {
    throw ConfigError("conv2d: kernel " + std::to_string(geo.kernel) + " does not fit input " +
                      shape_str(tx.shape()) + " with pad " + std::to_string(pad));
  }
  geo.out_h = static_cast<std::size_t>(span_h) / geo.stride + 1;
  geo.out_w = static_cast<std::size_t>(span_w) / geo.stride + 1;

  Tensor out(Shape{geo.batch, geo.filters, geo.out_h, geo.out_w});
  const std::size_t in_sample = geo.channels * geo.height * geo.width;
  const std::size_t out_sample = geo.filters * geo.out_plane();
  // Columns are kept for the kernel gradient instead of being rebuilt.
  const std::size_t col_size = geo.pointwise() ? 0 : geo.patch() * geo.out_plane();
  const bool keep = col_size > 0 && g.needs_grad(w);
  auto cols = std::make_shared<std::vector<double>>(keep ? col_size * geo.batch : col_size);
  for (std::size_t b = 0; b < geo.batch; ++b) {
    const double* xb = tx.data().data() + b * in_sample;
    const double* colp = xb;
    if (col_size > 0) {
      double* dst = cols->data() + (keep ? b * col_size : 0);
      im2col(geo, xb, dst);
      colp = dst;
    }
    detail::gemm_nn(geo.filters, geo.out_plane(), geo.patch(), tw.data().data(), colp,
                    out.data().data() + b * out_sample);
  }
  if (!keep) cols.reset();

  return g.record("conv2d", std::move(out), {x, w}, [x, w, geo, cols](Graph& g, std::span<const double> d) {
    const Tensor& tx = g.value(x);
    const Tensor& tw = g.value(w);
    const bool want_x = g.needs_grad(x);
    const bool want_w = g.needs_grad(w);
    const std::size_t in_sample = geo.channels * geo.height * geo.width;
    const std::size_t out_sample = geo.filters * geo.out_plane();
    const std::size_t col_size = geo.pointwise() ? 0 : geo.patch() * geo.out_plane();
    std::vector<double> dcols(want_x && !geo.pointwise() ? geo.patch() * geo.out_plane() : 0);
    double* dw = want_w ? g.grad_buffer(w.id).data() : nullptr;
    double* dx = want_x ? g.grad_buffer(x.id).data() : nullptr;
    for (std::size_t b = 0; b < geo.batch; ++b) {
      const double* db = d.data() + b * out_sample;
      const double* xb = tx.data().data() + b * in_sample;
      if (want_w) {
        const double* colp = col_size > 0 ? cols->data() + b * col_size : xb;
        detail::gemm_nt(geo.filters, geo.patch(), geo.out_plane(), db, colp, dw);
      }
      if (want_x) {
        if (geo.pointwise()) {
          detail::gemm_tn(geo.patch(), geo.out_plane(), geo.filters, tw.data().data(), db, dx + b * in_sample);
        } else {
          std::fill(dcols.begin(), dcols.end(), 0.0);
          detail::gemm_tn(geo.patch(), geo.out_plane(), geo.filters, tw.data().data(), db, dcols.data());
          col2im(geo, dcols.data(), dx + b * in_sample);
        }
      }
    }
  });
}

}  // namespace fpad::ops
