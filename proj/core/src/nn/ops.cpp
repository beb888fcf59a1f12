#include "pddpm/nn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "pddpm/error.hpp"

namespace pddpm::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_rank(std::string_view op, const char* what, const Tensor& t, int rank) {
  if (t.rank() != rank) {
    shape_fail(op, std::string(what) + " must have rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void add_into(Tensor& dst, std::span<const float> src) {
  auto d = dst.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
}

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

struct ConvGeometry {
  int n, cin, h, w, cout, k, stride, pad, ho, wo;
  int patch_rows() const { return cin * k * k; }
  int out_pixels() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const float* x, const ConvGeometry& g, float* cols) {
  const int hw_out = g.out_pixels();
  for (int c = 0; c < g.cin; ++c) {
    const float* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * hw_out;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          float* out = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, 0.0f);
            continue;
          }
          const float* xrow = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            out[ox] = (ix >= 0 && ix < g.w) ? xrow[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, const ConvGeometry& g, float* dx) {
  const int hw_out = g.out_pixels();
  for (int c = 0; c < g.cin; ++c) {
    float* dxc = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * hw_out;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          float* dxrow = dxc + static_cast<std::size_t>(iy) * g.w;
          const float* in = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dxrow[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Tape& tape, Var x, Var weight, Var bias, Conv2dAttrs attrs) {
  constexpr std::string_view op = "conv2d";
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  const Tensor& bv = tape.value(bias);
  require_rank(op, "input", xv, 4);
  require_rank(op, "weight", wv, 4);
  require_rank(op, "bias", bv, 1);
  if (attrs.stride < 1) shape_fail(op, "stride must be >= 1");
  if (attrs.padding < 0) shape_fail(op, "padding must be >= 0");
  if (wv.dim(2) != wv.dim(3)) shape_fail(op, "kernel must be square, got " + shape_str(wv.shape()));
  if (xv.dim(1) != wv.dim(1)) {
    shape_fail(op, "input channels " + std::to_string(xv.dim(1)) + " != weight in-channels " +
                       std::to_string(wv.dim(1)) + " (input " + shape_str(xv.shape()) + ", weight " +
                       shape_str(wv.shape()) + ")");
  }
  if (bv.dim(0) != wv.dim(0)) {
    shape_fail(op, "bias " + shape_str(bv.shape()) + " does not match out-channels " + std::to_string(wv.dim(0)));
  }
  ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), attrs.stride, attrs.padding, 0, 0};
  const int span_h = g.h + 2 * g.pad - g.k;
  const int span_w = g.w + 2 * g.pad - g.k;
  if (span_h < 0 || span_w < 0) {
    shape_fail(op, "kernel " + std::to_string(g.k) + " larger than padded input " + shape_str(xv.shape()));
  }
  g.ho = span_h / g.stride + 1;
  g.wo = span_w / g.stride + 1;

  Tensor out({g.n, g.cout, g.ho, g.wo});
  const ConstMatMap wmat(wv.ptr(), g.cout, g.patch_rows());
  std::vector<float> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.patch_rows()) * g.out_pixels());
  for (int n = 0; n < g.n; ++n) {
    const float* xn = xv.ptr() + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
    const float* colp = xn;
    if (!g.pointwise()) {
      im2col(xn, g, cols.data());
      colp = cols.data();
    }
    MatMap y(out.ptr() + static_cast<std::size_t>(n) * g.cout * g.out_pixels(), g.cout, g.out_pixels());
    y.noalias() = wmat * ConstMatMap(colp, g.patch_rows(), g.out_pixels());
    for (int co = 0; co < g.cout; ++co) y.row(co).array() += bv[static_cast<std::size_t>(co)];
  }

  return tape.record(std::move(out), {x.id, weight.id, bias.id}, [g](Tape& t, int self) {
    const auto& in = t.inputs(self);
    const int xi = in[0], wi = in[1], bi = in[2];
    const Tensor& xv = t.value(xi);
    const Tensor& wv = t.value(wi);
    const Tensor& dy = t.grad(self);
    const bool need_x = t.needs_grad(xi), need_w = t.needs_grad(wi), need_b = t.needs_grad(bi);
    std::vector<float> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.patch_rows()) * g.out_pixels());
    std::vector<float> dcols(cols.size());
    RowMatrix dw_acc;
    if (need_w) dw_acc = RowMatrix::Zero(g.cout, g.patch_rows());
    const ConstMatMap wmat(wv.ptr(), g.cout, g.patch_rows());
    for (int n = 0; n < g.n; ++n) {
      const ConstMatMap dyn(dy.ptr() + static_cast<std::size_t>(n) * g.cout * g.out_pixels(), g.cout, g.out_pixels());
      if (need_b) {
        Tensor& db = t.grad(bi);
        for (int co = 0; co < g.cout; ++co) {
          double s = 0.0;
          for (int p = 0; p < g.out_pixels(); ++p) s += dyn(co, p);
          db[static_cast<std::size_t>(co)] += static_cast<float>(s);
        }
      }
      if (need_w) {
        const float* xn = xv.ptr() + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
        const float* colp = xn;
        if (!g.pointwise()) {
          im2col(xn, g, cols.data());
          colp = cols.data();
        }
        dw_acc.noalias() += dyn * ConstMatMap(colp, g.patch_rows(), g.out_pixels()).transpose();
      }
      if (need_x) {
        float* dxn = t.grad(xi).ptr() + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
        if (g.pointwise()) {
          MatMap dx(dxn, g.cin, g.out_pixels());
          dx.noalias() += wmat.transpose() * dyn;
        } else {
          MatMap dc(dcols.data(), g.patch_rows(), g.out_pixels());
          dc.noalias() = wmat.transpose() * dyn;
          col2im_add(dcols.data(), g, dxn);
        }
      }
    }
    if (need_w) add_into(t.grad(wi), std::span<const float>(dw_acc.data(), static_cast<std::size_t>(dw_acc.size())));
  });
}

Var linear(Tape& tape, Var x, Var weight, Var bias) {
  constexpr std::string_view op = "linear";
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  const Tensor& bv = tape.value(bias);
  require_rank(op, "input", xv, 2);
  require_rank(op, "weight", wv, 2);
  require_rank(op, "bias", bv, 1);
  if (xv.dim(1) != wv.dim(1)) {
    shape_fail(op, "input features " + std::to_string(xv.dim(1)) + " != weight in-features " +
                       std::to_string(wv.dim(1)));
  }
  if (bv.dim(0) != wv.dim(0)) shape_fail(op, "bias " + shape_str(bv.shape()) + " vs weight " + shape_str(wv.shape()));
  const int n = xv.dim(0), in_f = xv.dim(1), out_f = wv.dim(0);
  Tensor out({n, out_f});
  MatMap y(out.ptr(), n, out_f);
  y.noalias() = ConstMatMap(xv.ptr(), n, in_f) * ConstMatMap(wv.ptr(), out_f, in_f).transpose();
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out_f; ++o) y(i, o) += bv[static_cast<std::size_t>(o)];
  }
  return tape.record(std::move(out), {x.id, weight.id, bias.id}, [n, in_f, out_f](Tape& t, int self) {
    const auto& in = t.inputs(self);
    const ConstMatMap dy(t.grad(self).ptr(), n, out_f);
    const ConstMatMap xm(t.value(in[0]).ptr(), n, in_f);
    const ConstMatMap wm(t.value(in[1]).ptr(), out_f, in_f);
    if (t.needs_grad(in[0])) {
      MatMap dx(t.grad(in[0]).ptr(), n, in_f);
      dx.noalias() += dy * wm;
    }
    if (t.needs_grad(in[1])) {
      MatMap dw(t.grad(in[1]).ptr(), out_f, in_f);
      dw.noalias() += dy.transpose() * xm;
    }
    if (t.needs_grad(in[2])) {
      Tensor& db = t.grad(in[2]);
      for (int o = 0; o < out_f; ++o) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += dy(i, o);
        db[static_cast<std::size_t>(o)] += static_cast<float>(s);
      }
    }
  });
}

Var group_norm(Tape& tape, Var x, Var gamma, Var beta, int groups, float eps) {
  constexpr std::string_view op = "group_norm";
  const Tensor& xv = tape.value(x);
  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  require_rank(op, "input", xv, 4);
  const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (groups < 1 || c % groups != 0) {
    shape_fail(op, std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
  }
  if (gv.shape() != Shape{c} || bv.shape() != Shape{c}) {
    shape_fail(op, "gamma/beta must be [" + std::to_string(c) + "], got " + shape_str(gv.shape()) + " and " +
                       shape_str(bv.shape()));
  }
  const int cpg = c / groups;
  const std::size_t group_size = static_cast<std::size_t>(cpg) * hw;
  auto stats = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n) * groups * 2);
  Tensor out(xv.shape());
  for (int i = 0; i < n; ++i) {
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + static_cast<std::size_t>(gi) * cpg) * hw;
      const float* xs = xv.ptr() + base;
      double mean = 0.0;
      for (std::size_t j = 0; j < group_size; ++j) mean += xs[j];
      mean /= static_cast<double>(group_size);
      double var = 0.0;
      for (std::size_t j = 0; j < group_size; ++j) {
        const double d = xs[j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(group_size);
      const float rstd = static_cast<float>(1.0 / std::sqrt(var + eps));
      const float meanf = static_cast<float>(mean);
      (*stats)[(static_cast<std::size_t>(i) * groups + gi) * 2] = meanf;
      (*stats)[(static_cast<std::size_t>(i) * groups + gi) * 2 + 1] = rstd;
      float* ys = out.ptr() + base;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = gi * cpg + cc;
        const float scale = gv[static_cast<std::size_t>(ch)] * rstd;
        const float shift = bv[static_cast<std::size_t>(ch)] - meanf * scale;
        for (int p = 0; p < hw; ++p) {
          const std::size_t j = static_cast<std::size_t>(cc) * hw + p;
          ys[j] = xs[j] * scale + shift;
        }
      }
    }
  }
  return tape.record(std::move(out), {x.id, gamma.id, beta.id}, [n, c, hw, groups, cpg, group_size, stats](Tape& t, int self) {
    const auto& in = t.inputs(self);
    const Tensor& xv = t.value(in[0]);
    const Tensor& gv = t.value(in[1]);
    const Tensor& dy = t.grad(self);
    const bool need_x = t.needs_grad(in[0]), need_g = t.needs_grad(in[1]), need_b = t.needs_grad(in[2]);
    std::vector<float> xhat(group_size), dxhat(group_size);
    for (int i = 0; i < n; ++i) {
      for (int gi = 0; gi < groups; ++gi) {
        const std::size_t base = (static_cast<std::size_t>(i) * c + static_cast<std::size_t>(gi) * cpg) * hw;
        const float mean = (*stats)[(static_cast<std::size_t>(i) * groups + gi) * 2];
        const float rstd = (*stats)[(static_cast<std::size_t>(i) * groups + gi) * 2 + 1];
        const float* xs = xv.ptr() + base;
        const float* dys = dy.ptr() + base;
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int cc = 0; cc < cpg; ++cc) {
          const int ch = gi * cpg + cc;
          double dgamma = 0.0, dbeta = 0.0;
          for (int p = 0; p < hw; ++p) {
            const std::size_t j = static_cast<std::size_t>(cc) * hw + p;
            xhat[j] = (xs[j] - mean) * rstd;
            dxhat[j] = dys[j] * gv[static_cast<std::size_t>(ch)];
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += static_cast<double>(dxhat[j]) * xhat[j];
            dgamma += static_cast<double>(dys[j]) * xhat[j];
            dbeta += dys[j];
          }
          if (need_g) t.grad(in[1])[static_cast<std::size_t>(ch)] += static_cast<float>(dgamma);
          if (need_b) t.grad(in[2])[static_cast<std::size_t>(ch)] += static_cast<float>(dbeta);
        }
        if (!need_x) continue;
        const float m1 = static_cast<float>(sum_dxhat / static_cast<double>(group_size));
        const float m2 = static_cast<float>(sum_dxhat_xhat / static_cast<double>(group_size));
        float* dx = t.grad(in[0]).ptr() + base;
        for (std::size_t j = 0; j < group_size; ++j) dx[j] += rstd * (dxhat[j] - m1 - xhat[j] * m2);
      }
    }
  });
}

Var silu(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * sigmoidf(xv[i]);
  return tape.record(std::move(out), {x.id}, [](Tape& t, int self) {
    const int xi = t.inputs(self)[0];
    const Tensor& xv = t.value(xi);
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(xi);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const float s = sigmoidf(xv[i]);
      dx[i] += dy[i] * s * (1.0f + xv[i] * (1.0f - s));
    }
  });
}

Var sigmoid(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = sigmoidf(xv[i]);
  return tape.record(std::move(out), {x.id}, [](Tape& t, int self) {
    const int xi = t.inputs(self)[0];
    const Tensor& y = t.value(self);
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(xi);
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * y[i] * (1.0f - y[i]);
  });
}

Var upsample_nearest2x(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  require_rank("upsample_nearest2x", "input", xv, 4);
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) out.at(i, ch, y, xx) = xv.at(i, ch, y / 2, xx / 2);
  return tape.record(std::move(out), {x.id}, [n, c, h, w](Tape& t, int self) {
    const int xi = t.inputs(self)[0];
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(xi);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            dx.at(i, ch, y, xx) += dy.at(i, ch, 2 * y, 2 * xx) + dy.at(i, ch, 2 * y, 2 * xx + 1) +
                                   dy.at(i, ch, 2 * y + 1, 2 * xx) + dy.at(i, ch, 2 * y + 1, 2 * xx + 1);
          }
  });
}

Var concat_channels(Tape& tape, Var a, Var b) {
  constexpr std::string_view op = "concat_channels";
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_rank(op, "first input", av, 4);
  require_rank(op, "second input", bv, 4);
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    shape_fail(op, "batch/spatial dims differ: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
  for (int i = 0; i < n; ++i) {
    const float* pa = av.ptr() + static_cast<std::size_t>(i) * ca * hw;
    const float* pb = bv.ptr() + static_cast<std::size_t>(i) * cb * hw;
    float* po = out.ptr() + static_cast<std::size_t>(i) * (ca + cb) * hw;
    std::copy(pa, pa + ca * hw, po);
    std::copy(pb, pb + cb * hw, po + ca * hw);
  }
  return tape.record(std::move(out), {a.id, b.id}, [n, ca, cb, hw](Tape& t, int self) {
    const auto& in = t.inputs(self);
    const Tensor& dy = t.grad(self);
    for (int i = 0; i < n; ++i) {
      const float* po = dy.ptr() + static_cast<std::size_t>(i) * (ca + cb) * hw;
      if (t.needs_grad(in[0])) {
        float* da = t.grad(in[0]).ptr() + static_cast<std::size_t>(i) * ca * hw;
        for (std::size_t j = 0; j < ca * hw; ++j) da[j] += po[j];
      }
      if (t.needs_grad(in[1])) {
        float* db = t.grad(in[1]).ptr() + static_cast<std::size_t>(i) * cb * hw;
        for (std::size_t j = 0; j < cb * hw; ++j) db[j] += po[ca * hw + j];
      }
    }
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.shape() != bv.shape()) shape_fail("add", shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(std::move(out), {a.id, b.id}, [](Tape& t, int self) {
    const auto& in = t.inputs(self);
    const Tensor& dy = t.grad(self);
    if (t.needs_grad(in[0])) add_into(t.grad(in[0]), dy.data());
    if (t.needs_grad(in[1])) add_into(t.grad(in[1]), dy.data());
  });
}

Var add_channel_bias(Tape& tape, Var x, Var v) {
  constexpr std::string_view op = "add_channel_bias";
  const Tensor& xv = tape.value(x);
  const Tensor& vv = tape.value(v);
  require_rank(op, "input", xv, 4);
  require_rank(op, "bias", vv, 2);
  if (vv.dim(0) != xv.dim(0) || vv.dim(1) != xv.dim(1)) {
    shape_fail(op, "bias " + shape_str(vv.shape()) + " does not match [N, C] of " + shape_str(xv.shape()));
  }
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor out(xv.shape());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      const float b = vv[static_cast<std::size_t>(i) * c + ch];
      for (std::size_t p = 0; p < hw; ++p) out[base + p] = xv[base + p] + b;
    }
  return tape.record(std::move(out), {x.id, v.id}, [n, c, hw](Tape& t, int self) {
    const auto& in = t.inputs(self);
    const Tensor& dy = t.grad(self);
    if (t.needs_grad(in[0])) add_into(t.grad(in[0]), dy.data());
    if (t.needs_grad(in[1])) {
      Tensor& dv = t.grad(in[1]);
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
          double s = 0.0;
          for (std::size_t p = 0; p < hw; ++p) s += dy[base + p];
          dv[static_cast<std::size_t>(i) * c + ch] += static_cast<float>(s);
        }
    }
  });
}

Var scale(Tape& tape, Var x, float factor) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
  return tape.record(std::move(out), {x.id}, [factor](Tape& t, int self) {
    const int xi = t.inputs(self)[0];
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * factor;
  });
}

Var sum(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  double s = 0.0;
  for (float v : xv.data()) s += v;
  return tape.record(Tensor::scalar(static_cast<float>(s)), {x.id}, [](Tape& t, int self) {
    const int xi = t.inputs(self)[0];
    const float g = t.grad(self)[0];
    for (auto& v : t.grad(xi).data()) v += g;
  });
}

Var mse(Tape& tape, Var prediction, Var target) {
  const Tensor& pv = tape.value(prediction);
  const Tensor& tv = tape.value(target);
  if (pv.shape() != tv.shape()) shape_fail("mse", shape_str(pv.shape()) + " vs " + shape_str(tv.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = static_cast<double>(pv[i]) - tv[i];
    s += d * d;
  }
  const double count = static_cast<double>(pv.size());
  return tape.record(Tensor::scalar(static_cast<float>(s / count)), {prediction.id, target.id},
                     [count](Tape& t, int self) {
                       const auto& in = t.inputs(self);
                       const Tensor& pv = t.value(in[0]);
                       const Tensor& tv = t.value(in[1]);
                       const float g = static_cast<float>(2.0 * t.grad(self)[0] / count);
                       const bool need_p = t.needs_grad(in[0]), need_t = t.needs_grad(in[1]);
                       for (std::size_t i = 0; i < pv.size(); ++i) {
                         const float d = g * (pv[i] - tv[i]);
                         if (need_p) t.grad(in[0])[i] += d;
                         if (need_t) t.grad(in[1])[i] -= d;
                       }
                     });
}

Var dice_bce_loss(Tape& tape, Var logits, Var target, float dice_weight) {
  constexpr std::string_view op = "dice_bce_loss";
  constexpr double kSmooth = 1.0;
  const Tensor& lv = tape.value(logits);
  const Tensor& tv = tape.value(target);
  require_rank(op, "logits", lv, 4);
  if (lv.shape() != tv.shape()) shape_fail(op, shape_str(lv.shape()) + " vs " + shape_str(tv.shape()));
  const int n = lv.dim(0);
  const std::size_t per = lv.size() / static_cast<std::size_t>(n);
  double bce = 0.0, dice_sum = 0.0;
  auto sums = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * 2);
  for (int i = 0; i < n; ++i) {
    double inter = 0.0, total = 0.0;
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * per + j;
      const double l = lv[k], y = tv[k];
      bce += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
      const double p = 1.0 / (1.0 + std::exp(-l));
      inter += p * y;
      total += p + y;
    }
    (*sums)[static_cast<std::size_t>(i) * 2] = inter;
    (*sums)[static_cast<std::size_t>(i) * 2 + 1] = total;
    dice_sum += (2.0 * inter + kSmooth) / (total + kSmooth);
  }
  const double count = static_cast<double>(lv.size());
  const double loss = bce / count + dice_weight * (1.0 - dice_sum / n);
  return tape.record(Tensor::scalar(static_cast<float>(loss)), {logits.id, target.id},
                     [n, per, count, dice_weight, sums](Tape& t, int self) {
                       const auto& in = t.inputs(self);
                       if (!t.needs_grad(in[0])) return;
                       const Tensor& lv = t.value(in[0]);
                       const Tensor& tv = t.value(in[1]);
                       const double g = t.grad(self)[0];
                       Tensor& dl = t.grad(in[0]);
                       for (int i = 0; i < n; ++i) {
                         const double inter = (*sums)[static_cast<std::size_t>(i) * 2];
                         const double denom = (*sums)[static_cast<std::size_t>(i) * 2 + 1] + kSmooth;
                         for (std::size_t j = 0; j < per; ++j) {
                           const std::size_t k = static_cast<std::size_t>(i) * per + j;
                           const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(lv[k])));
                           const double y = tv[k];
                           const double d_bce = (p - y) / count;
                           const double d_dice_dp = (2.0 * y * denom - (2.0 * inter + kSmooth)) / (denom * denom);
                           const double d_loss_dp = -dice_weight * d_dice_dp / n;
                           dl[k] += static_cast<float>(g * (d_bce + d_loss_dp * p * (1.0 - p)));
                         }
                       }
                     });
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kLinear: return "linear";
    case OpKind::kGroupNorm: return "group_norm";
    case OpKind::kSilu: return "silu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kUpsampleNearest2x: return "upsample_nearest2x";
    case OpKind::kConcatChannels: return "concat_channels";
    case OpKind::kAdd: return "add";
    case OpKind::kAddChannelBias: return "add_channel_bias";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kMse: return "mse";
    case OpKind::kDiceBceLoss: return "dice_bce_loss";
  }
  return "unknown";
}

Var op_forward(Tape& tape, OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs) {
  auto arity = [&](std::size_t expected) {
    if (inputs.size() != expected) {
      shape_fail(op_name(kind), "expects " + std::to_string(expected) + " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::kConv2d: arity(3); return conv2d(tape, inputs[0], inputs[1], inputs[2], attrs.conv);
    case OpKind::kLinear: arity(3); return linear(tape, inputs[0], inputs[1], inputs[2]);
    case OpKind::kGroupNorm: arity(3); return group_norm(tape, inputs[0], inputs[1], inputs[2], attrs.groups, attrs.eps);
    case OpKind::kSilu: arity(1); return silu(tape, inputs[0]);
    case OpKind::kSigmoid: arity(1); return sigmoid(tape, inputs[0]);
    case OpKind::kUpsampleNearest2x: arity(1); return upsample_nearest2x(tape, inputs[0]);
    case OpKind::kConcatChannels: arity(2); return concat_channels(tape, inputs[0], inputs[1]);
    case OpKind::kAdd: arity(2); return add(tape, inputs[0], inputs[1]);
    case OpKind::kAddChannelBias: arity(2); return add_channel_bias(tape, inputs[0], inputs[1]);
    case OpKind::kScale: arity(1); return scale(tape, inputs[0], attrs.factor);
    case OpKind::kSum: arity(1); return sum(tape, inputs[0]);
    case OpKind::kMse: arity(2); return mse(tape, inputs[0], inputs[1]);
    case OpKind::kDiceBceLoss: arity(2); return dice_bce_loss(tape, inputs[0], inputs[1], attrs.factor);
  }
  throw ArgumentError("op_forward: unknown op kind");
}

}  // namespace pddpm::nn
