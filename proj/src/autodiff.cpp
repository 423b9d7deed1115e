#include "mgan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace mgan {

const Tensor& Var::value() const { return tape_->value(id_); }
std::span<const double> Var::grad() const { return tape_->grad(id_); }
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const Tensor& param, bool track) {
  Tensor copy(param.shape(), param.storage());
  nodes_.push_back(Node{std::move(copy), {}, nullptr, track, track ? &param : nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw StateError("operation mixes values from different tapes");
    needs = needs || nodes_[static_cast<std::size_t>(p.id_)].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : nullptr, needs, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

std::span<const double> Tape::grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.grad;
}

double* Tape::grad_sink(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(n.value.size()), 0.0);
  return n.grad.data();
}

void Tape::backward(const Var& root) {
  if (root.tape_ != this) throw StateError("backward root belongs to another tape");
  if (root.value().size() != 1) throw DimensionError("backward root must be a scalar, got shape " + shape_string(root.shape()));
  for (Node& n : nodes_) n.grad.clear();
  double* seed = grad_sink(root.id_);
  if (!seed) return;
  seed[0] = 1.0;
  for (int id = root.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      auto& g = n.param->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
}

namespace ops {
namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_rank(const Var& x, int rank, const char* op, const char* what) {
  if (x.value().rank() != rank)
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
}

template <typename F>
Var unary(const Var& x, F&& forward_and_derivative) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto deriv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(xv.size()));
  for (Index i = 0; i < xv.size(); ++i) {
    auto [y, d] = forward_and_derivative(xv[i]);
    out[i] = y;
    (*deriv)[static_cast<std::size_t>(i)] = d;
  }
  const int xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi, deriv](Tape& t, int self) {
    double* gx = t.grad_sink(xi);
    if (!gx) return;
    auto gy = t.grad(self);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (*deriv)[i];
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  out.vector() = a.value().vector() + b.value().vector();
  const int ai = a.id(), bi = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ai, bi](Tape& t, int self) {
    auto gy = t.grad(self);
    for (int pid : {ai, bi})
      if (double* g = t.grad_sink(pid))
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
  });
}

Var affine(const Var& x, double scale, double shift) {
  return unary(x, [=](double v) { return std::pair{scale * v + shift, scale}; });
}

Var sum(const Var& x) {
  Tensor out(Shape{1});
  out[0] = x.value().vector().sum();
  const int xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi](Tape& t, int self) {
    double* gx = t.grad_sink(xi);
    if (!gx) return;
    const double g = t.grad(self)[0];
    const auto n = static_cast<std::size_t>(t.value(xi).size());
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return affine(sum(x), 1.0 / n, 0.0);
}

Var reshape(const Var& x, Shape shape) {
  if (shape_product(shape) != x.value().size())
    throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  Tensor out = x.value().reshaped(std::move(shape));
  const int xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi](Tape& t, int self) {
    double* gx = t.grad_sink(xi);
    if (!gx) return;
    auto gy = t.grad(self);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var repeat_batch(const Var& x, Index n) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || xv.dim(0) != 1) throw DimensionError("repeat_batch: leading axis must be 1, got " + shape_string(xv.shape()));
  Shape shape = xv.shape();
  shape[0] = n;
  Tensor out(shape);
  const Index block = xv.size();
  for (Index b = 0; b < n; ++b) std::copy(xv.data(), xv.data() + block, out.data() + b * block);
  const int xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi, n, block](Tape& t, int self) {
    double* gx = t.grad_sink(xi);
    if (!gx) return;
    auto gy = t.grad(self);
    for (Index b = 0; b < n; ++b)
      for (Index i = 0; i < block; ++i) gx[i] += gy[static_cast<std::size_t>(b * block + i)];
  });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(x, [=](double v) { return v > 0 ? std::pair{v, 1.0} : std::pair{slope * v, slope}; });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) {
    const double y = std::tanh(v);
    return std::pair{y, 1.0 - y * y};
  });
}

Var sigmoid(const Var& x) {
  return unary(x, [](double v) {
    const double y = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return std::pair{y, y * (1.0 - y)};
  });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return std::pair{v * v, 2.0 * v}; });
}

Var log_clamped(const Var& x, double floor) {
  return unary(x, [=](double v) {
    if (std::isnan(v)) return std::pair{v, v};
    return v > floor ? std::pair{std::log(v), 1.0 / v} : std::pair{std::log(floor), 0.0};
  });
}

Var dense(const Var& input, const Var& weight, const Var& bias) {
  require_rank(input, 2, "dense", "input");
  require_rank(weight, 2, "dense", "weight");
  const Index n = input.shape()[0], d = input.shape()[1], e = weight.shape()[1];
  if (weight.shape()[0] != d)
    throw DimensionError("dense: input axis 1 (" + std::to_string(d) + ") does not match weight axis 0 (" +
                         std::to_string(weight.shape()[0]) + ")");
  if (bias.value().size() != e)
    throw DimensionError("dense: bias length " + std::to_string(bias.value().size()) + " does not match weight axis 1 (" +
                         std::to_string(e) + ")");
  Tensor out(Shape{n, e});
  auto y = out.matrix(n, e);
  y.noalias() = input.value().matrix(n, d) * weight.value().matrix(d, e);
  y.rowwise() += bias.value().vector().transpose();
  const int xi = input.id(), wi = weight.id(), bi = bias.id();
  return input.tape()->record(std::move(out), {input, weight, bias}, [=](Tape& t, int self) {
    Eigen::Map<const RowMatrix<double>> gy(t.grad(self).data(), n, e);
    if (double* gx = t.grad_sink(xi))
      Eigen::Map<RowMatrix<double>>(gx, n, d).noalias() += gy * t.value(wi).matrix(d, e).transpose();
    if (double* gw = t.grad_sink(wi))
      Eigen::Map<RowMatrix<double>>(gw, d, e).noalias() += t.value(xi).matrix(n, d).transpose() * gy;
    if (double* gb = t.grad_sink(bi)) Eigen::Map<Vector<double>>(gb, e) += gy.colwise().sum().transpose();
  });
}

namespace {

struct ConvGeometry {
  Index c, h, w, f, kh, kw, ho, wo;
  int stride, pad;
  Index patch() const { return c * kh * kw; }
  Index out_pixels() const { return ho * wo; }
};

// col is [C*kh*kw, Ho*Wo], row-major.
// Output columns [lo, hi) whose input column ox*stride - pad + kj is in range.
std::pair<Index, Index> valid_range(Index kj, const ConvGeometry& g) {
  Index lo = 0, hi = g.wo;
  while (lo < hi && lo * g.stride - g.pad + kj < 0) ++lo;
  while (hi > lo && (hi - 1) * g.stride - g.pad + kj >= g.w) --hi;
  return {lo, hi};
}

void im2col(const double* x, const ConvGeometry& g, double* col) {
  const Index opix = g.out_pixels();
  for (Index c = 0; c < g.c; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * opix;
        const double* plane = x + c * g.h * g.w;
        const auto [lo, hi] = valid_range(kj, g);
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            for (Index ox = 0; ox < g.wo; ++ox) dst[ox] = 0.0;
            continue;
          }
          for (Index ox = 0; ox < lo; ++ox) dst[ox] = 0.0;
          for (Index ox = hi; ox < g.wo; ++ox) dst[ox] = 0.0;
          const double* src = plane + iy * g.w - g.pad + kj;
          if (g.stride == 1)
            std::copy(src + lo, src + hi, dst + lo);
          else
            for (Index ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
        }
      }
}

void col2im(const double* col, const ConvGeometry& g, double* x) {
  const Index opix = g.out_pixels();
  for (Index c = 0; c < g.c; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * opix;
        double* plane = x + c * g.h * g.w;
        const auto [lo, hi] = valid_range(kj, g);
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.wo;
          double* dst = plane + iy * g.w - g.pad + kj;
          for (Index ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
        }
      }
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, int stride, int pad) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) throw DimensionError("conv2d: pad must be >= 0, got " + std::to_string(pad));
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (ks[1] != xs[1])
    throw DimensionError("conv2d: channel axis mismatch, input C=" + std::to_string(xs[1]) + " kernel C=" + std::to_string(ks[1]));
  if (ks[2] > xs[2] + 2 * pad) throw DimensionError("conv2d: kernel height exceeds padded input height (axis 2)");
  if (ks[3] > xs[3] + 2 * pad) throw DimensionError("conv2d: kernel width exceeds padded input width (axis 3)");
  ConvGeometry g{xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], 0, 0, stride, pad};
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  const Index n = xs[0];
  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;

  Tensor out(Shape{n, g.f, g.ho, g.wo});
  auto k = kernel.value().matrix(g.f, g.patch());
  // Columns are rebuilt per sample in the backward pass rather than cached for the whole batch.
  std::vector<double> scratch(pointwise ? 0 : static_cast<std::size_t>(g.patch() * g.out_pixels()));
  const Index in_stride = g.c * g.h * g.w;
  const Index out_stride = g.f * g.out_pixels();
  for (Index b = 0; b < n; ++b) {
    const double* xb = input.value().data() + b * in_stride;
    const double* colb = xb;
    if (!pointwise) {
      im2col(xb, g, scratch.data());
      colb = scratch.data();
    }
    Eigen::Map<RowMatrix<double>>(out.data() + b * out_stride, g.f, g.out_pixels()).noalias() =
        k * Eigen::Map<const RowMatrix<double>>(colb, g.patch(), g.out_pixels());
  }

  const int xi = input.id(), ki = kernel.id();
  return input.tape()->record(std::move(out), {input, kernel}, [=](Tape& t, int self) {
    const double* gy_all = t.grad(self).data();
    double* gk = t.grad_sink(ki);
    double* gx = t.grad_sink(xi);
    auto kmat = t.value(ki).matrix(g.f, g.patch());
    std::vector<double> dcol(pointwise ? 0 : static_cast<std::size_t>(g.patch() * g.out_pixels()));
    std::vector<double> colbuf(gk && !pointwise ? dcol.size() : 0);
    for (Index b = 0; b < n; ++b) {
      Eigen::Map<const RowMatrix<double>> gy(gy_all + b * out_stride, g.f, g.out_pixels());
      if (gk) {
        const double* colb = t.value(xi).data() + b * in_stride;
        if (!pointwise) {
          im2col(colb, g, colbuf.data());
          colb = colbuf.data();
        }
        Eigen::Map<RowMatrix<double>>(gk, g.f, g.patch()).noalias() +=
            gy * Eigen::Map<const RowMatrix<double>>(colb, g.patch(), g.out_pixels()).transpose();
      }
      if (gx) {
        if (pointwise) {
          Eigen::Map<RowMatrix<double>>(gx + b * in_stride, g.patch(), g.out_pixels()).noalias() += kmat.transpose() * gy;
        } else {
          Eigen::Map<RowMatrix<double>>(dcol.data(), g.patch(), g.out_pixels()).noalias() = kmat.transpose() * gy;
          col2im(dcol.data(), g, gx + b * in_stride);
        }
      }
    }
  });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank(x, 4, "add_channel_bias", "input");
  const Index n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  if (bias.value().size() != c)
    throw DimensionError("add_channel_bias: bias length " + std::to_string(bias.value().size()) + " vs channel axis 1 (" +
                         std::to_string(c) + ")");
  Tensor out = x.value().reshaped(x.shape());
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      double* p = out.data() + (b * c + ch) * hw;
      const double v = bias.value()[ch];
      for (Index i = 0; i < hw; ++i) p[i] += v;
    }
  const int xi = x.id(), bi = bias.id();
  return x.tape()->record(std::move(out), {x, bias}, [=](Tape& t, int self) {
    auto gy = t.grad(self);
    if (double* gx = t.grad_sink(xi))
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    if (double* gb = t.grad_sink(bi))
      for (Index b = 0; b < n; ++b)
        for (Index ch = 0; ch < c; ++ch) {
          const double* p = gy.data() + (b * c + ch) * hw;
          double s = 0;
          for (Index i = 0; i < hw; ++i) s += p[i];
          gb[ch] += s;
        }
  });
}

Var upsample2x(const Var& x) {
  require_rank(x, 4, "upsample2x", "input");
  const Shape& s = x.shape();
  const Index planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor out(Shape{s[0], s[1], 2 * h, 2 * w});
  const double* src = x.value().data();
  double* dst = out.data();
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < 2 * h; ++y)
      for (Index xo = 0; xo < 2 * w; ++xo) dst[(p * 2 * h + y) * 2 * w + xo] = src[(p * h + y / 2) * w + xo / 2];
  const int xi = x.id();
  return x.tape()->record(std::move(out), {x}, [=](Tape& t, int self) {
    double* gx = t.grad_sink(xi);
    if (!gx) return;
    const double* gy = t.grad(self).data();
    for (Index p = 0; p < planes; ++p)
      for (Index y = 0; y < 2 * h; ++y)
        for (Index xo = 0; xo < 2 * w; ++xo) gx[(p * h + y / 2) * w + xo / 2] += gy[(p * 2 * h + y) * 2 * w + xo];
  });
}

Var add_noise(const Var& x, const Tensor& noise, const Var& gain) {
  require_rank(x, 4, "add_noise", "input");
  const Index n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  if (noise.shape() != Shape{n, 1, x.shape()[2], x.shape()[3]})
    throw DimensionError("add_noise: noise shape " + shape_string(noise.shape()) + " vs input " + shape_string(x.shape()));
  if (gain.value().size() != c) throw DimensionError("add_noise: gain length does not match channel axis 1");
  Tensor out = x.value().reshaped(x.shape());
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const double gv = gain.value()[ch];
      double* p = out.data() + (b * c + ch) * hw;
      const double* z = noise.data() + b * hw;
      for (Index i = 0; i < hw; ++i) p[i] += gv * z[i];
    }
  auto noise_copy = std::make_shared<Tensor>(noise);
  const int xi = x.id(), gi = gain.id();
  return x.tape()->record(std::move(out), {x, gain}, [=](Tape& t, int self) {
    auto gy = t.grad(self);
    if (double* gx = t.grad_sink(xi))
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    if (double* gg = t.grad_sink(gi))
      for (Index b = 0; b < n; ++b)
        for (Index ch = 0; ch < c; ++ch) {
          const double* p = gy.data() + (b * c + ch) * hw;
          const double* z = noise_copy->data() + b * hw;
          double s = 0;
          for (Index i = 0; i < hw; ++i) s += p[i] * z[i];
          gg[ch] += s;
        }
  });
}

Var adaptive_instance_norm(const Var& x, const Var& style, double eps) {
  require_rank(x, 4, "adaptive_instance_norm", "input");
  require_rank(style, 2, "adaptive_instance_norm", "style");
  const Index n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  if (style.shape() != Shape{n, 2 * c})
    throw DimensionError("adaptive_instance_norm: style shape " + shape_string(style.shape()) + " expected [" +
                         std::to_string(n) + "," + std::to_string(2 * c) + "]");
  auto normed = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.value().size()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * c));
  Tensor out(x.shape());
  const double* s = style.value().data();
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const Index base = (b * c + ch) * hw;
      const double* p = x.value().data() + base;
      double mu = 0;
      for (Index i = 0; i < hw; ++i) mu += p[i];
      mu /= static_cast<double>(hw);
      double var = 0;
      for (Index i = 0; i < hw; ++i) var += (p[i] - mu) * (p[i] - mu);
      var /= static_cast<double>(hw);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(b * c + ch)] = is;
      const double scale = 1.0 + s[b * 2 * c + ch], shift = s[b * 2 * c + c + ch];
      for (Index i = 0; i < hw; ++i) {
        const double xh = (p[i] - mu) * is;
        (*normed)[static_cast<std::size_t>(base + i)] = xh;
        out[base + i] = xh * scale + shift;
      }
    }
  const int xi = x.id(), si = style.id();
  return x.tape()->record(std::move(out), {x, style}, [=](Tape& t, int self) {
    const double* gy = t.grad(self).data();
    double* gx = t.grad_sink(xi);
    double* gs = t.grad_sink(si);
    const double* sv = t.value(si).data();
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        const Index base = (b * c + ch) * hw;
        const double* xh = normed->data() + base;
        double sum_g = 0, sum_gx = 0;
        for (Index i = 0; i < hw; ++i) {
          sum_g += gy[base + i];
          sum_gx += gy[base + i] * xh[i];
        }
        if (gs) {
          gs[b * 2 * c + ch] += sum_gx;
          gs[b * 2 * c + c + ch] += sum_g;
        }
        if (gx) {
          const double scale = 1.0 + sv[b * 2 * c + ch];
          const double is = (*inv_std)[static_cast<std::size_t>(b * c + ch)];
          const double m_g = scale * sum_g / static_cast<double>(hw);
          const double m_gx = scale * sum_gx / static_cast<double>(hw);
          for (Index i = 0; i < hw; ++i) gx[base + i] += is * (scale * gy[base + i] - m_g - xh[i] * m_gx);
        }
      }
  });
}

}  // namespace ops
}  // namespace mgan
