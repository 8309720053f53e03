#include "lap/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "lap/errors.hpp"

namespace lap::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void conformance(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                   " do not conform");
}

void require_rank(const char* op, const Var& x, int rank) {
  if (x.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

int normalize_axis(const char* op, const Shape& shape, int axis) {
  const int r = static_cast<int>(shape.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                     shape_str(shape));
  }
  return axis;
}

// Splits a shape around one axis into outer x axis x inner.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[i]);
  s.extent = static_cast<std::size_t>(shape[axis]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) {
    s.inner *= static_cast<std::size_t>(shape[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  Shape out;
  std::array<std::size_t, 4> extent{1, 1, 1, 1};
  std::array<std::size_t, 4> stride_a{0, 0, 0, 0};
  std::array<std::size_t, 4> stride_b{0, 0, 0, 0};
  bool same = false;
};

std::array<std::size_t, 4> padded_strides(const Shape& s, const std::array<std::size_t, 4>& out_extent) {
  std::array<std::size_t, 4> ext{1, 1, 1, 1};
  const std::size_t off = 4 - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) ext[off + i] = static_cast<std::size_t>(s[i]);
  std::array<std::size_t, 4> stride{};
  std::size_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    stride[i] = (ext[i] == 1 && out_extent[i] != 1) ? 0 : acc;
    acc *= ext[i];
  }
  return stride;
}

Broadcast make_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t r = std::max(a.size(), b.size());
  bc.out.assign(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const int ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) conformance(op, a, b);
    bc.out[i] = std::max(ea, eb);
  }
  for (std::size_t i = 0; i < r; ++i) bc.extent[4 - r + i] = static_cast<std::size_t>(bc.out[i]);
  bc.stride_a = padded_strides(a, bc.extent);
  bc.stride_b = padded_strides(b, bc.extent);
  return bc;
}

// Calls fn(out_index, a_index, b_index) over the broadcast iteration space.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < bc.extent[0]; ++i0) {
    for (std::size_t i1 = 0; i1 < bc.extent[1]; ++i1) {
      for (std::size_t i2 = 0; i2 < bc.extent[2]; ++i2) {
        std::size_t ia = i0 * bc.stride_a[0] + i1 * bc.stride_a[1] + i2 * bc.stride_a[2];
        std::size_t ib = i0 * bc.stride_b[0] + i1 * bc.stride_b[1] + i2 * bc.stride_b[2];
        for (std::size_t i3 = 0; i3 < bc.extent[3]; ++i3, ++o) {
          fn(o, ia, ib);
          ia += bc.stride_a[3];
          ib += bc.stride_b[3];
        }
      }
    }
  }
}

// Binary op with forward f(a,b) and partials da(a,b,y), db(a,b,y).
template <typename F, typename DA, typename DB>
Var binary(const char* op, const Var& a, const Var& b, F f, DA da, DB db) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": inputs on different tapes");
  Broadcast bc = make_broadcast(op, a.shape(), b.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(av[i], bv[i]);
  } else {
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = f(av[ia], bv[ib]); });
  }
  Tape* tape = &a.tape();
  const NodeId ida = a.id(), idb = b.id();
  return tape->record(std::move(out), {a, b},
                      [tape, ida, idb, bc, da, db](const Tensor& g, std::span<Tensor* const> gin) {
                        const Tensor& av = tape->value(ida);
                        const Tensor& bv = tape->value(idb);
                        if (bc.same) {
                          for (std::size_t i = 0; i < g.numel(); ++i) {
                            if (gin[0]) (*gin[0])[i] += g[i] * da(av[i], bv[i]);
                            if (gin[1]) (*gin[1])[i] += g[i] * db(av[i], bv[i]);
                          }
                          return;
                        }
                        for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                          if (gin[0]) (*gin[0])[ia] += g[o] * da(av[ia], bv[ib]);
                          if (gin[1]) (*gin[1])[ib] += g[o] * db(av[ia], bv[ib]);
                        });
                      });
}

// Unary op; derivative receives input and output values.
template <typename F, typename D>
Var unary(const Var& x, F f, D d) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  Tape* tape = &x.tape();
  const NodeId idx = x.id();
  const NodeId self = tape->next_id();
  return tape->record(std::move(out), {x}, [tape, idx, self, d](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& xv = tape->value(idx);
    const Tensor& yv = tape->value(self);
    Tensor& gx = *gin[0];
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * d(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  return binary(
      "add", a, b, [](double p, double q) { return p + q; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      "subtract", a, b, [](double p, double q) { return p - q; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      "multiply", a, b, [](double p, double q) { return p * q; }, [](double, double q) { return q; },
      [](double p, double) { return p; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      "divide", a, b, [](double p, double q) { return p / q; }, [](double, double q) { return 1.0 / q; },
      [](double p, double q) { return -p / (q * q); });
}

Var add_scalar(const Var& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var scale(const Var& x, double c) {
  return unary(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Var neg(const Var& x) { return scale(x, -1.0); }

Var abs(const Var& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(const Var& x) {
  for (double v : x.value().data()) {
    if (v < 0.0 || std::isnan(v)) throw DomainError("sqrt: negative input " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sin(const Var& x) {
  return unary(x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Var cos(const Var& x) {
  return unary(x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Var sigmoid(const Var& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var pow(const Var& x, double p) {
  if (p != std::floor(p)) {
    for (double v : x.value().data()) {
      if (v < 0.0) throw DomainError("pow: negative base with non-integer exponent");
    }
  }
  return unary(
      x, [p](double v) { return std::pow(v, p); }, [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

Var clamp(const Var& x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [](const Tensor& g, std::span<Tensor* const> gin) {
    for (double& v : gin[0]->data()) v += g[0];
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s / n), {x}, [n](const Tensor& g, std::span<Tensor* const> gin) {
    const double d = g[0] / n;
    for (double& v : gin[0]->data()) v += d;
  });
}

Var max(const Var& x) {
  const auto& d = x.value().storage();
  const auto it = std::max_element(d.begin(), d.end());
  const auto arg = static_cast<std::size_t>(it - d.begin());
  return x.tape().record(Tensor::scalar(*it), {x},
                         [arg](const Tensor& g, std::span<Tensor* const> gin) { (*gin[0])[arg] += g[0]; });
}

namespace {

Shape reduced_shape(const Shape& s, int axis) {
  Shape out = s;
  out[static_cast<std::size_t>(axis)] = 1;
  return out;
}

}  // namespace

Var sum(const Var& x, int axis) {
  axis = normalize_axis("sum", x.shape(), axis);
  const AxisSplit sp = split_at(x.shape(), axis);
  const Tensor& xv = x.value();
  Tensor out(reduced_shape(x.shape(), axis));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.extent; ++k) {
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xv[(o * sp.extent + k) * sp.inner + i];
    }
  }
  return x.tape().record(std::move(out), {x}, [sp](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& gx = *gin[0];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t k = 0; k < sp.extent; ++k) {
        for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.extent + k) * sp.inner + i] += g[o * sp.inner + i];
      }
    }
  });
}

Var mean(const Var& x, int axis) {
  axis = normalize_axis("mean", x.shape(), axis);
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Var max(const Var& x, int axis) {
  axis = normalize_axis("max", x.shape(), axis);
  const AxisSplit sp = split_at(x.shape(), axis);
  const Tensor& xv = x.value();
  Tensor out(reduced_shape(x.shape(), axis));
  std::vector<std::size_t> arg(out.numel());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.extent * sp.inner + i;
      for (std::size_t k = 1; k < sp.extent; ++k) {
        const std::size_t idx = (o * sp.extent + k) * sp.inner + i;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[o * sp.inner + i] = xv[best];
      arg[o * sp.inner + i] = best;
    }
  }
  return x.tape().record(std::move(out), {x}, [arg = std::move(arg)](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t j = 0; j < arg.size(); ++j) (*gin[0])[arg[j]] += g[j];
  });
}

Var softmax(const Var& x, int axis) {
  axis = normalize_axis("softmax", x.shape(), axis);
  const AxisSplit sp = split_at(x.shape(), axis);
  const Tensor& xv = x.value();
  Tensor out(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.extent; ++k) m = std::max(m, xv[(o * sp.extent + k) * sp.inner + i]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.extent; ++k) {
        const std::size_t idx = (o * sp.extent + k) * sp.inner + i;
        out[idx] = std::exp(xv[idx] - m);
        z += out[idx];
      }
      for (std::size_t k = 0; k < sp.extent; ++k) out[(o * sp.extent + k) * sp.inner + i] /= z;
    }
  }
  Tape* tape = &x.tape();
  const NodeId self = tape->next_id();
  return tape->record(std::move(out), {x}, [tape, self, sp](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& yv = tape->value(self);
    Tensor& gx = *gin[0];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.extent; ++k) {
          const std::size_t idx = (o * sp.extent + k) * sp.inner + i;
          dot += g[idx] * yv[idx];
        }
        for (std::size_t k = 0; k < sp.extent; ++k) {
          const std::size_t idx = (o * sp.extent + k) * sp.inner + i;
          gx[idx] += yv[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(0)) {
    conformance("matmul", a.shape(), b.shape());
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  MapMat(out.data().data(), m, n).noalias() =
      CMapMat(a.value().data().data(), m, k) * CMapMat(b.value().data().data(), k, n);
  Tape* tape = &a.tape();
  const NodeId ida = a.id(), idb = b.id();
  return tape->record(std::move(out), {a, b}, [tape, ida, idb, m, k, n](const Tensor& g, std::span<Tensor* const> gin) {
    CMapMat gm(g.data().data(), m, n);
    if (gin[0]) MapMat(gin[0]->data().data(), m, k).noalias() += gm * CMapMat(tape->value(idb).data().data(), k, n).transpose();
    if (gin[1]) MapMat(gin[1]->data().data(), k, n).noalias() += CMapMat(tape->value(ida).data().data(), m, k).transpose() * gm;
  });
}

namespace {

struct ConvGeom {
  int n, c, h, w, o, kh, kw, stride, pad, ho, wo;
};

void im2col(const double* img, const ConvGeom& g, double* col) {
  const int hw = g.ho * g.wo;
  for (int ch = 0; ch < g.c; ++ch) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        double* row = col + static_cast<std::size_t>((ch * g.kh + ki) * g.kw + kj) * hw;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = img + (static_cast<std::size_t>(ch) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, double* img) {
  const int hw = g.ho * g.wo;
  for (int ch = 0; ch < g.c; ++ch) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const double* row = col + static_cast<std::size_t>((ch * g.kh + ki) * g.kw + kj) * hw;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = img + (static_cast<std::size_t>(ch) * g.h + iy) * g.w;
          const double* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");
  if (pad < 0) throw ContractError("conv2d: negative padding");
  if (weight.dim(1) != x.dim(1)) conformance("conv2d", x.shape(), weight.shape());
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) conformance("conv2d", x.shape(), weight.shape());
  const bool has_bias = bias.valid();
  if (has_bias && (bias.value().rank() != 1 || bias.dim(0) != g.o)) conformance("conv2d", weight.shape(), bias.shape());

  const int rows = g.c * g.kh * g.kw;
  const int hw = g.ho * g.wo;
  Tensor out({g.n, g.o, g.ho, g.wo});
  Storage col(static_cast<std::size_t>(rows) * hw);
  CMapMat wm(weight.value().data().data(), g.o, rows);
  for (int b = 0; b < g.n; ++b) {
    im2col(x.value().data().data() + static_cast<std::size_t>(b) * g.c * g.h * g.w, g, col.data());
    MapMat om(out.data().data() + static_cast<std::size_t>(b) * g.o * hw, g.o, hw);
    om.noalias() = wm * CMapMat(col.data(), rows, hw);
    if (has_bias) {
      for (int oc = 0; oc < g.o; ++oc) om.row(oc).array() += bias.value()[static_cast<std::size_t>(oc)];
    }
  }

  Tape* tape = &x.tape();
  const NodeId idx = x.id(), idw = weight.id();
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return tape->record(std::move(out), inputs, [tape, idx, idw, g, rows, hw](const Tensor& grad, std::span<Tensor* const> gin) {
    const Tensor& xv = tape->value(idx);
    CMapMat wm(tape->value(idw).data().data(), g.o, rows);
    Storage col(static_cast<std::size_t>(rows) * hw);
    Storage dcol(gin[0] ? col.size() : 0);
    for (int b = 0; b < g.n; ++b) {
      CMapMat gm(grad.data().data() + static_cast<std::size_t>(b) * g.o * hw, g.o, hw);
      if (gin[1]) {
        im2col(xv.data().data() + static_cast<std::size_t>(b) * g.c * g.h * g.w, g, col.data());
        MapMat(gin[1]->data().data(), g.o, rows).noalias() += gm * CMapMat(col.data(), rows, hw).transpose();
      }
      if (gin[0]) {
        MapMat(dcol.data(), rows, hw).noalias() = wm.transpose() * gm;
        col2im(dcol.data(), g, gin[0]->data().data() + static_cast<std::size_t>(b) * g.c * g.h * g.w);
      }
      if (gin.size() > 2 && gin[2]) {
        for (int oc = 0; oc < g.o; ++oc) (*gin[2])[static_cast<std::size_t>(oc)] += gm.row(oc).sum();
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Resampling

Var upsample_nearest(const Var& x, int factor) {
  require_rank("upsample_nearest", x, 4);
  if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int H = h * factor, W = w * factor;
  Tensor out({n, c, H, W});
  const Tensor& xv = x.value();
  for (int p = 0; p < n * c; ++p) {
    for (int y = 0; y < H; ++y) {
      for (int xx = 0; xx < W; ++xx) {
        out[(static_cast<std::size_t>(p) * H + y) * W + xx] = xv[(static_cast<std::size_t>(p) * h + y / factor) * w + xx / factor];
      }
    }
  }
  return x.tape().record(std::move(out), {x}, [n, c, h, w, factor](const Tensor& g, std::span<Tensor* const> gin) {
    const int H = h * factor, W = w * factor;
    Tensor& gx = *gin[0];
    for (int p = 0; p < n * c; ++p) {
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) {
          gx[(static_cast<std::size_t>(p) * h + y / factor) * w + xx / factor] += g[(static_cast<std::size_t>(p) * H + y) * W + xx];
        }
      }
    }
  });
}

namespace {

struct LinearTap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<LinearTap> bilinear_taps(int in, int factor) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(in * factor));
  for (int o = 0; o < in * factor; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Var upsample_bilinear(const Var& x, int factor) {
  require_rank("upsample_bilinear", x, 4);
  if (factor < 1) throw ContractError("upsample_bilinear: factor must be >= 1");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int H = h * factor, W = w * factor;
  auto ty = bilinear_taps(h, factor);
  auto tx = bilinear_taps(w, factor);
  Tensor out({n, c, H, W});
  const Tensor& xv = x.value();
  for (int p = 0; p < n * c; ++p) {
    const double* src = xv.data().data() + static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < H; ++y) {
      const LinearTap& a = ty[static_cast<std::size_t>(y)];
      for (int xx = 0; xx < W; ++xx) {
        const LinearTap& b = tx[static_cast<std::size_t>(xx)];
        const double top = src[a.i0 * w + b.i0] * (1 - b.w1) + src[a.i0 * w + b.i1] * b.w1;
        const double bot = src[a.i1 * w + b.i0] * (1 - b.w1) + src[a.i1 * w + b.i1] * b.w1;
        out[(static_cast<std::size_t>(p) * H + y) * W + xx] = top * (1 - a.w1) + bot * a.w1;
      }
    }
  }
  return x.tape().record(std::move(out), {x}, [n, c, h, w, H, W, ty, tx](const Tensor& g, std::span<Tensor* const> gin) {
    for (int p = 0; p < n * c; ++p) {
      double* dst = gin[0]->data().data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < H; ++y) {
        const LinearTap& a = ty[static_cast<std::size_t>(y)];
        for (int xx = 0; xx < W; ++xx) {
          const LinearTap& b = tx[static_cast<std::size_t>(xx)];
          const double gv = g[(static_cast<std::size_t>(p) * H + y) * W + xx];
          dst[a.i0 * w + b.i0] += gv * (1 - a.w1) * (1 - b.w1);
          dst[a.i0 * w + b.i1] += gv * (1 - a.w1) * b.w1;
          dst[a.i1 * w + b.i0] += gv * a.w1 * (1 - b.w1);
          dst[a.i1 * w + b.i1] += gv * a.w1 * b.w1;
        }
      }
    }
  });
}

Var avg_pool(const Var& x, int window) {
  require_rank("avg_pool", x, 4);
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window < 1 || h % window != 0 || w % window != 0) {
    throw ShapeError("avg_pool: window " + std::to_string(window) + " does not tile " + shape_str(x.shape()));
  }
  const int H = h / window, W = w / window;
  const double inv = 1.0 / (window * window);
  Tensor out({n, c, H, W});
  const Tensor& xv = x.value();
  for (int p = 0; p < n * c; ++p) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        out[(static_cast<std::size_t>(p) * H + y / window) * W + xx / window] += inv * xv[(static_cast<std::size_t>(p) * h + y) * w + xx];
      }
    }
  }
  return x.tape().record(std::move(out), {x}, [n, c, h, w, H, W, window, inv](const Tensor& g, std::span<Tensor* const> gin) {
    for (int p = 0; p < n * c; ++p) {
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          (*gin[0])[(static_cast<std::size_t>(p) * h + y) * w + xx] += inv * g[(static_cast<std::size_t>(p) * H + y / window) * W + xx / window];
        }
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  require_rank("global_avg_pool", x, 4);
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double inv = 1.0 / static_cast<double>(hw);
  Tensor out({n, c, 1, 1});
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < static_cast<std::size_t>(n * c); ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[p * hw + i];
    out[p] = s * inv;
  }
  return x.tape().record(std::move(out), {x}, [hw, inv](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t p = 0; p < g.numel(); ++p) {
      const double d = g[p] * inv;
      for (std::size_t i = 0; i < hw; ++i) (*gin[0])[p * hw + i] += d;
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  axis = normalize_axis("concat", s0, axis);
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) conformance("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != s0[i]) conformance("concat", s0, s);
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  const AxisSplit out_sp = split_at(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets, extents;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t e = static_cast<std::size_t>(p.dim(axis));
    const Tensor& pv = p.value();
    for (std::size_t o = 0; o < out_sp.outer; ++o) {
      std::copy_n(pv.data().data() + o * e * out_sp.inner, e * out_sp.inner,
                  out.data().data() + (o * out_sp.extent + off) * out_sp.inner);
    }
    offsets.push_back(off);
    extents.push_back(e);
    off += e;
  }
  return parts[0].tape().record(std::move(out), parts, [out_sp, offsets, extents](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t j = 0; j < gin.size(); ++j) {
      if (!gin[j]) continue;
      const std::size_t e = extents[j];
      for (std::size_t o = 0; o < out_sp.outer; ++o) {
        const double* src = g.data().data() + (o * out_sp.extent + offsets[j]) * out_sp.inner;
        double* dst = gin[j]->data().data() + o * e * out_sp.inner;
        for (std::size_t i = 0; i < e * out_sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var narrow(const Var& x, int axis, int start, int length) {
  axis = normalize_axis("narrow", x.shape(), axis);
  if (start < 0 || length <= 0 || start + length > x.dim(axis)) {
    throw ShapeError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") outside " + shape_str(x.shape()));
  }
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape s = x.shape();
  s[static_cast<std::size_t>(axis)] = length;
  Tensor out(s);
  const std::size_t len = static_cast<std::size_t>(length), st = static_cast<std::size_t>(start);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.value().data().data() + (o * sp.extent + st) * sp.inner, len * sp.inner,
                out.data().data() + o * len * sp.inner);
  }
  return x.tape().record(std::move(out), {x}, [sp, st, len](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = gin[0]->data().data() + (o * sp.extent + st) * sp.inner;
      const double* src = g.data().data() + o * len * sp.inner;
      for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += g[i];
  });
}

Var flip_width(const Var& x) {
  const std::size_t w = static_cast<std::size_t>(x.shape().back());
  const std::size_t rows = x.numel() / w;
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < w; ++i) out[r * w + i] = xv[r * w + (w - 1 - i)];
  }
  return x.tape().record(std::move(out), {x}, [w, rows](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < w; ++i) (*gin[0])[r * w + (w - 1 - i)] += g[r * w + i];
    }
  });
}

Var broadcast_to(const Var& x, const Shape& shape) {
  Broadcast bc = make_broadcast("broadcast_to", x.shape(), shape);
  if (bc.out != shape) conformance("broadcast_to", x.shape(), shape);
  Tensor out(shape);
  const Tensor& xv = x.value();
  if (bc.same) {
    out = xv;
  } else {
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t) { out[o] = xv[ia]; });
  }
  return x.tape().record(std::move(out), {x}, [bc](const Tensor& g, std::span<Tensor* const> gin) {
    if (bc.same) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += g[i];
      return;
    }
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t) { (*gin[0])[ia] += g[o]; });
  });
}

// ---------------------------------------------------------------------------
// Bilinear gather / scatter

namespace {

struct Footprint {
  int x0, y0;
  double fx, fy;
};

Footprint footprint(double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  return {static_cast<int>(fu), static_cast<int>(fv), u - fu, v - fv};
}

// Calls fn(y, x, weight, dweight/du, dweight/dv) for the in-bounds corners.
template <typename Fn>
void for_each_corner(const Footprint& f, int h, int w, Fn&& fn) {
  const double wx[2] = {1.0 - f.fx, f.fx};
  const double wy[2] = {1.0 - f.fy, f.fy};
  const double dwx[2] = {-1.0, 1.0};
  for (int j = 0; j < 2; ++j) {
    const int y = f.y0 + j;
    if (y < 0 || y >= h) continue;
    for (int i = 0; i < 2; ++i) {
      const int x = f.x0 + i;
      if (x < 0 || x >= w) continue;
      fn(y, x, wx[i] * wy[j], dwx[i] * wy[j], wx[i] * dwx[j]);
    }
  }
}

void check_coords(const char* op, const Var& u, const Var& v) {
  if (u.value().rank() != 1 || u.shape() != v.shape()) conformance(op, u.shape(), v.shape());
}

}  // namespace

Var gather_bilinear(const Var& x, const Var& u, const Var& v) {
  require_rank("gather_bilinear", x, 3);
  check_coords("gather_bilinear", u, v);
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2), k = u.dim(0);
  const Tensor& xv = x.value();
  Tensor out({c, k});
  for (int p = 0; p < k; ++p) {
    const Footprint f = footprint(u.value()[static_cast<std::size_t>(p)], v.value()[static_cast<std::size_t>(p)]);
    for_each_corner(f, h, w, [&](int y, int xx, double wt, double, double) {
      for (int ch = 0; ch < c; ++ch) out.data()[static_cast<std::size_t>(ch) * k + p] += wt * xv.at(ch, y, xx);
    });
  }
  Tape* tape = &x.tape();
  const NodeId idx = x.id(), idu = u.id(), idv = v.id();
  return tape->record(std::move(out), {x, u, v}, [tape, idx, idu, idv, c, h, w, k](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& xv = tape->value(idx);
    const Tensor& uv = tape->value(idu);
    const Tensor& vv = tape->value(idv);
    for (int p = 0; p < k; ++p) {
      const Footprint f = footprint(uv[static_cast<std::size_t>(p)], vv[static_cast<std::size_t>(p)]);
      double gu = 0.0, gv = 0.0;
      for_each_corner(f, h, w, [&](int y, int xx, double wt, double du, double dv) {
        for (int ch = 0; ch < c; ++ch) {
          const double go = g[static_cast<std::size_t>(ch) * k + p];
          if (gin[0]) gin[0]->at(ch, y, xx) += go * wt;
          const double val = xv.at(ch, y, xx);
          gu += go * val * du;
          gv += go * val * dv;
        }
      });
      if (gin[1]) (*gin[1])[static_cast<std::size_t>(p)] += gu;
      if (gin[2]) (*gin[2])[static_cast<std::size_t>(p)] += gv;
    }
  });
}

Var scatter_bilinear(const Var& values, const Var& u, const Var& v, int height, int width) {
  require_rank("scatter_bilinear", values, 2);
  check_coords("scatter_bilinear", u, v);
  if (values.dim(1) != u.dim(0)) conformance("scatter_bilinear", values.shape(), u.shape());
  if (height < 1 || width < 1) throw ContractError("scatter_bilinear: empty target grid");
  const int c = values.dim(0), k = values.dim(1), h = height, w = width;
  const Tensor& val = values.value();
  Tensor out({c, h, w});
  for (int p = 0; p < k; ++p) {
    const Footprint f = footprint(u.value()[static_cast<std::size_t>(p)], v.value()[static_cast<std::size_t>(p)]);
    for_each_corner(f, h, w, [&](int y, int xx, double wt, double, double) {
      for (int ch = 0; ch < c; ++ch) out.at(ch, y, xx) += wt * val[static_cast<std::size_t>(ch) * k + p];
    });
  }
  Tape* tape = &values.tape();
  const NodeId idval = values.id(), idu = u.id(), idv = v.id();
  return tape->record(std::move(out), {values, u, v}, [tape, idval, idu, idv, c, h, w, k](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& val = tape->value(idval);
    const Tensor& uv = tape->value(idu);
    const Tensor& vv = tape->value(idv);
    for (int p = 0; p < k; ++p) {
      const Footprint f = footprint(uv[static_cast<std::size_t>(p)], vv[static_cast<std::size_t>(p)]);
      double gu = 0.0, gv = 0.0;
      for_each_corner(f, h, w, [&](int y, int xx, double wt, double du, double dv) {
        for (int ch = 0; ch < c; ++ch) {
          const double go = g.at(ch, y, xx);
          const double vk = val[static_cast<std::size_t>(ch) * k + p];
          if (gin[0]) (*gin[0])[static_cast<std::size_t>(ch) * k + p] += go * wt;
          gu += go * vk * du;
          gv += go * vk * dv;
        }
      });
      if (gin[1]) (*gin[1])[static_cast<std::size_t>(p)] += gu;
      if (gin[2]) (*gin[2])[static_cast<std::size_t>(p)] += gv;
    }
  });
}

}  // namespace lap::ops
