#pragma once

#include <span>
#include <vector>

#include "lap/tensor/tape.hpp"

/// Differentiable primitives. Every function records its output on the tape
/// of its (first) input; all inputs must share that tape.
namespace lap::ops {

// Elementwise binary with broadcasting of size-1 axes (ranks aligned right).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var add_scalar(const Var& x, double c);
Var scale(const Var& x, double c);
Var neg(const Var& x);
/// Subgradient 0 at 0.
Var abs(const Var& x);
Var exp(const Var& x);
/// Throws DomainError for inputs <= 0.
Var log(const Var& x);
/// Throws DomainError for negative inputs.
Var sqrt(const Var& x);
Var tanh(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
/// max(0, x), subgradient 0 at 0.
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope = 0.2);
Var pow(const Var& x, double p);
Var clamp(const Var& x, double lo, double hi);

/// Full reductions return shape [1].
Var sum(const Var& x);
Var mean(const Var& x);
Var max(const Var& x);
/// Per-axis reductions keep the reduced axis with extent 1.
Var sum(const Var& x, int axis);
Var mean(const Var& x, int axis);
Var max(const Var& x, int axis);
Var softmax(const Var& x, int axis);

/// [M,K] x [K,N] -> [M,N].
Var matmul(const Var& a, const Var& b);

/// Cross-correlation. x [N,C,H,W], weight [O,C,kh,kw], bias [O] or invalid Var.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var upsample_nearest(const Var& x, int factor);
/// Half-pixel-centred bilinear upsampling with edge clamping.
Var upsample_bilinear(const Var& x, int factor);
/// Non-overlapping window x window average pooling.
Var avg_pool(const Var& x, int window);
/// [N,C,H,W] -> [N,C,1,1].
Var global_avg_pool(const Var& x);

Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
Var narrow(const Var& x, int axis, int start, int length);
Var reshape(const Var& x, Shape shape);
/// Reverses the last (width) axis.
Var flip_width(const Var& x);
/// Explicit broadcast to a target shape.
Var broadcast_to(const Var& x, const Shape& shape);

/// Reads x [C,H,W] at fractional pixel coordinates (u = column, v = row),
/// each of shape [K]. Samples outside the grid read zero. Returns [C,K].
Var gather_bilinear(const Var& x, const Var& u, const Var& v);
/// Adjoint of gather_bilinear: writes values [C,K] into a zero [C,H,W] grid.
Var scatter_bilinear(const Var& values, const Var& u, const Var& v, int height, int width);

}  // namespace lap::ops
