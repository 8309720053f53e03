#include "lap/nn/networks.hpp"

#include <algorithm>
#include <cmath>

#include "lap/errors.hpp"
#include "lap/tensor/ops.hpp"

namespace lap::nn {
namespace {

constexpr double kAlbedoEps = 1e-6;

std::string at(const std::string& prefix, const std::string& leaf) { return prefix + "." + leaf; }
std::string indexed(const std::string& prefix, const char* leaf, int k) { return prefix + "." + leaf + std::to_string(k); }

Var act(const Var& x) { return ops::leaky_relu(x, 0.2); }

void require_images(const char* op, const NetConfig& cfg, const Var& x, int channels) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != channels || s[2] != cfg.image_size || s[3] != cfg.image_size) {
    throw ShapeError(std::string(op) + ": expected [N," + std::to_string(channels) + "," +
                     std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) + "], got " + shape_str(s));
  }
}

// Centre [0,1] inputs.
Var centred(const Var& x) { return ops::add_scalar(ops::scale(x, 2.0), -1.0); }

void add_encoder(ParamStore& s, Initializer& init, const NetConfig& cfg, const std::string& prefix, int in) {
  int prev = in;
  for (int k = 0; k < 4; ++k) {
    add_conv(s, init, indexed(prefix, "stage", k), prev, cfg.widths[k], 4);
    prev = cfg.widths[k];
  }
  add_conv(s, init, indexed(prefix, "stage", 4), prev, cfg.widths[4], cfg.image_size / 16);
  int total = 0;
  for (int k = 0; k < kPyramidLevels; ++k) {
    add_conv(s, init, indexed(prefix, "side", k), cfg.widths[k], cfg.widths[k], 3);
    total += cfg.widths[k];
  }
  add_conv(s, init, at(prefix, "fuse"), total, cfg.code_size, 1);
}

// Decoder layers; with `filtered` the levels 2..0 take a filtered skip.
void add_decoder(ParamStore& s, Initializer& init, const NetConfig& cfg, const std::string& prefix, int out,
                 bool filtered) {
  const auto& w = cfg.widths;
  add_conv(s, init, indexed(prefix, "up", 3), cfg.code_size, w[3], 3);
  int prev = w[3];
  for (int k = 2; k >= 0; --k) {
    add_conv(s, init, indexed(prefix, "up", k), prev, w[k], 3);
    prev = w[k];
    if (filtered) {
      add_conv(s, init, indexed(prefix, "attn", k), 2 * w[k], 1, 3);
      prev += w[k];
    }
  }
  add_conv(s, init, at(prefix, "full"), prev, w[0], 3);
  add_conv(s, init, at(prefix, "out"), w[0], out, 3, /*zero=*/true);
}

void add_head(ParamStore& s, Initializer& init, const NetConfig& cfg, const std::string& prefix, int out) {
  int prev = 3;
  for (int k = 0; k < 4; ++k) {
    add_conv(s, init, indexed(prefix, "stage", k), prev, cfg.head_widths[k], 4);
    prev = cfg.head_widths[k];
  }
  add_conv(s, init, at(prefix, "out"), prev, out, cfg.image_size / 16, /*zero=*/true);
}

void add_gates(ParamStore& s, Initializer& init, const NetConfig& cfg, const std::string& prefix) {
  for (int level = kFirstInjectionLevel; level < kPyramidLevels; ++level) {
    const int ch = level == kPyramidLevels - 1 ? cfg.code_size : cfg.widths[level];
    add_linear(s, init, at(indexed(prefix, "gate", level), "fc1"), ch, ch);
    add_linear(s, init, at(indexed(prefix, "gate", level), "fc2"), ch, ch);
  }
}

Var head_trunk(const Binding& p, const NetConfig& cfg, const std::string& prefix, const Var& images) {
  require_images(prefix.c_str(), cfg, images, 3);
  Var x = centred(images);
  for (int k = 0; k < 4; ++k) x = act(conv(p, indexed(prefix, "stage", k), x, 2, 1));
  Var out = conv(p, at(prefix, "out"), x, 1, 0);
  return ops::reshape(out, {out.dim(0), out.dim(1)});
}

Var decode_impl(const Binding& p, const NetConfig& cfg, const std::string& prefix, const Var& code,
                const Pyramid* skips, std::vector<Var>* attention) {
  if (code.value().rank() != 2 || code.dim(1) != cfg.code_size) {
    throw ShapeError("decode: expected code [N," + std::to_string(cfg.code_size) + "], got " + shape_str(code.shape()));
  }
  Var x = ops::reshape(code, {code.dim(0), cfg.code_size, 1, 1});
  x = ops::upsample_nearest(x, cfg.image_size / 16);
  x = act(conv(p, indexed(prefix, "up", 3), x, 1, 1));
  for (int k = 2; k >= 0; --k) {
    x = act(conv(p, indexed(prefix, "up", k), ops::upsample_nearest(x, 2), 1, 1));
    if (skips) {
      Filtered f = filtered_connection(p, indexed(prefix, "attn", k), skips->levels[static_cast<std::size_t>(k)], x);
      if (attention) attention->push_back(f.attention);
      x = f.fused;
    }
  }
  x = act(conv(p, at(prefix, "full"), ops::upsample_nearest(x, 2), 1, 1));
  return conv(p, at(prefix, "out"), x, 1, 1);
}

// Inverse of (tanh + 1)/2 style mappings: atanh(clamp(y, -1+eps, 1-eps)).
Var atanh_clamped(const Var& y) {
  const Var c = ops::clamp(y, -1.0 + kAlbedoEps, 1.0 - kAlbedoEps);
  return ops::scale(ops::sub(ops::log(ops::add_scalar(c, 1.0)), ops::log(ops::add_scalar(ops::neg(c), 1.0))), 0.5);
}

}  // namespace

void NetConfig::validate() const {
  if (image_size < 16 || (image_size & (image_size - 1)) != 0) {
    throw ContractError("network: image size must be a power of two >= 16, got " + std::to_string(image_size));
  }
  if (code_size < 1) throw ContractError("network: code size must be positive");
  if (max_set_size < 1) throw ContractError("network: max set size must be positive");
  if (depth_border < 0 || 2 * depth_border >= image_size) {
    throw ContractError("network: depth border must be in [0, image_size/2), got " + std::to_string(depth_border));
  }
}

ParamStore init_parameters(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore s;
  Initializer init(seed);
  for (const char* g : {"delta_a", "delta_d"}) add_encoder(s, init, cfg, g, 3);
  for (const char* g : {"agg_a", "agg_d"}) {
    add_linear(s, init, at(g, "fc1"), cfg.code_size, cfg.code_size);
    add_linear(s, init, at(g, "fc2"), cfg.code_size, cfg.code_size);
  }
  add_decoder(s, init, cfg, "phi_a", 3, false);
  add_decoder(s, init, cfg, "phi_d", 1, false);
  add_head(s, init, cfg, "pose", 6);
  add_head(s, init, cfg, "light", 4);

  const auto& hw = cfg.head_widths;
  add_conv(s, init, "conf.down0", 3, hw[0], 4);
  add_conv(s, init, "conf.down1", hw[0], hw[1], 4);
  add_conv(s, init, "conf.down2", hw[1], hw[2], 4);
  add_conv(s, init, "conf.up2", hw[2], hw[1], 3);
  add_conv(s, init, "conf.up1", hw[1], hw[0], 3);
  add_conv(s, init, "conf.up0", hw[0], hw[0], 3);
  add_conv(s, init, "conf.out", hw[0], 2, 3, /*zero=*/true);

  for (const auto& [branch, in, out] : {std::tuple{"refine_a", 3, 3}, std::tuple{"refine_d", 1, 1}}) {
    const std::string b = branch;
    add_encoder(s, init, cfg, b + ".enc", in);
    add_encoder(s, init, cfg, b + ".attr", 3);
    add_gates(s, init, cfg, b);
    add_decoder(s, init, cfg, b + ".dec", out, true);
  }
  return s;
}

Encoded encode(const Binding& p, const NetConfig& cfg, const std::string& prefix, const Var& images,
               const Injector& inject) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[2] != cfg.image_size || s[3] != cfg.image_size) {
    throw ShapeError("encode: expected [N,C," + std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                     "], got " + shape_str(s));
  }
  Encoded out;
  std::vector<Var> pooled;
  Var x = images;
  for (int k = 0; k < kPyramidLevels; ++k) {
    x = k < 4 ? act(conv(p, indexed(prefix, "stage", k), x, 2, 1)) : act(conv(p, indexed(prefix, "stage", k), x, 1, 0));
    if (inject && k < kPyramidLevels - 1) x = inject(k, x);
    if (k < kPyramidLevels - 1) out.pyramid.levels[static_cast<std::size_t>(k)] = x;
    pooled.push_back(ops::global_avg_pool(conv(p, indexed(prefix, "side", k), x, 1, 1)));
  }
  Var code = conv(p, at(prefix, "fuse"), ops::concat(pooled, 1), 1, 0);
  if (inject) code = inject(kPyramidLevels - 1, code);
  out.pyramid.levels[kPyramidLevels - 1] = code;
  out.code = ops::reshape(code, {code.dim(0), code.dim(1)});
  return out;
}

Var set_softmax_pool(const Var& raw, const Var& codes) {
  if (raw.shape() != codes.shape() || raw.value().rank() != 2) {
    throw ShapeError("set_softmax_pool: raw " + shape_str(raw.shape()) + " and codes " + shape_str(codes.shape()) +
                     " must be equal [N,c]");
  }
  const int n = raw.dim(0), c = raw.dim(1);
  if (n < 1) throw ContractError("set_softmax_pool: empty set");
  const Tensor& r = raw.value();
  const Tensor& x = codes.value();
  Tensor weights({n, c});
  Tensor out({1, c});
  std::vector<double> terms(static_cast<std::size_t>(n));
  auto sorted_sum = [&terms]() {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
  };
  for (int j = 0; j < c; ++j) {
    double m = r[static_cast<std::size_t>(j)];
    for (int i = 1; i < n; ++i) m = std::max(m, r[static_cast<std::size_t>(i * c + j)]);
    for (int i = 0; i < n; ++i) terms[static_cast<std::size_t>(i)] = std::exp(r[static_cast<std::size_t>(i * c + j)] - m);
    std::vector<double> e = terms;
    const double den = sorted_sum();
    for (int i = 0; i < n; ++i) {
      const std::size_t k = static_cast<std::size_t>(i * c + j);
      weights[k] = e[static_cast<std::size_t>(i)] / den;
      terms[static_cast<std::size_t>(i)] = weights[k] * x[k];
    }
    out[static_cast<std::size_t>(j)] = sorted_sum();
  }
  Tensor y = out;
  return raw.tape().record(std::move(out), {raw, codes},
                           [weights = std::move(weights), x, y, n, c](const Tensor& g, std::span<Tensor* const> gin) {
                             for (int i = 0; i < n; ++i) {
                               for (int j = 0; j < c; ++j) {
                                 const std::size_t k = static_cast<std::size_t>(i * c + j);
                                 const double gp = g[static_cast<std::size_t>(j)] * weights[k];
                                 if (gin[0]) (*gin[0])[k] += gp * (x[k] - y[static_cast<std::size_t>(j)]);
                                 if (gin[1]) (*gin[1])[k] += gp;
                               }
                             }
                           });
}

Var aggregate_codes(const Binding& p, const std::string& prefix, const Var& codes) {
  if (codes.value().rank() != 2) throw ShapeError("aggregate_codes: expected [N,c], got " + shape_str(codes.shape()));
  const int n = codes.dim(0);
  if (n < 1) throw ContractError("aggregate_codes: empty code set");
  // Each code passes the perceptron on its own so its weights do not depend
  // on its position in the set.
  std::vector<Var> raw;
  raw.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Var xi = ops::narrow(codes, 0, i, 1);
    raw.push_back(linear(p, at(prefix, "fc2"), act(linear(p, at(prefix, "fc1"), xi))));
  }
  return set_softmax_pool(ops::concat(raw, 0), codes);
}

Var aggregate_codes(const Binding& p, const std::string& prefix, std::span<const Var> codes) {
  if (codes.empty()) throw ContractError("aggregate_codes: empty code set");
  return aggregate_codes(p, prefix, ops::concat(codes, 0));
}

Var decode_raw(const Binding& p, const NetConfig& cfg, const std::string& prefix, const Var& code) {
  return decode_impl(p, cfg, prefix, code, nullptr, nullptr);
}

Var map_albedo(const Var& raw) { return ops::scale(ops::add_scalar(ops::tanh(raw), 1.0), 0.5); }
Var map_depth(const Var& raw) { return ops::add_scalar(ops::scale(ops::tanh(raw), 0.1), 1.0); }
Var pin_depth_border(const Var& depth, int columns) {
  const Shape& s = depth.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("pin_depth_border: expected [N,1,H,W], got " + shape_str(s));
  if (columns == 0) return depth;
  if (columns < 0 || 2 * columns >= s[3]) throw ContractError("pin_depth_border: bad column count");
  Tensor keep({1, 1, s[2], s[3]}, 1.0), fill({1, 1, s[2], s[3]}, 0.0);
  for (int y = 0; y < s[2]; ++y)
    for (int k = 0; k < columns; ++k)
      for (int x : {k, s[3] - 1 - k}) {
        keep.at(0, 0, y, x) = 0.0;
        fill.at(0, 0, y, x) = kBorderDepth;
      }
  Tape& tape = depth.tape();
  return ops::add(ops::mul(depth, tape.constant(keep)), tape.constant(fill));
}

Var unmap_albedo(const Var& albedo) { return atanh_clamped(ops::add_scalar(ops::scale(albedo, 2.0), -1.0)); }
Var unmap_depth(const Var& depth) { return atanh_clamped(ops::scale(ops::add_scalar(depth, -1.0), 10.0)); }

Var map_pose(const Var& raw) {
  const Var t = ops::tanh(raw);
  return ops::mul(t, raw.tape().constant(Tensor({1, 6}, std::vector<double>{60.0, 60.0, 60.0, 0.1, 0.1, 0.05})));
}

Var map_light(const Var& raw) {
  const Var t = ops::tanh(raw);
  Tape& tape = raw.tape();
  return ops::add(ops::mul(t, tape.constant(Tensor({1, 4}, std::vector<double>{0.5, 0.5, 1.0, 1.0}))),
                  tape.constant(Tensor({1, 4}, std::vector<double>{0.5, 0.5, 0.0, 0.0})));
}

Var predict_pose(const Binding& p, const NetConfig& cfg, const Var& images) {
  return map_pose(head_trunk(p, cfg, "pose", images));
}

Var predict_light(const Binding& p, const NetConfig& cfg, const Var& images) {
  return map_light(head_trunk(p, cfg, "light", images));
}

Confidence predict_confidence(const Binding& p, const NetConfig& cfg, const Var& images) {
  require_images("predict_confidence", cfg, images, 3);
  Var x = centred(images);
  for (int k = 0; k < 3; ++k) x = act(conv(p, indexed("conf", "down", k), x, 2, 1));
  for (int k = 2; k >= 0; --k) x = act(conv(p, indexed("conf", "up", k), ops::upsample_nearest(x, 2), 1, 1));
  const Var s = ops::exp(ops::clamp(conv(p, "conf.out", x, 1, 1), -5.0, 5.0));
  return {ops::narrow(s, 1, 0, 1), ops::narrow(s, 1, 1, 1)};
}

Var attribute_gate(const Binding& p, const std::string& prefix, int level, const Var& feature) {
  if (level < kFirstInjectionLevel || level >= kPyramidLevels) {
    throw ContractError("attribute_gate: level " + std::to_string(level) + " is not an injection level");
  }
  if (feature.value().rank() != 4) throw ShapeError("attribute_gate: expected [N,C,h,w], got " + shape_str(feature.shape()));
  const int n = feature.dim(0), c = feature.dim(1);
  const std::string g = indexed(prefix, "gate", level);
  const Var pooled = ops::reshape(ops::global_avg_pool(feature), {n, c});
  const Var gate = ops::sigmoid(linear(p, at(g, "fc2"), act(linear(p, at(g, "fc1"), pooled))));
  return ops::mul(feature, ops::reshape(gate, {n, c, 1, 1}));
}

Filtered filtered_connection(const Binding& p, const std::string& name, const Var& enc, const Var& dec) {
  const Shape& e = enc.shape();
  const Shape& d = dec.shape();
  if (e.size() != 4 || d.size() != 4 || e[0] != d[0] || e[2] != d[2] || e[3] != d[3]) {
    throw ShapeError("filtered_connection: encoder " + shape_str(e) + " and decoder " + shape_str(d) +
                     " are not spatially aligned");
  }
  Filtered f;
  f.attention = ops::sigmoid(conv(p, name, ops::concat({enc, dec}, 1), 1, 1));
  f.fused = ops::concat({dec, ops::mul(enc, f.attention)}, 1);
  return f;
}

Refined refine_attributes(const Binding& p, const NetConfig& cfg, const Var& albedo, const Var& depth,
                          const Var& targets) {
  require_images("refine_attributes", cfg, targets, 3);
  require_images("refine_attributes", cfg, albedo, 3);
  require_images("refine_attributes", cfg, depth, 1);
  const int n = targets.dim(0);
  const int s = cfg.image_size;
  Refined out;

  auto branch = [&](const std::string& prefix, const Var& raw_canonical, const Var& input) {
    const Encoded attr = encode(p, cfg, prefix + ".attr", centred(targets));
    Injector inject = [&](int level, const Var& f) {
      if (level < kFirstInjectionLevel) return f;
      return ops::add(f, attribute_gate(p, prefix, level, attr.pyramid.levels[static_cast<std::size_t>(level)]));
    };
    const Encoded enc = encode(p, cfg, prefix + ".enc", input, inject);
    const Var delta = decode_impl(p, cfg, prefix + ".dec", enc.code, &enc.pyramid, &out.attention);
    return ops::add(raw_canonical, delta);
  };

  const Var a_in = ops::broadcast_to(albedo, {n, 3, s, s});
  const Var d_in = ops::broadcast_to(depth, {n, 1, s, s});
  out.albedo = map_albedo(branch("refine_a", unmap_albedo(a_in), centred(a_in)));
  out.depth = map_depth(branch("refine_d", unmap_depth(d_in), ops::scale(ops::add_scalar(d_in, -1.0), 10.0)));
  return out;
}

CanonicalFace canonical_face(const Binding& p, const NetConfig& cfg, const Var& images) {
  require_images("canonical_face", cfg, images, 3);
  if (images.dim(0) > cfg.max_set_size) {
    throw ContractError("canonical_face: set of " + std::to_string(images.dim(0)) + " exceeds the maximum of " +
                        std::to_string(cfg.max_set_size));
  }
  const Var x = centred(images);
  const Var code_a = aggregate_codes(p, "agg_a", encode(p, cfg, "delta_a", x).code);
  const Var code_d = aggregate_codes(p, "agg_d", encode(p, cfg, "delta_d", x).code);
  return {map_albedo(decode_raw(p, cfg, "phi_a", code_a)),
          pin_depth_border(map_depth(decode_raw(p, cfg, "phi_d", code_d)), cfg.depth_border)};
}

void set_injection_gates(ParamStore& store, double logit) {
  for (auto& [name, t] : store.tensors()) {
    if (name.find(".gate") == std::string::npos || name.find(".fc2.") == std::string::npos) continue;
    if (name.ends_with(".weight")) t.fill(0.0);
    if (name.ends_with(".bias")) t.fill(logit);
  }
}

void set_filter_attention(ParamStore& store, double logit) {
  for (auto& [name, t] : store.tensors()) {
    if (name.find(".attn") == std::string::npos) continue;
    if (name.ends_with(".weight")) t.fill(0.0);
    if (name.ends_with(".bias")) t.fill(logit);
  }
}

}  // namespace lap::nn
