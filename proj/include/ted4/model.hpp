#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "ted4/anchor.hpp"
#include "ted4/common.hpp"
#include "ted4/deformation.hpp"
#include "ted4/entropy.hpp"
#include "ted4/render.hpp"
#include "ted4/temporal.hpp"

namespace ted4 {

/// Shapes and fixed hyperparameters of a model. Everything here is written to
/// the container header.
struct ModelConfig {
  AnchorDims dims;
  int frame_count = 20;  // F
  int bank_dim = 16;     // D
  int deform_hidden = 64;
  int decoder_hidden = 32;
  int pe_bands = 8;
  int hyper_hidden = 64;
  int ar_chunks = 4;
  int ar_hidden = 32;
  double voxel_size = 0.25;
  double dx_scale = 0.025;  // 0.1 * voxel_size
  bool temporal_activation = true;
  Vec3 box_min{-1, -1, -1};
  Vec3 box_max{1, 1, 1};
  std::array<double, kAttributeTypes> base_step{0.05, 0.02, 0.005, 0.05, 0.01};

  bool operator==(const ModelConfig&) const = default;
};

struct Model {
  ModelConfig config;
  AnchorSet anchors;
  DeformationBank bank;
  DeformationNets deform;
  AttributeDecoders decoders;
  HyperpriorNet hyper;
  ChannelARNet ar;

  std::size_t size() const { return anchors.size(); }
};

/// All parameters allocated and zero.
inline Model make_model(const ModelConfig& cfg, std::size_t anchor_count) {
  require(cfg.dims.feature_dim % cfg.ar_chunks == 0, "feature dimension must be a multiple of the chunk count");
  Model m;
  m.config = cfg;
  m.anchors.dims = cfg.dims;
  for (std::size_t i = 0; i < anchor_count; ++i) m.anchors.anchors.emplace_back(cfg.dims, static_cast<int>(i));
  m.bank = DeformationBank(cfg.frame_count, cfg.bank_dim);
  m.deform = DeformationNets(cfg.dims.temporal_dim, cfg.bank_dim, cfg.dims.feature_dim, cfg.deform_hidden);
  m.decoders = AttributeDecoders(cfg.dims.feature_dim, cfg.dims.offsets, cfg.decoder_hidden);
  m.hyper = HyperpriorNet(cfg.dims, cfg.pe_bands, cfg.hyper_hidden);
  m.hyper.box_min = cfg.box_min;
  m.hyper.box_max = cfg.box_max;
  m.hyper.base_step = cfg.base_step;
  m.ar = ChannelARNet(cfg.dims.feature_dim, cfg.ar_chunks, cfg.ar_hidden);
  return m;
}

/// Same shapes, every value zero. Used for gradients and optimizer moments.
inline Model zeros_like(const Model& m) {
  Model z = make_model(m.config, m.size());
  for (std::size_t i = 0; i < m.size(); ++i) z.anchors.anchors[i].id = m.anchors.anchors[i].id;
  return z;
}

/// Fresh model: anchors from the point cloud, seeded network weights. The
/// hyperprior box is the fp16 anchor bounding box with a one-voxel margin.
inline Model init_model(ModelConfig cfg, std::span<const Vec3> points, std::uint64_t seed) {
  AnchorInit ai;
  ai.dims = cfg.dims;
  ai.seed = seed;
  AnchorSet set = init_anchor_set(points, cfg.voxel_size, ai);
  for (int c = 0; c < 3; ++c) {
    double lo = 1e300, hi = -1e300;
    for (const Anchor& a : set.anchors) {
      lo = std::min(lo, round_half(a.position()[c]));
      hi = std::max(hi, round_half(a.position()[c]));
    }
    cfg.box_min[c] = round_float(lo - cfg.voxel_size);
    cfg.box_max[c] = round_float(hi + cfg.voxel_size);
  }
  Model m = make_model(cfg, set.size());
  m.anchors = std::move(set);
  Rng rng(seed ^ 0x9E3779B97F4A7C15ull);
  // With phi starting at zero a zero bank would be a saddle (both gradients
  // vanish), so the bank starts as a cosine basis over node times.
  for (int k = 0; k < m.bank.rows(); ++k)
    for (int j = 0; j < m.bank.dim; ++j) m.bank.row(k)[j] = std::cos(std::numbers::pi * j * m.bank.node_time(k));
  m.deform.project.init(rng);
  m.deform.deform.init(rng, 0.1);
  m.decoders.geometry.init(rng, 0.1);
  m.decoders.appearance.init(rng, 0.1);
  m.hyper.mlp.init(rng, 0.0);
  for (Mlp& n : m.ar.nets) n.init(rng, 0.0);
  return m;
}

// ---------------------------------------------------------------------------
// Parameter groups
// ---------------------------------------------------------------------------

enum class ParamGroup { position = 0, feature = 1, activation = 2, network = 3, bank = 4 };
inline constexpr int kParamGroups = 5;

struct ParamBlock {
  ParamGroup group;
  std::span<double> values;
};

/// Every learnable array of the model, in a fixed order.
inline std::vector<ParamBlock> param_blocks(Model& m) {
  std::vector<ParamBlock> out;
  const AnchorDims& d = m.config.dims;
  for (Anchor& a : m.anchors.anchors) {
    double* p = a.data.data();
    out.push_back({ParamGroup::position, {p, 3}});
    out.push_back({ParamGroup::feature, {p + 3, d.activation_at() - 3}});
    out.push_back({ParamGroup::activation, {p + d.activation_at(), 4}});
    out.push_back({ParamGroup::feature, {p + d.offset_mask_at(), d.size() - d.offset_mask_at()}});
  }
  out.push_back({ParamGroup::bank, m.bank.values});
  for (Mlp* n : {&m.deform.project, &m.deform.deform, &m.decoders.geometry, &m.decoders.appearance, &m.hyper.mlp})
    out.push_back({ParamGroup::network, n->params()});
  for (Mlp& n : m.ar.nets) out.push_back({ParamGroup::network, n.params()});
  return out;
}

inline void fill(Model& m, double v) {
  for (auto& b : param_blocks(m)) std::fill(b.values.begin(), b.values.end(), v);
}

/// Drops anchors whose `keep` flag is false.
inline void keep_anchors(Model& m, const std::vector<bool>& keep) {
  require(keep.size() == m.size(), "keep mask does not match anchor count");
  std::vector<Anchor> kept;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) kept.push_back(std::move(m.anchors.anchors[i]));
  m.anchors.anchors = std::move(kept);
}

// ---------------------------------------------------------------------------
// Forward pass over anchors
// ---------------------------------------------------------------------------

struct ForwardOptions {
  bool deformation = true;  // deform dynamic anchors
  bool temporal = false;    // modulate opacity by tau(t)
  bool noise = false;       // additive uniform noise in place of quantization
  bool hyper = false;       // evaluate the hyperprior (implied by noise)
  bool trace_static = false;  // also run the deformation of static anchors (mask gradient)
};

/// Per-anchor state of one forward pass, kept for the backward pass.
struct AnchorWork {
  std::vector<double> values;  // anchor data with coded attributes replaced by their noisy version
  std::vector<double> noise;   // u in (-1/2, 1/2) per element, zero where no noise was added
  HyperOutput hyper;
  Mlp::Cache hyper_cache;
  bool has_hyper = false;
  bool has_trace = false;
  DeformTrace trace;
  Vec3 position{};
  std::vector<double> deformed_feature;
  double tau = 1.0;
  DecodeTrace decode;
  // gradient accumulators
  std::vector<double> grad_values;
  std::vector<double> grad_hyper;
};

struct ForwardState {
  double t = 0.0;
  ForwardOptions options;
  std::vector<AnchorWork> work;
  std::vector<GaussianPrimitive> prims;  // K per anchor, masked slots with zero opacity
};

inline std::span<const double> slice(const std::vector<double>& v, std::size_t at, std::size_t n) { return {v.data() + at, n}; }
inline std::span<double> slice(std::vector<double>& v, std::size_t at, std::size_t n) { return {v.data() + at, n}; }

inline Vec3 fp16_position(const Anchor& a) {
  return {round_half(a.position()[0]), round_half(a.position()[1]), round_half(a.position()[2])};
}

inline DecodeInput decode_input(const Anchor& a, const AnchorWork& w, int index) {
  const AnchorDims& d = a.dims;
  return {w.position,
          w.deformed_feature,
          slice(w.values, d.feature_at(), d.feature_dim),
          slice(w.values, d.scaling_at(), 3),
          slice(w.values, d.offsets_at(), 3 * static_cast<std::size_t>(d.offsets)),
          a.offset_mask_logits(),
          w.tau,
          index};
}

inline void forward_anchor(const Model& m, std::size_t i, double t, const ForwardOptions& opt, Rng* rng, AnchorWork& w,
                           std::vector<GaussianPrimitive>& prims) {
  const Anchor& a = m.anchors.anchors[i];
  const AnchorDims& d = a.dims;
  w.values = a.data;
  w.noise.assign(d.size(), 0.0);
  w.has_hyper = opt.hyper || opt.noise;
  if (w.has_hyper) w.hyper = m.hyper.forward(fp16_position(a), &w.hyper_cache);
  if (opt.noise) {
    require(rng != nullptr, "noise quantization needs a generator");
    for (int ti = 0; ti < kAttributeTypes; ++ti) {
      const auto type = static_cast<AttributeType>(ti);
      const std::size_t at = attribute_offset(d, type);
      const double q = w.hyper.q[ti];
      for (int j = 0; j < attribute_size(d, type); ++j) {
        const double u = rng->uniform() - 0.5;
        w.noise[at + j] = u;
        w.values[at + j] += q * u;
      }
    }
  }
  w.tau = opt.temporal ? activation(ActivationParams::from_raw(slice(w.values, d.activation_at(), 4)), t) : 1.0;
  w.position = a.position_vec();
  w.deformed_feature.assign(w.values.begin() + d.feature_at(), w.values.begin() + d.feature_at() + d.feature_dim);
  w.has_trace = opt.deformation && (a.dynamic() || opt.trace_static);
  if (w.has_trace) {
    deform_forward(slice(w.values, d.temporal_feature_at(), d.temporal_dim), m.bank, m.deform, t, m.config.dx_scale,
                   w.trace);
    if (a.dynamic()) {
      for (int c = 0; c < 3; ++c) w.position[c] += w.trace.dx[c];
      for (int j = 0; j < d.feature_dim; ++j) w.deformed_feature[j] += w.trace.df[j];
    }
  }
  const auto slots = decode_slots(decode_input(a, w, static_cast<int>(i)), m.decoders, w.decode);
  prims.insert(prims.end(), slots.begin(), slots.end());
}

/// Decodes every anchor at time t. Primitive j of anchor i sits at i*K + j.
inline void forward(const Model& m, double t, const ForwardOptions& opt, Rng* rng, ForwardState& st) {
  st.t = t;
  st.options = opt;
  st.work.clear();
  st.work.resize(m.size());
  st.prims.clear();
  st.prims.reserve(m.size() * m.config.dims.offsets);
  for (std::size_t i = 0; i < m.size(); ++i) forward_anchor(m, i, t, opt, rng, st.work[i], st.prims);
}

/// Primitives of the active slots only, for inference.
inline std::vector<GaussianPrimitive> active_primitives(const ForwardState& st) {
  std::vector<GaussianPrimitive> out;
  for (const auto& p : st.prims)
    if (p.opacity > 0.0) out.push_back(p);
  return out;
}

inline ForwardOptions inference_options(const Model& m) {
  ForwardOptions o;
  o.deformation = true;
  o.temporal = m.config.temporal_activation;
  return o;
}

/// Renders the model at time t from `cam`.
inline RenderedImage render_model(const Model& m, const Camera& cam, double t, const RenderSettings& rs = {},
                                  bool track_anchors = false) {
  ForwardState st;
  forward(m, t, inference_options(m), nullptr, st);
  const auto prims = active_primitives(st);
  return render(prims, cam, rs, track_anchors ? static_cast<int>(m.size()) : 0);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

inline void begin_backward(const Model& m, ForwardState& st) {
  for (AnchorWork& w : st.work) {
    w.grad_values.assign(m.config.dims.size(), 0.0);
    w.grad_hyper.assign(w.has_hyper ? m.hyper.mlp.out_dim() : 0, 0.0);
  }
}

/// Pushes per-primitive gradients back to anchor values, deformation, decoders.
/// `prim_grads` is indexed like st.prims.
inline void backward_primitives(const Model& m, ForwardState& st, std::span<const PrimitiveGrad> prim_grads, Model& g) {
  const AnchorDims& d = m.config.dims;
  const std::size_t k = static_cast<std::size_t>(d.offsets);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Anchor& a = m.anchors.anchors[i];
    AnchorWork& w = st.work[i];
    Anchor& ga = g.anchors.anchors[i];
    const DecodeGrad dg = decode_backward(decode_input(a, w, static_cast<int>(i)), w.decode, m.decoders,
                                          prim_grads.subspan(i * k, k), g.decoders);
    for (int c = 0; c < 3; ++c) ga.position()[c] += dg.position[c];
    for (int j = 0; j < d.feature_dim; ++j) w.grad_values[d.feature_at() + j] += dg.feature[j] + dg.deformed_feature[j];
    for (int c = 0; c < 3; ++c) w.grad_values[d.scaling_at() + c] += dg.scaling[c];
    for (std::size_t j = 0; j < dg.offsets.size(); ++j) w.grad_values[d.offsets_at() + j] += dg.offsets[j];
    for (int j = 0; j < d.offsets; ++j) ga.offset_mask_logits()[j] += dg.offset_logits[j];
    if (w.has_trace) {
      // straight-through estimate for the binarized temporal mask
      double ste = 0.0;
      for (int c = 0; c < 3; ++c) ste += dg.position[c] * w.trace.dx[c];
      for (int j = 0; j < d.feature_dim; ++j) ste += dg.deformed_feature[j] * w.trace.df[j];
      const double s = a.temporal_mask_soft();
      ga.temporal_mask_logit() += ste * s * (1.0 - s);
      if (a.dynamic()) {
        deform_backward(w.trace, dg.position, dg.deformed_feature, m.deform, m.config.dx_scale, g.deform, g.bank,
                        slice(w.grad_values, d.temporal_feature_at(), d.temporal_dim));
      }
    }
    if (st.options.temporal && dg.activation != 0.0) {
      const auto gr = activation_grad_raw(slice(w.values, d.activation_at(), 4), st.t);
      for (int j = 0; j < 4; ++j) w.grad_values[d.activation_at() + j] += dg.activation * gr[j];
    }
  }
}

/// Moves accumulated value gradients onto the raw anchor data, routes the
/// noise terms to the quantization steps, and backpropagates the hyperprior.
inline void finish_backward(const Model& m, ForwardState& st, Model& g) {
  const AnchorDims& d = m.config.dims;
  for (std::size_t i = 0; i < m.size(); ++i) {
    AnchorWork& w = st.work[i];
    Anchor& ga = g.anchors.anchors[i];
    for (std::size_t j = 3; j < d.offset_mask_at(); ++j) ga.data[j] += w.grad_values[j];
    if (!w.has_hyper) continue;
    if (st.options.noise) {
      for (int ti = 0; ti < kAttributeTypes; ++ti) {
        const auto type = static_cast<AttributeType>(ti);
        const std::size_t at = attribute_offset(d, type);
        double gq = 0.0;
        for (int j = 0; j < attribute_size(d, type); ++j) gq += w.grad_values[at + j] * w.noise[at + j];
        const int slot = m.hyper.output_offset(type) + 2 * attribute_size(d, type);
        w.grad_hyper[slot] += gq * m.hyper.step_grad(type, w.hyper.q_raw[ti]);
      }
    }
    bool any = false;
    for (double v : w.grad_hyper) any = any || v != 0.0;
    if (any) m.hyper.mlp.backward(w.hyper_cache, w.grad_hyper, g.hyper.mlp.params());
  }
}

// ---------------------------------------------------------------------------
// Rate
// ---------------------------------------------------------------------------

/// Which attribute groups are charged.
struct RateOptions {
  bool activation = false;  // tau parameters (only when temporal activation is coded)
};

/// Attribute elements one anchor can carry; the rate loss is bits per element.
inline std::size_t rate_elements(const AnchorDims& d) {
  std::size_t n = 0;
  for (int t = 0; t < kAttributeTypes; ++t) n += attribute_size(d, static_cast<AttributeType>(t));
  return n;
}

namespace detail {

/// Bits of one value under the hyperprior of `type` (element j of that type).
/// Accumulates gradients scaled by `scale` into the work buffers.
inline double hyper_bits(const HyperpriorNet& net, AnchorWork& w, AttributeType type, int j, double value, double scale,
                         bool grad, double& grad_value, double& grad_q) {
  const int ti = static_cast<int>(type);
  const int n = attribute_size(net.dims, type), at = net.output_offset(type);
  const double sr = w.hyper.sigma_raw[ti][j];
  const BitsGrad b = bits_grad(value, w.hyper.mu[ti][j], sigma_from_raw(sr), w.hyper.q[ti]);
  if (grad) {
    grad_value += scale * b.value;
    w.grad_hyper[at + j] += scale * b.mu;
    w.grad_hyper[at + n + j] += scale * b.sigma * softplus_grad(sr);
    grad_q += scale * b.q;
  }
  return b.bits;
}

}  // namespace detail

/// Estimated bits of every coded attribute given the current (noisy or exact)
/// values in st.work. With `g`, adds scale * d bits into g and the work buffers.
inline double rate_bits(const Model& m, ForwardState& st, const RateOptions& ro, double scale, Model* g) {
  const AnchorDims& d = m.config.dims;
  const bool grad = g != nullptr;
  const int cs = m.ar.chunk_size();
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Anchor& a = m.anchors.anchors[i];
    AnchorWork& w = st.work[i];
    require(w.has_hyper, "rate needs the hyperprior evaluated in the forward pass");
    std::array<double, kAttributeTypes> gq{};
    // feature, chunk by chunk under the channel-wise context model
    const auto feat = slice(w.values, d.feature_at(), d.feature_dim);
    const int fo = m.hyper.output_offset(AttributeType::feature);
    for (int k = 0; k < m.ar.chunks; ++k) {
      Mlp::Cache cache;
      const ChunkParams p = channel_ar_params(m.ar, w.hyper, feat, k, &cache);
      std::vector<double> gout(2 * cs, 0.0);
      for (int c = 0; c < cs; ++c) {
        const int j = k * cs + c;
        const BitsGrad b = bits_grad(feat[j], p.mu[c], p.sigma(c), w.hyper.q[0]);
        total += b.bits;
        if (!grad) continue;
        w.grad_values[d.feature_at() + j] += scale * b.value;
        gout[c] = scale * b.mu;
        gout[cs + c] = scale * b.sigma * softplus_grad(p.sigma_raw[c]);
        w.grad_hyper[fo + j] += gout[c];
        w.grad_hyper[fo + d.feature_dim + j] += gout[cs + c];
        gq[0] += scale * b.q;
      }
      if (!grad) continue;
      const auto gin = m.ar.nets[k].backward(cache, gout, g->ar.nets[k].params());
      for (int c = 0; c < cs; ++c) {
        w.grad_hyper[fo + k * cs + c] += gin[c];
        w.grad_hyper[fo + d.feature_dim + k * cs + c] += gin[cs + c];
      }
      for (int j = 0; j < k * cs; ++j) w.grad_values[d.feature_at() + j] += gin[2 * cs + j];
    }
    // offsets of active slots; the mask logit sees the slot's bits straight through
    for (int s = 0; s < d.offsets; ++s) {
      const bool on = a.offset_active(s);
      double bits = 0.0;
      for (int c = 0; c < 3; ++c) {
        const int j = 3 * s + c;
        bits += detail::hyper_bits(m.hyper, w, AttributeType::offsets, j, w.values[d.offsets_at() + j], scale, grad && on,
                                   w.grad_values[d.offsets_at() + j], gq[1]);
      }
      if (on) total += bits;
      if (grad) {
        const double sm = a.offset_mask_soft(s);
        g->anchors.anchors[i].offset_mask_logits()[s] += scale * bits * sm * (1.0 - sm);
      }
    }
    for (int c = 0; c < 3; ++c) {
      total += detail::hyper_bits(m.hyper, w, AttributeType::scaling, c, w.values[d.scaling_at() + c], scale, grad,
                                  w.grad_values[d.scaling_at() + c], gq[2]);
    }
    {
      const bool on = a.dynamic();
      double bits = 0.0;
      for (int j = 0; j < d.temporal_dim; ++j) {
        bits += detail::hyper_bits(m.hyper, w, AttributeType::temporal_feature, j, w.values[d.temporal_feature_at() + j],
                                   scale, grad && on, w.grad_values[d.temporal_feature_at() + j], gq[3]);
      }
      if (on) total += bits;
      if (grad) {
        const double sm = a.temporal_mask_soft();
        g->anchors.anchors[i].temporal_mask_logit() += scale * bits * sm * (1.0 - sm);
      }
    }
    if (ro.activation) {
      for (int j = 0; j < 4; ++j) {
        total += detail::hyper_bits(m.hyper, w, AttributeType::activation, j, w.values[d.activation_at() + j], scale, grad,
                                    w.grad_values[d.activation_at() + j], gq[4]);
      }
    }
    if (grad) {
      for (int ti = 0; ti < kAttributeTypes; ++ti) {
        const auto type = static_cast<AttributeType>(ti);
        const int slot = m.hyper.output_offset(type) + 2 * attribute_size(d, type);
        w.grad_hyper[slot] += gq[ti] * m.hyper.step_grad(type, w.hyper.q_raw[ti]);
      }
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Quantized (decoder-equivalent) model
// ---------------------------------------------------------------------------

/// Whether a model codes its tau parameters.
inline bool codes_activation(const ModelConfig& c) { return c.temporal_activation; }

/// Canonical order, fp16 positions, fp32 weights and bank, binarized masks
/// (logits +-1) and attributes hard-quantized with the steps the decoder will
/// derive. Attributes that are not transmitted are zeroed. The result is
/// exactly what decoding the container yields.
inline Model quantize_model(const Model& in) {
  Model m = in;
  for (Anchor& a : m.anchors.anchors)
    for (double& x : a.position()) x = round_half(x);
  canonical_sort(m.anchors);
  for (std::size_t i = 0; i < m.size(); ++i) m.anchors.anchors[i].id = static_cast<int>(i);
  for (double& v : m.bank.values) v = round_float(v);
  for (Mlp* n : {&m.deform.project, &m.deform.deform, &m.decoders.geometry, &m.decoders.appearance, &m.hyper.mlp})
    n->round_to_float();
  for (Mlp& n : m.ar.nets) n.round_to_float();
  const AnchorDims& d = m.config.dims;
  for (Anchor& a : m.anchors.anchors) {
    for (double& l : a.offset_mask_logits()) l = l > 0.0 ? 1.0 : -1.0;
    a.temporal_mask_logit() = a.temporal_mask_logit() > 0.0 ? 1.0 : -1.0;
    const HyperOutput h = m.hyper.forward(fp16_position(a));
    const auto quantize_span = [&](std::span<double> v, AttributeType t) {
      // built exactly as the decoder rebuilds it: step * integer index (no negative zero)
      const double q = h.q[static_cast<int>(t)];
      for (double& x : v) x = q * static_cast<double>(quantization_index(x, q));
    };
    quantize_span(a.feature(), AttributeType::feature);
    for (int s = 0; s < d.offsets; ++s) {
      auto o = a.offsets().subspan(3 * s, 3);
      if (a.offset_active(s)) quantize_span(o, AttributeType::offsets);
      else std::fill(o.begin(), o.end(), 0.0);
    }
    quantize_span(a.scaling(), AttributeType::scaling);
    if (a.dynamic()) quantize_span(a.temporal_feature(), AttributeType::temporal_feature);
    else std::fill(a.temporal_feature().begin(), a.temporal_feature().end(), 0.0);
    if (codes_activation(m.config)) quantize_span(a.activation(), AttributeType::activation);
    else std::fill(a.activation().begin(), a.activation().end(), 0.0);
  }
  return m;
}

/// Sum of -log2 p over every transmitted attribute of a quantized model, with
/// exactly the parameters the range coder uses.
inline double estimate_attribute_bits(const Model& q) {
  ForwardState st;
  ForwardOptions o;
  o.deformation = false;
  o.hyper = true;
  forward(q, 0.0, o, nullptr, st);
  RateOptions ro;
  ro.activation = codes_activation(q.config);
  return rate_bits(q, st, ro, 0.0, nullptr);
}

/// Sum over active slots of decoded opacity, per anchor (no time modulation).
inline std::vector<double> collective_opacity(const Model& m) {
  std::vector<double> out(m.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Anchor& a = m.anchors.anchors[i];
    const auto app = m.decoders.appearance.forward(a.feature());
    for (int s = 0; s < a.dims.offsets; ++s)
      if (a.offset_active(s)) out[i] += sigmoid(app[4 * s + 3]);
  }
  return out;
}

}  // namespace ted4
