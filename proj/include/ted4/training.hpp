#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ted4/container.hpp"
#include "ted4/metrics.hpp"
#include "ted4/model.hpp"
#include "ted4/temporal.hpp"

namespace ted4 {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossWeights {
  double rate = 0.002;
  double offset_mask = 1.0;  // inside the rate factor
  double temp_mask = 5e-3;
  double vol = 1e-4;
  double tv = 1e-3;
};

struct DistortionWeights {
  double l1 = 0.8;
  double ssim = 0.2;
};

/// l1 * L1 + ssim * (1 - SSIM). With `grad`, receives d loss / d render.
inline double distortion_loss(const Image& render, const Image& target, Image* grad = nullptr,
                              const DistortionWeights& w = {}) {
  require(render.same_shape(target), "render and target shapes differ");
  const double n = static_cast<double>(render.data.size());
  if (grad) *grad = Image(render.width, render.height);
  double loss = w.l1 * l1(render, target);
  if (grad && w.l1 != 0.0) {
    for (std::size_t i = 0; i < render.data.size(); ++i) {
      const double d = render.data[i] - target.data[i];
      grad->data[i] += w.l1 * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
    }
  }
  if (w.ssim != 0.0) {
    Image g;
    loss += w.ssim * (1.0 - ssim(render, target, grad ? &g : nullptr));
    if (grad)
      for (std::size_t i = 0; i < g.data.size(); ++i) grad->data[i] -= w.ssim * g.data[i];
  }
  return loss;
}

/// Means of the soft offset masks and of the soft temporal masks.
inline std::pair<double, double> mask_losses(const AnchorSet& set) {
  if (set.empty()) return {0.0, 0.0};
  double off = 0.0, temp = 0.0;
  for (const Anchor& a : set.anchors) {
    for (int s = 0; s < a.dims.offsets; ++s) off += a.offset_mask_soft(s);
    temp += a.temporal_mask_soft();
  }
  return {off / (static_cast<double>(set.size()) * set.dims.offsets), temp / static_cast<double>(set.size())};
}

/// Mean over primitives of s_x * s_y * s_z.
inline double vol_loss(std::span<const GaussianPrimitive> prims) {
  if (prims.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : prims) sum += p.scale[0] * p.scale[1] * p.scale[2];
  return sum / static_cast<double>(prims.size());
}

struct LossParts {
  double distortion = 0.0;
  double rate = 0.0;
  double offset_mask = 0.0;
  double temp_mask = 0.0;
  double vol = 0.0;
  double tv = 0.0;
  double bits = 0.0;  // estimated attribute bits of this step (not a loss term)
};

inline double total_loss(const LossParts& p, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {{"distortion", p.distortion}, {"rate", p.rate},
                                                  {"offset_mask", p.offset_mask}, {"temp_mask", p.temp_mask},
                                                  {"vol", p.vol}, {"tv", p.tv}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) fail(ErrorKind::numerical, std::string("non-finite ") + name + " loss");
  return p.distortion + w.rate * (p.rate + w.offset_mask * p.offset_mask) + w.temp_mask * p.temp_mask +
         w.vol * p.vol + w.tv * p.tv;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  int iterations = 3000;
  double static_fraction = 0.4;
  // position, feature, activation, network, bank
  std::array<double, kParamGroups> lr{1e-4, 5e-3, 1e-3, 2e-3, 2e-3};
  std::uint64_t seed = 0;
  LossWeights weights;
  DistortionWeights distortion;
  int cameras_per_step = 1;
  int prune_every = 500;
  double prune_threshold = 0.005;
  int prune_samples = 8;
  double visibility_threshold = 0.01;  // absolute compositing weight
  double visibility_relative = 0.25;   // fraction of the anchor's own peak weight
  double window_width = 0.05;
  int log_every = 1;
  std::vector<double> lambdas{0.001, 0.002, 0.004, 0.008};
  ModelConfig model;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  return {{"iterations", c.iterations},
          {"static_fraction", c.static_fraction},
          {"lr", {{"position", c.lr[0]}, {"feature", c.lr[1]}, {"activation", c.lr[2]}, {"network", c.lr[3]}, {"bank", c.lr[4]}}},
          {"seed", c.seed},
          {"weights", {{"rate", c.weights.rate}, {"offset_mask", c.weights.offset_mask}, {"temp_mask", c.weights.temp_mask},
                       {"vol", c.weights.vol}, {"tv", c.weights.tv}}},
          {"distortion", {{"l1", c.distortion.l1}, {"ssim", c.distortion.ssim}}},
          {"cameras_per_step", c.cameras_per_step},
          {"prune_every", c.prune_every},
          {"prune_threshold", c.prune_threshold},
          {"prune_samples", c.prune_samples},
          {"visibility_threshold", c.visibility_threshold},
          {"visibility_relative", c.visibility_relative},
          {"window_width", c.window_width},
          {"log_every", c.log_every},
          {"lambdas", c.lambdas},
          {"model",
           {{"offsets", m.dims.offsets}, {"feature_dim", m.dims.feature_dim}, {"temporal_dim", m.dims.temporal_dim},
            {"bank_dim", m.bank_dim}, {"deform_hidden", m.deform_hidden}, {"decoder_hidden", m.decoder_hidden},
            {"pe_bands", m.pe_bands}, {"hyper_hidden", m.hyper_hidden}, {"ar_chunks", m.ar_chunks},
            {"ar_hidden", m.ar_hidden}, {"voxel_size", m.voxel_size}, {"dx_scale", m.dx_scale},
            {"temporal_activation", m.temporal_activation}, {"base_step", m.base_step}}}};
}

/// Fields absent from `j` keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const nlohmann::json defaults = to_json(c);
  std::function<void(const nlohmann::json&, const nlohmann::json&, const std::string&)> check =
      [&](const nlohmann::json& given, const nlohmann::json& ref, const std::string& path) {
        require(given.is_object(), "config section '" + path + "' must be an object");
        for (const auto& [k, v] : given.items()) {
          require(ref.contains(k), "unknown config key '" + path + k + "'");
          if (ref.at(k).is_object()) check(v, ref.at(k), path + k + ".");
        }
      };
  check(j, defaults, "");
  nlohmann::json merged = defaults;
  merged.merge_patch(j);
  try {
    c.iterations = merged.at("iterations");
    c.static_fraction = merged.at("static_fraction");
    const auto& lr = merged.at("lr");
    c.lr = {lr.at("position"), lr.at("feature"), lr.at("activation"), lr.at("network"), lr.at("bank")};
    c.seed = merged.at("seed");
    const auto& w = merged.at("weights");
    c.weights = {w.at("rate"), w.at("offset_mask"), w.at("temp_mask"), w.at("vol"), w.at("tv")};
    c.distortion = {merged.at("distortion").at("l1"), merged.at("distortion").at("ssim")};
    c.cameras_per_step = merged.at("cameras_per_step");
    c.prune_every = merged.at("prune_every");
    c.prune_threshold = merged.at("prune_threshold");
    c.prune_samples = merged.at("prune_samples");
    c.visibility_threshold = merged.at("visibility_threshold");
    c.visibility_relative = merged.at("visibility_relative");
    c.window_width = merged.at("window_width");
    c.log_every = merged.at("log_every");
    c.lambdas = merged.at("lambdas").get<std::vector<double>>();
    const auto& m = merged.at("model");
    c.model.dims.offsets = m.at("offsets");
    c.model.dims.feature_dim = m.at("feature_dim");
    c.model.dims.temporal_dim = m.at("temporal_dim");
    c.model.bank_dim = m.at("bank_dim");
    c.model.deform_hidden = m.at("deform_hidden");
    c.model.decoder_hidden = m.at("decoder_hidden");
    c.model.pe_bands = m.at("pe_bands");
    c.model.hyper_hidden = m.at("hyper_hidden");
    c.model.ar_chunks = m.at("ar_chunks");
    c.model.ar_hidden = m.at("ar_hidden");
    c.model.voxel_size = m.at("voxel_size");
    c.model.dx_scale = m.at("dx_scale");
    c.model.temporal_activation = m.at("temporal_activation");
    c.model.base_step = m.at("base_step").get<std::array<double, kAttributeTypes>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::usage, std::string("bad config value: ") + e.what());
  }
  require(c.iterations >= 0, "iterations must be non-negative");
  require(c.static_fraction > 0.0 && c.static_fraction < 1.0, "static_fraction must lie in (0,1)");
  require(c.weights.rate >= 0 && c.weights.offset_mask >= 0 && c.weights.temp_mask >= 0 && c.weights.vol >= 0 &&
              c.weights.tv >= 0,
          "loss weights must be non-negative");
  require(c.cameras_per_step >= 1, "cameras_per_step must be at least 1");
  require(c.model.voxel_size > 0.0 && c.model.dx_scale >= 0.0, "voxel_size must be positive");
  return c;
}

// ---------------------------------------------------------------------------
// One optimization step
// ---------------------------------------------------------------------------

struct StepSpec {
  int frame = 0;
  std::vector<int> cameras;
  std::uint64_t noise_seed = 0;
  bool phase2 = false;
};

/// Loss of one step; with `grad` (shaped like `m`, zeroed by the caller)
/// accumulates d total_loss / d params.
inline LossParts evaluate_step(const Model& m, const ToyScene& scene, const StepSpec& spec, const TrainConfig& cfg,
                               Model* grad) {
  require(!spec.cameras.empty(), "a step needs at least one camera");
  const double t = scene.timestamps.at(spec.frame);
  ForwardOptions opt;
  opt.deformation = true;
  opt.temporal = spec.phase2 && m.config.temporal_activation;
  opt.noise = true;
  opt.trace_static = true;
  Rng noise(spec.noise_seed);
  ForwardState st;
  forward(m, t, opt, &noise, st);
  if (!opt.temporal) {
    for (const auto& p : st.prims) require(p.activation == 1.0, "temporal activation must be 1 in the static phase", ErrorKind::numerical);
  }
  LossParts parts;
  const double inv_views = 1.0 / static_cast<double>(spec.cameras.size());
  std::vector<PrimitiveGrad> pg(grad ? st.prims.size() : 0);
  for (int c : spec.cameras) {
    const Camera& cam = scene.cameras.at(c);
    const RenderedImage r = render(st.prims, cam);
    Image gimg;
    parts.distortion += inv_views * distortion_loss(r.color, scene.frames[c][spec.frame], grad ? &gimg : nullptr, cfg.distortion);
    if (!grad) continue;
    for (double& v : gimg.data) v *= inv_views;
    const auto g = render_backward(st.prims, cam, gimg);
    for (std::size_t i = 0; i < g.size(); ++i) {
      PrimitiveGrad& d = pg[i];
      for (int k = 0; k < 3; ++k) {
        d.mean[k] += g[i].mean[k];
        d.scale[k] += g[i].scale[k];
        d.color[k] += g[i].color[k];
      }
      for (int k = 0; k < 4; ++k) d.rotation[k] += g[i].rotation[k];
      d.opacity += g[i].opacity;
      d.activation += g[i].activation;
    }
  }
  // volume regularizer over active primitives
  std::size_t active = 0;
  for (const auto& p : st.prims) active += p.opacity > 0.0;
  if (active > 0) {
    for (std::size_t i = 0; i < st.prims.size(); ++i) {
      const auto& p = st.prims[i];
      if (p.opacity <= 0.0) continue;
      const double v = p.scale[0] * p.scale[1] * p.scale[2];
      parts.vol += v / static_cast<double>(active);
      if (grad)
        for (int k = 0; k < 3; ++k) pg[i].scale[k] += cfg.weights.vol * v / p.scale[k] / static_cast<double>(active);
    }
  }
  if (grad) {
    begin_backward(m, st);
    backward_primitives(m, st, pg, *grad);
  }
  const double elements = static_cast<double>(std::max<std::size_t>(m.size(), 1) * rate_elements(m.config.dims));
  RateOptions ro;
  ro.activation = opt.temporal;
  parts.bits = rate_bits(m, st, ro, cfg.weights.rate / elements, grad);
  parts.rate = parts.bits / elements;
  if (grad) finish_backward(m, st, *grad);
  std::tie(parts.offset_mask, parts.temp_mask) = mask_losses(m.anchors);
  parts.tv = bank_tv_loss(m.bank);
  if (grad) {
    const double k = static_cast<double>(m.config.dims.offsets);
    const double n = static_cast<double>(std::max<std::size_t>(m.size(), 1));
    for (std::size_t i = 0; i < m.size(); ++i) {
      const Anchor& a = m.anchors.anchors[i];
      Anchor& ga = grad->anchors.anchors[i];
      for (int s = 0; s < a.dims.offsets; ++s) {
        const double sm = a.offset_mask_soft(s);
        ga.offset_mask_logits()[s] += cfg.weights.rate * cfg.weights.offset_mask * sm * (1.0 - sm) / (n * k);
      }
      const double tm = a.temporal_mask_soft();
      ga.temporal_mask_logit() += cfg.weights.temp_mask * tm * (1.0 - tm) / n;
    }
    bank_tv_backward(m.bank, cfg.weights.tv, grad->bank);
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
  Model m1, m2;
  long step_count = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(const Model& params) : m1(zeros_like(params)), m2(zeros_like(params)) {}

  void step(Model& params, Model& grad, const std::array<double, kParamGroups>& lr) {
    ++step_count;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    auto p = param_blocks(params), g = param_blocks(grad), a = param_blocks(m1), b = param_blocks(m2);
    require(p.size() == g.size() && p.size() == a.size(), "optimizer state does not match the model");
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double rate = lr[static_cast<int>(p[k].group)];
      for (std::size_t j = 0; j < p[k].values.size(); ++j) {
        const double gj = g[k].values[j];
        a[k].values[j] = beta1 * a[k].values[j] + (1.0 - beta1) * gj;
        b[k].values[j] = beta2 * b[k].values[j] + (1.0 - beta2) * gj * gj;
        p[k].values[j] -= rate * (a[k].values[j] / c1) / (std::sqrt(b[k].values[j] / c2) + eps);
      }
    }
  }

  void keep(const std::vector<bool>& flags) {
    keep_anchors(m1, flags);
    keep_anchors(m2, flags);
  }

  void reset_activation() {
    for (Model* s : {&m1, &m2})
      for (auto& blk : param_blocks(*s))
        if (blk.group == ParamGroup::activation) std::fill(blk.values.begin(), blk.values.end(), 0.0);
  }
};

// ---------------------------------------------------------------------------
// Transition: temporal windows from observed visibility
// ---------------------------------------------------------------------------

/// Anchor a is visible at frame k when its deformed position is inside some
/// camera frustum and its strongest per-pixel compositing weight reaches both
/// the absolute threshold and `relative` times its own peak over all frames.
inline VisibilityTable observed_visibility(const Model& m, const ToyScene& scene, double threshold, double relative) {
  const std::size_t n = m.size(), f = scene.timestamps.size();
  std::vector<std::vector<double>> weight(n, std::vector<double>(f, 0.0));
  VisibilityTable inside(n, std::vector<bool>(f, false));
  ForwardOptions o;
  o.deformation = true;
  for (std::size_t k = 0; k < f; ++k) {
    ForwardState st;
    forward(m, scene.timestamps[k], o, nullptr, st);
    for (const Camera& cam : scene.cameras) {
      const RenderedImage r = render(st.prims, cam, {}, static_cast<int>(n));
      for (std::size_t a = 0; a < n; ++a) {
        weight[a][k] = std::max(weight[a][k], r.anchor_weight[a]);
        inside[a][k] = inside[a][k] || cam.in_frustum(st.work[a].position);
      }
    }
  }
  VisibilityTable visible(n, std::vector<bool>(f, false));
  for (std::size_t a = 0; a < n; ++a) {
    const double peak = *std::max_element(weight[a].begin(), weight[a].end());
    for (std::size_t k = 0; k < f; ++k)
      visible[a][k] = inside[a][k] && weight[a][k] >= threshold && weight[a][k] >= relative * peak;
  }
  return visible;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  Model model;
  std::vector<nlohmann::json> log;
  int never_visible = 0;
  int pruned = 0;
};

inline std::vector<double> prune_times(int samples) {
  std::vector<double> ts(std::max(samples, 1));
  for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = ts.size() == 1 ? 0.5 : static_cast<double>(i) / (ts.size() - 1);
  return ts;
}

/// Two-phase optimization. `on_log` (optional) sees every log record as it is produced.
inline TrainResult train(const ToyScene& scene, TrainConfig cfg,
                         const std::function<void(const nlohmann::json&)>& on_log = {}) {
  scene.validate();
  cfg.model.frame_count = scene.frame_count();
  TrainResult res;
  res.model = init_model(cfg.model, scene.points, cfg.seed);
  Model& m = res.model;
  if (cfg.iterations == 0) return res;
  Rng rng(cfg.seed * 0x2545F4914F6CDD1Dull + 1);
  Adam adam(m);
  const int static_iters = std::clamp(static_cast<int>(std::lround(cfg.static_fraction * cfg.iterations)), 0, cfg.iterations);
  const int cams = static_cast<int>(scene.cameras.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    const bool phase2 = it >= static_iters;
    if (it == static_iters && m.config.temporal_activation) {
      const auto vis = observed_visibility(m, scene, cfg.visibility_threshold, cfg.visibility_relative);
      const auto never = init_activation_from_visibility(m.anchors, vis, scene.timestamps, cfg.window_width);
      res.never_visible = static_cast<int>(std::count(never.begin(), never.end(), true));
      adam.reset_activation();
    }
    StepSpec spec;
    spec.phase2 = phase2;
    spec.frame = static_cast<int>(rng.index(scene.timestamps.size()));
    if (cfg.cameras_per_step >= cams) {
      for (int c = 0; c < cams; ++c) spec.cameras.push_back(c);
    } else {
      std::vector<int> order(cams);
      for (int c = 0; c < cams; ++c) order[c] = c;
      for (int c = 0; c < cfg.cameras_per_step; ++c) {
        std::swap(order[c], order[c + rng.index(cams - c)]);
        spec.cameras.push_back(order[c]);
      }
    }
    spec.noise_seed = rng.next();
    Model grad = zeros_like(m);
    LossParts parts;
    double loss = 0.0;
    try {
      parts = evaluate_step(m, scene, spec, cfg, &grad);
      loss = total_loss(parts, cfg.weights);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numerical) throw;
      fail(ErrorKind::numerical, std::string(e.what()) + " at iteration " + std::to_string(it));
    }
    for (auto& blk : param_blocks(grad))
      for (double v : blk.values)
        if (!std::isfinite(v)) fail(ErrorKind::numerical, "non-finite gradient at iteration " + std::to_string(it));
    adam.step(m, grad, cfg.lr);
    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iterations)) {
      nlohmann::json rec{{"iteration", it},
                         {"phase", phase2 ? 2 : 1},
                         {"loss", loss},
                         {"distortion", parts.distortion},
                         {"rate", parts.rate},
                         {"offset_mask", parts.offset_mask},
                         {"temp_mask", parts.temp_mask},
                         {"vol", parts.vol},
                         {"tv", parts.tv},
                         {"anchors", m.size()},
                         {"bits", parts.bits}};
      if (on_log) on_log(rec);
      res.log.push_back(std::move(rec));
    }
    if (cfg.prune_every > 0 && (it + 1) % cfg.prune_every == 0 && it + 1 < cfg.iterations) {
      const auto keep = prune_mask(m.anchors, collective_opacity(m), cfg.prune_threshold, prune_times(cfg.prune_samples),
                                   phase2 && m.config.temporal_activation);
      const auto removed = static_cast<int>(std::count(keep.begin(), keep.end(), false));
      if (removed > 0 && removed < static_cast<int>(keep.size())) {
        keep_anchors(m, keep);
        adam.keep(keep);
        res.pruned += removed;
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Mean PSNR / SSIM over every camera and frame.
inline EvalResult evaluate(const Model& m, const ToyScene& scene) {
  require(m.config.frame_count == scene.frame_count(), "model frame count does not match the scene", ErrorKind::format);
  EvalResult r;
  double n = 0.0;
  for (std::size_t k = 0; k < scene.timestamps.size(); ++k) {
    ForwardState st;
    forward(m, scene.timestamps[k], inference_options(m), nullptr, st);
    const auto prims = active_primitives(st);
    for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
      const Image img = render(prims, scene.cameras[c]).color;
      r.psnr += psnr(img, scene.frames[c][k]);
      r.ssim += ssim(img, scene.frames[c][k]);
      n += 1.0;
    }
  }
  r.psnr /= n;
  r.ssim /= n;
  return r;
}

/// Window durations of a model. Without temporal activation every anchor is
/// always on, so all of them land in the longest bin.
inline DurationHistogram model_duration_histogram(const Model& m) {
  if (m.config.temporal_activation) return duration_histogram(m.anchors);
  DurationHistogram h;
  h.counts[2] = m.size();
  return h;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Central differences against the analytic gradient of `f` at `params`, over
/// `samples` random coordinates (all of them when samples <= 0). `f` fills
/// its gradient argument when non-null. Returns the largest relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double grad_check(const std::function<double(const std::vector<double>&, std::vector<double>*)>& f,
                         std::vector<double> params, double eps, int samples, std::uint64_t seed, double floor = 1e-6,
                         std::vector<std::size_t> candidates = {}) {
  require(eps > 0.0, "eps must be positive");
  std::vector<double> analytic;
  f(params, &analytic);
  if (candidates.empty())
    for (std::size_t i = 0; i < params.size(); ++i) candidates.push_back(i);
  std::vector<std::size_t> picks = candidates;
  if (samples > 0 && static_cast<std::size_t>(samples) < candidates.size()) {
    Rng rng(seed);
    for (int i = 0; i < samples; ++i) std::swap(picks[i], picks[i + rng.index(picks.size() - i)]);
    picks.resize(samples);
  }
  double worst = 0.0;
  for (std::size_t i : picks) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = f(params, nullptr);
    params[i] = saved - eps;
    const double down = f(params, nullptr);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, err);
  }
  return worst;
}

/// Flattened parameter vector in param_blocks order.
inline std::vector<double> flatten(Model& m) {
  std::vector<double> out;
  for (auto& b : param_blocks(m)) out.insert(out.end(), b.values.begin(), b.values.end());
  return out;
}

inline void unflatten(Model& m, std::span<const double> v) {
  std::size_t at = 0;
  for (auto& b : param_blocks(m))
    for (double& x : b.values) x = v[at++];
}

// ---------------------------------------------------------------------------
// Rate-distortion sweep
// ---------------------------------------------------------------------------

struct RdRow {
  double lambda_rate = 0.0;
  std::size_t bytes = 0;
  std::size_t attribute_bytes = 0;
  double estimated_bits = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EncodedRun {
  Model quantized;
  std::vector<std::uint8_t> container;
  TrainResult trained;
};

inline EncodedRun train_and_encode(const ToyScene& scene, const TrainConfig& cfg) {
  EncodedRun r;
  r.trained = train(scene, cfg);
  r.quantized = quantize_model(r.trained.model);
  r.container = write_container(r.quantized, cfg.weights.rate);
  return r;
}

inline std::vector<RdRow> rd_sweep(const ToyScene& scene, const std::vector<double>& lambdas, const TrainConfig& cfg) {
  std::vector<RdRow> rows;
  for (double lambda : lambdas) {
    TrainConfig c = cfg;
    c.weights.rate = lambda;
    const EncodedRun run = train_and_encode(scene, c);
    ContainerHeader h;
    const Model decoded = read_container(run.container, &h);
    const EvalResult e = evaluate(decoded, scene);
    RdRow row;
    row.lambda_rate = lambda;
    row.bytes = run.container.size();
    row.attribute_bytes = h.sections[3].length;
    row.estimated_bits = estimate_attribute_bits(decoded);
    row.psnr = e.psnr;
    row.ssim = e.ssim;
    rows.push_back(row);
  }
  return rows;
}

/// Bjontegaard delta rate of `test` against `anchor` in percent (negative is a
/// saving): cubic fit of log10(rate) over PSNR (lower order for fewer
/// points), averaged over the overlapping PSNR interval. Needs >= 2 points
/// per curve and a non-empty overlap.
inline std::optional<double> bd_rate(const std::vector<std::pair<double, double>>& anchor,
                                     const std::vector<std::pair<double, double>>& test) {
  if (anchor.size() < 2 || test.size() < 2) return std::nullopt;
  const auto fit = [](const std::vector<std::pair<double, double>>& pts) {
    const int order = static_cast<int>(std::min<std::size_t>(3, pts.size() - 1));
    Eigen::MatrixXd a(pts.size(), order + 1);
    Eigen::VectorXd b(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (int j = 0; j <= order; ++j) a(i, j) = std::pow(pts[i].second, j);
      b(i) = std::log10(pts[i].first);
    }
    return Eigen::VectorXd(a.colPivHouseholderQr().solve(b));
  };
  const auto integral = [](const Eigen::VectorXd& c, double lo, double hi) {
    double s = 0.0;
    for (int j = 0; j < c.size(); ++j) s += c(j) * (std::pow(hi, j + 1) - std::pow(lo, j + 1)) / (j + 1);
    return s;
  };
  const auto range = [](const std::vector<std::pair<double, double>>& pts) {
    double lo = 1e300, hi = -1e300;
    for (const auto& p : pts) {
      if (!(p.first > 0.0)) return std::pair{1.0, 0.0};
      lo = std::min(lo, p.second);
      hi = std::max(hi, p.second);
    }
    return std::pair{lo, hi};
  };
  const auto [alo, ahi] = range(anchor);
  const auto [tlo, thi] = range(test);
  const double lo = std::max(alo, tlo), hi = std::min(ahi, thi);
  if (!(hi > lo)) return std::nullopt;
  const double diff = (integral(fit(test), lo, hi) - integral(fit(anchor), lo, hi)) / (hi - lo);
  return (std::pow(10.0, diff) - 1.0) * 100.0;
}

}  // namespace ted4
