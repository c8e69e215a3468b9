#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ted4/anchor.hpp"
#include "ted4/common.hpp"
#include "ted4/mlp.hpp"

namespace ted4 {

/// Coded attribute groups, in coding order. Each has its own step size.
enum class AttributeType { feature = 0, offsets = 1, scaling = 2, temporal_feature = 3, activation = 4 };
inline constexpr int kAttributeTypes = 5;

inline const char* attribute_name(AttributeType t) {
  switch (t) {
    case AttributeType::feature: return "feature";
    case AttributeType::offsets: return "offsets";
    case AttributeType::scaling: return "scaling";
    case AttributeType::temporal_feature: return "temporal_feature";
    case AttributeType::activation: return "activation";
  }
  return "?";
}

inline int attribute_size(const AnchorDims& d, AttributeType t) {
  switch (t) {
    case AttributeType::feature: return d.feature_dim;
    case AttributeType::offsets: return 3 * d.offsets;
    case AttributeType::scaling: return 3;
    case AttributeType::temporal_feature: return d.temporal_dim;
    case AttributeType::activation: return 4;
  }
  fail(ErrorKind::usage, "unknown attribute type");
}

/// Offset of attribute `t` inside the anchor's flat data.
inline std::size_t attribute_offset(const AnchorDims& d, AttributeType t) {
  switch (t) {
    case AttributeType::feature: return d.feature_at();
    case AttributeType::offsets: return d.offsets_at();
    case AttributeType::scaling: return d.scaling_at();
    case AttributeType::temporal_feature: return d.temporal_feature_at();
    case AttributeType::activation: return d.activation_at();
  }
  fail(ErrorKind::usage, "unknown attribute type");
}

inline AttributeType attribute_from_index(int i) {
  require(i >= 0 && i < kAttributeTypes, "unknown attribute type " + std::to_string(i));
  return static_cast<AttributeType>(i);
}

/// x followed by sin(2^k pi x), then cos(2^k pi x), for k = 0..bands-1.
inline std::vector<double> positional_encoding(const Vec3& x, int bands) {
  std::vector<double> out(x.begin(), x.end());
  out.reserve(3 + 6 * static_cast<std::size_t>(bands));
  for (int k = 0; k < bands; ++k) {
    const double freq = std::ldexp(std::numbers::pi, k);
    for (int c = 0; c < 3; ++c) out.push_back(std::sin(freq * x[c]));
    for (int c = 0; c < 3; ++c) out.push_back(std::cos(freq * x[c]));
  }
  return out;
}

enum class QuantizeMode { hard, noise };

/// Hard mode rounds half away from zero; noise mode adds uniform(-q/2, q/2).
inline double quantize(double a, double q, QuantizeMode mode, Rng* rng = nullptr) {
  require(q > 0.0, "quantization step must be positive");
  if (mode == QuantizeMode::hard) return q * std::round(a / q);
  require(rng != nullptr, "noise quantization needs a generator");
  return a + q * (rng->uniform() - 0.5);
}

inline long quantization_index(double a, double q) { return std::lround(a / q); }

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kMinSigma = 1e-6;

inline double sigma_from_raw(double raw) { return kMinSigma + softplus(raw); }

namespace detail {
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }
inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
}  // namespace detail

/// Mass of N(mu, sigma) on [value - q/2, value + q/2] (no floor applied).
inline double bin_probability(double value, double mu, double sigma, double q) {
  const double hi = (value - mu + 0.5 * q) / sigma, lo = (value - mu - 0.5 * q) / sigma;
  if (lo > 0.0) return detail::normal_sf(lo) - detail::normal_sf(hi);
  return detail::normal_cdf(hi) - detail::normal_cdf(lo);
}

/// Bin probability floored at kProbabilityFloor.
inline double likelihood(double value, double mu, double sigma, double q) {
  require(sigma > 0.0 && q > 0.0, "likelihood needs positive sigma and step");
  return std::max(bin_probability(value, mu, sigma, q), kProbabilityFloor);
}

struct LikelihoodGrad {
  double p = 0.0;
  double value = 0.0, mu = 0.0, sigma = 0.0, q = 0.0;
};

/// Unfloored probability and its partials.
inline LikelihoodGrad likelihood_grad(double value, double mu, double sigma, double q) {
  const double hi = (value - mu + 0.5 * q) / sigma, lo = (value - mu - 0.5 * q) / sigma;
  const double ph = detail::normal_pdf(hi), pl = detail::normal_pdf(lo);
  LikelihoodGrad g;
  g.p = bin_probability(value, mu, sigma, q);
  g.value = (ph - pl) / sigma;
  g.mu = -g.value;
  g.sigma = -(ph * hi - pl * lo) / sigma;
  g.q = 0.5 * (ph + pl) / sigma;
  return g;
}

/// -log2 of the floored likelihood and its partials.
struct BitsGrad {
  double bits = 0.0;
  double value = 0.0, mu = 0.0, sigma = 0.0, q = 0.0;
};

inline BitsGrad bits_grad(double value, double mu, double sigma, double q) {
  const auto g = likelihood_grad(value, mu, sigma, q);
  BitsGrad b;
  if (g.p <= kProbabilityFloor) {
    b.bits = -std::log2(kProbabilityFloor);
    return b;
  }
  b.bits = -std::log2(g.p);
  const double d = -1.0 / (g.p * std::numbers::ln2);
  b.value = d * g.value;
  b.mu = d * g.mu;
  b.sigma = d * g.sigma;
  b.q = d * g.q;
  return b;
}

struct GaussianParams {
  double mu = 0.0;
  double sigma = 1.0;
  double q = 1.0;
};

inline double rate_bits(std::span<const double> values, std::span<const GaussianParams> params) {
  require(values.size() == params.size(), "one parameter triple per value is required");
  double bits = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    bits -= std::log2(likelihood(values[i], params[i].mu, params[i].sigma, params[i].q));
  }
  return bits;
}

// ---------------------------------------------------------------------------
// INR hyperprior
// ---------------------------------------------------------------------------

/// Per-type distribution parameters predicted from an anchor position.
struct HyperOutput {
  std::array<std::vector<double>, kAttributeTypes> mu;
  std::array<std::vector<double>, kAttributeTypes> sigma_raw;
  std::array<double, kAttributeTypes> q_raw{};
  std::array<double, kAttributeTypes> q{};

  double sigma(AttributeType t, int i) const { return sigma_from_raw(sigma_raw[static_cast<int>(t)][i]); }
};

/// Positional encoding of the normalized position -> MLP -> (mu, sigma, q) per type.
struct HyperpriorNet {
  AnchorDims dims;
  int bands = 8;
  Vec3 box_min{-1, -1, -1};
  Vec3 box_max{1, 1, 1};
  std::array<double, kAttributeTypes> base_step{0.05, 0.02, 0.005, 0.05, 0.01};
  Mlp mlp;

  HyperpriorNet() = default;
  HyperpriorNet(const AnchorDims& d, int pe_bands, int hidden = 64)
      : dims(d), bands(pe_bands), mlp({3 + 6 * pe_bands, hidden, hidden, output_size(d)}) {}

  static int output_size(const AnchorDims& d) {
    int n = 0;
    for (int t = 0; t < kAttributeTypes; ++t) n += 2 * attribute_size(d, static_cast<AttributeType>(t)) + 1;
    return n;
  }

  /// Start of type `t`'s block in the MLP output: mu (n) | sigma raw (n) | q raw (1).
  int output_offset(AttributeType t) const {
    int n = 0;
    for (int i = 0; i < static_cast<int>(t); ++i) n += 2 * attribute_size(dims, static_cast<AttributeType>(i)) + 1;
    return n;
  }

  Vec3 normalize(const Vec3& x) const {
    Vec3 out;
    for (int c = 0; c < 3; ++c) out[c] = 2.0 * (x[c] - box_min[c]) / std::max(box_max[c] - box_min[c], 1e-6) - 1.0;
    return out;
  }

  double step(AttributeType t, double raw) const { return base_step[static_cast<int>(t)] * (1.0 + 0.5 * std::tanh(raw)); }
  double step_grad(AttributeType t, double raw) const {
    const double th = std::tanh(raw);
    return base_step[static_cast<int>(t)] * 0.5 * (1.0 - th * th);
  }

  HyperOutput forward(const Vec3& x_fp16, Mlp::Cache* cache = nullptr) const {
    Mlp::Cache local;
    Mlp::Cache& c = cache ? *cache : local;
    mlp.forward(positional_encoding(normalize(x_fp16), bands), c);
    const auto out = c.output();
    HyperOutput h;
    for (int t = 0; t < kAttributeTypes; ++t) {
      const auto type = static_cast<AttributeType>(t);
      const int n = attribute_size(dims, type), at = output_offset(type);
      h.mu[t].assign(out.begin() + at, out.begin() + at + n);
      h.sigma_raw[t].assign(out.begin() + at + n, out.begin() + at + 2 * n);
      h.q_raw[t] = out[at + 2 * n];
      h.q[t] = step(type, h.q_raw[t]);
    }
    return h;
  }
};

/// (mu_h, sigma_h, q) for one attribute type at a decoder-visible position.
inline std::vector<GaussianParams> hyperprior_params(const HyperpriorNet& net, const Vec3& x_fp16, int attribute_type) {
  const AttributeType t = attribute_from_index(attribute_type);
  const HyperOutput h = net.forward(x_fp16);
  std::vector<GaussianParams> out(attribute_size(net.dims, t));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {h.mu[attribute_type][i], h.sigma(t, static_cast<int>(i)), h.q[attribute_type]};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel-wise autoregressive refinement of the anchor feature
// ---------------------------------------------------------------------------

/// Chunk k: [mu_h, sigma_raw_h of chunk k, decoded chunks 0..k-1] -> hidden ->
/// [delta mu, delta sigma_raw] of chunk k.
struct ChannelARNet {
  int feature_dim = 0;
  int chunks = 4;
  std::vector<Mlp> nets;

  ChannelARNet() = default;
  ChannelARNet(int feature_dim_, int chunk_count, int hidden = 32) : feature_dim(feature_dim_), chunks(chunk_count) {
    require(chunk_count > 0 && feature_dim_ % chunk_count == 0, "feature chunks must partition the feature exactly");
    for (int k = 0; k < chunks; ++k) nets.emplace_back(std::vector<int>{2 * chunk_size() + k * chunk_size(), hidden, 2 * chunk_size()});
  }

  int chunk_size() const { return feature_dim / chunks; }
};

struct ChunkParams {
  std::vector<double> mu;
  std::vector<double> sigma_raw;
  double sigma(int i) const { return sigma_from_raw(sigma_raw[i]); }
};

/// Refined parameters of chunk `k`. `decoded` must hold at least k * chunk_size
/// decoded feature values; anything beyond that is ignored.
inline ChunkParams channel_ar_params(const ChannelARNet& net, const HyperOutput& hyper, std::span<const double> decoded,
                                     int k, Mlp::Cache* cache = nullptr) {
  require(k >= 0 && k < net.chunks, "chunk index " + std::to_string(k) + " out of range");
  const int cs = net.chunk_size();
  require(static_cast<int>(decoded.size()) >= k * cs, "not enough decoded chunks for chunk " + std::to_string(k));
  const auto& mu_h = hyper.mu[static_cast<int>(AttributeType::feature)];
  const auto& sr_h = hyper.sigma_raw[static_cast<int>(AttributeType::feature)];
  std::vector<double> input;
  input.reserve(2 * cs + k * cs);
  input.insert(input.end(), mu_h.begin() + k * cs, mu_h.begin() + (k + 1) * cs);
  input.insert(input.end(), sr_h.begin() + k * cs, sr_h.begin() + (k + 1) * cs);
  input.insert(input.end(), decoded.begin(), decoded.begin() + k * cs);
  Mlp::Cache local;
  Mlp::Cache& c = cache ? *cache : local;
  net.nets[k].forward(input, c);
  const auto out = c.output();
  ChunkParams p;
  p.mu.resize(cs);
  p.sigma_raw.resize(cs);
  for (int i = 0; i < cs; ++i) {
    p.mu[i] = mu_h[k * cs + i] + out[i];
    p.sigma_raw[i] = sr_h[k * cs + i] + out[cs + i];
  }
  return p;
}

// ---------------------------------------------------------------------------
// Factorized prior baseline
// ---------------------------------------------------------------------------

/// Per-component cumulative histogram over quantization indices with additive
/// smoothing, fitted to the data it will code.
class FactorizedPrior {
 public:
  FactorizedPrior() = default;

  /// rows[n][component], all quantized with step q.
  void fit(const std::vector<std::vector<double>>& rows, double q, double smoothing = 0.5) {
    require(!rows.empty(), "factorized prior needs data");
    q_ = q;
    const std::size_t comps = rows.front().size();
    lo_.assign(comps, 0);
    cdf_.assign(comps, {});
    for (std::size_t c = 0; c < comps; ++c) {
      std::map<long, double> counts;
      long lo = 0, hi = 0;
      bool first = true;
      for (const auto& r : rows) {
        const long idx = quantization_index(r[c], q);
        counts[idx] += 1.0;
        lo = first ? idx : std::min(lo, idx);
        hi = first ? idx : std::max(hi, idx);
        first = false;
      }
      lo -= 2;
      hi += 2;
      lo_[c] = lo;
      std::vector<double>& cdf = cdf_[c];
      cdf.assign(static_cast<std::size_t>(hi - lo + 2), 0.0);
      for (long i = lo; i <= hi; ++i) {
        const auto it = counts.find(i);
        cdf[i - lo + 1] = cdf[i - lo] + smoothing + (it == counts.end() ? 0.0 : it->second);
      }
      const double total = cdf.back();
      for (double& v : cdf) v /= total;
    }
  }

  std::size_t components() const { return cdf_.size(); }

  /// CDF at the upper edge of bin `index`; 0 below the support, 1 above.
  double cdf(std::size_t component, long index) const {
    const auto& c = cdf_[component];
    const long rel = index - lo_[component] + 1;
    if (rel <= 0) return 0.0;
    if (rel >= static_cast<long>(c.size())) return 1.0;
    return c[rel];
  }

  double probability(std::size_t component, long index) const {
    return std::max(cdf(component, index) - cdf(component, index - 1), kProbabilityFloor);
  }

  double bits(const std::vector<std::vector<double>>& rows) const {
    double b = 0.0;
    for (const auto& r : rows)
      for (std::size_t c = 0; c < r.size(); ++c) b -= std::log2(probability(c, quantization_index(r[c], q_)));
    return b;
  }

 private:
  double q_ = 1.0;
  std::vector<long> lo_;
  std::vector<std::vector<double>> cdf_;
};

}  // namespace ted4
