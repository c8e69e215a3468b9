#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <vector>

#include "ted4/entropy.hpp"

using namespace ted4;

namespace {

// Straight matrix-vector evaluation of an Mlp's parameter layout.
Eigen::VectorXd mlp_oracle(const Mlp& net, const std::vector<double>& input) {
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  const auto& w = net.widths();
  std::size_t at = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    Eigen::MatrixXd m(w[l + 1], w[l]);
    for (int o = 0; o < w[l + 1]; ++o)
      for (int i = 0; i < w[l]; ++i) m(o, i) = net.params()[at++];
    Eigen::VectorXd y = m * x;
    if (net.has_bias())
      for (int o = 0; o < w[l + 1]; ++o) y(o) += net.params()[at++];
    x = (l + 2 < w.size()) ? Eigen::VectorXd(y.array().tanh()) : y;
  }
  return x;
}

void randomize(Mlp& net, Rng& rng, double scale = 0.5) {
  for (double& p : net.params()) p = rng.uniform(-scale, scale);
}

}  // namespace

TEST(PositionalEncoding, ZeroInput) {
  const auto pe = positional_encoding({0, 0, 0}, 4);
  ASSERT_EQ(pe.size(), 27u);
  for (int k = 0; k < 4; ++k) {
    for (int c = 0; c < 3; ++c) {
      EXPECT_EQ(pe[3 + 6 * k + c], 0.0);
      EXPECT_EQ(pe[3 + 6 * k + 3 + c], 1.0);
    }
  }
}

TEST(PositionalEncoding, NoBandsIsIdentity) {
  const auto pe = positional_encoding({0.1, -0.2, 0.3}, 0);
  EXPECT_EQ(pe, (std::vector<double>{0.1, -0.2, 0.3}));
}

TEST(PositionalEncoding, FirstBandHalf) {
  const auto pe = positional_encoding({0.5, 0, 0}, 1);
  EXPECT_NEAR(pe[3], 1.0, 1e-15);
  EXPECT_NEAR(pe[6], 0.0, 1e-15);
}

TEST(Quantize, HardMode) {
  EXPECT_EQ(quantize(0.0, 0.3, QuantizeMode::hard), 0.0);
  EXPECT_EQ(quantize(0.74, 0.5, QuantizeMode::hard), 0.5);
  EXPECT_EQ(quantize(0.25, 0.5, QuantizeMode::hard), 0.5);
  EXPECT_EQ(quantize(-0.25, 0.5, QuantizeMode::hard), -0.5);
}

TEST(Quantize, NoiseModeStaysInBinAndIsSeeded) {
  Rng a(9), b(9);
  for (int i = 0; i < 1000; ++i) {
    const double v = quantize(1.3, 0.2, QuantizeMode::noise, &a);
    EXPECT_LE(std::abs(v - 1.3), 0.1);
    EXPECT_EQ(v, quantize(1.3, 0.2, QuantizeMode::noise, &b));
  }
}

TEST(Likelihood, ErfOracle) {
  const double oracle = std::erf(0.5 / std::numbers::sqrt2);  // 2 Phi(0.5) - 1
  EXPECT_NEAR(likelihood(0.0, 0.0, 1.0, 1.0), oracle, 1e-12);
  EXPECT_NEAR(likelihood(0.0, 0.0, 1.0, 1.0), 0.382925, 1e-6);
}

TEST(Likelihood, MassSumsToOne) {
  for (auto [mu, sigma, q] : {std::tuple{0.3, 1.2, 0.5}, std::tuple{-2.0, 0.05, 0.01}, std::tuple{0.0, 3.0, 1.0}}) {
    double sum = 0.0;
    const long lo = static_cast<long>(std::floor((mu - 12 * sigma) / q)), hi = static_cast<long>(std::ceil((mu + 12 * sigma) / q));
    for (long k = lo; k <= hi; ++k) sum += bin_probability(k * q, mu, sigma, q);
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Likelihood, FarTailIsFloored) {
  EXPECT_EQ(likelihood(100.0, 0.0, 1.0, 0.1), kProbabilityFloor);
}

TEST(Likelihood, GradientsMatchFiniteDifference) {
  const double h = 1e-6;
  for (auto [v, mu, s, q] : {std::tuple{0.2, 0.0, 1.0, 0.5}, std::tuple{1.5, 0.3, 0.7, 0.2}, std::tuple{-0.4, 0.1, 0.2, 0.05}}) {
    const auto g = likelihood_grad(v, mu, s, q);
    const auto p = [](double a, double b, double c, double d) { return bin_probability(a, b, c, d); };
    const double fmu = (p(v, mu + h, s, q) - p(v, mu - h, s, q)) / (2 * h);
    const double fs = (p(v, mu, s + h, q) - p(v, mu, s - h, q)) / (2 * h);
    const double fq = (p(v, mu, s, q + h) - p(v, mu, s, q - h)) / (2 * h);
    EXPECT_NEAR(g.mu, fmu, 1e-4 * std::max(1e-3, std::abs(fmu)));
    EXPECT_NEAR(g.sigma, fs, 1e-4 * std::max(1e-3, std::abs(fs)));
    EXPECT_NEAR(g.q, fq, 1e-4 * std::max(1e-3, std::abs(fq)));
  }
}

TEST(RateBits, SingleValues) {
  // mu=0, sigma tiny: nearly all mass in the bin around 0
  const std::vector<double> v{0.0};
  EXPECT_NEAR(rate_bits(v, std::vector<GaussianParams>{{0.0, 1e-6, 1.0}}), 0.0, 1e-12);
  // bin [0, inf) of a zero-mean Gaussian holds half the mass
  const std::vector<double> half{1e6};
  EXPECT_NEAR(rate_bits(half, std::vector<GaussianParams>{{0.0, 1.0, 2e6}}), 1.0, 1e-9);
}

TEST(RateBits, Additive) {
  const std::vector<double> one{0.3};
  const std::vector<GaussianParams> p1{{0.1, 0.5, 0.2}};
  const std::vector<double> many(17, 0.3);
  const std::vector<GaussianParams> pm(17, p1[0]);
  EXPECT_NEAR(rate_bits(many, pm), 17 * rate_bits(one, p1), 1e-9);
}

TEST(Hyperprior, DeterministicAndMatchesOracle) {
  const AnchorDims dims{1, 2, 2};
  HyperpriorNet net(dims, 2, 8);
  Rng rng(12);
  randomize(net.mlp, rng);
  net.box_min = {-2, -2, -2};
  net.box_max = {2, 2, 2};
  const Vec3 x{0.5, -1.25, 0.75};
  const auto a = hyperprior_params(net, x, 2);
  const auto b = hyperprior_params(net, x, 2);
  ASSERT_EQ(a.size(), 3u);

  // normalized x = (0.25, -0.625, 0.375), then PE with 2 bands
  std::vector<double> in{0.25, -0.625, 0.375};
  for (int k = 0; k < 2; ++k) {
    for (int c = 0; c < 3; ++c) in.push_back(std::sin(std::pow(2.0, k) * std::numbers::pi * in[c]));
    for (int c = 0; c < 3; ++c) in.push_back(std::cos(std::pow(2.0, k) * std::numbers::pi * in[c]));
  }
  const Eigen::VectorXd out = mlp_oracle(net.mlp, in);
  // layout: feature 2x2+1, offsets 3x2+1, then scaling
  const int at = 5 + 7;
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].mu, b[i].mu);
    EXPECT_EQ(a[i].sigma, b[i].sigma);
    EXPECT_NEAR(a[i].mu, out(at + i), 1e-12);
    EXPECT_NEAR(a[i].sigma, 1e-6 + std::log1p(std::exp(out(at + 3 + i))), 1e-12);
    EXPECT_NEAR(a[i].q, 0.005 * (1 + 0.5 * std::tanh(out(at + 6))), 1e-15);
  }
}

TEST(Hyperprior, UnknownTypeFails) {
  HyperpriorNet net(AnchorDims{}, 2, 8);
  EXPECT_THROW(hyperprior_params(net, {0, 0, 0}, 5), Error);
  EXPECT_THROW(hyperprior_params(net, {0, 0, 0}, -1), Error);
}

TEST(ChannelAR, ChunkZeroIgnoresContext) {
  Rng rng(3);
  HyperpriorNet hp(AnchorDims{}, 2, 16);
  randomize(hp.mlp, rng);
  ChannelARNet ar(32, 4);
  for (auto& n : ar.nets) randomize(n, rng);
  const auto hyper = hp.forward({0.1, 0.2, 0.3});
  std::vector<double> ctx_a(32), ctx_b(32);
  for (auto& v : ctx_a) v = rng.uniform(-1, 1);
  for (auto& v : ctx_b) v = rng.uniform(-1, 1);
  const auto a = channel_ar_params(ar, hyper, ctx_a, 0);
  const auto b = channel_ar_params(ar, hyper, ctx_b, 0);
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.sigma_raw, b.sigma_raw);
  const auto c = channel_ar_params(ar, hyper, std::vector<double>{}, 0);
  EXPECT_EQ(a.mu, c.mu);
}

TEST(ChannelAR, MatchesOracle) {
  Rng rng(4);
  HyperpriorNet hp(AnchorDims{}, 2, 16);
  randomize(hp.mlp, rng);
  ChannelARNet ar(32, 4, 8);
  for (auto& n : ar.nets) randomize(n, rng);
  const auto hyper = hp.forward({0.1, 0.2, 0.3});
  std::vector<double> ctx(32);
  for (auto& v : ctx) v = rng.uniform(-1, 1);
  const int k = 2;
  std::vector<double> in;
  for (int i = 0; i < 8; ++i) in.push_back(hyper.mu[0][16 + i]);
  for (int i = 0; i < 8; ++i) in.push_back(hyper.sigma_raw[0][16 + i]);
  for (int i = 0; i < 16; ++i) in.push_back(ctx[i]);
  const Eigen::VectorXd out = mlp_oracle(ar.nets[k], in);
  const auto p = channel_ar_params(ar, hyper, ctx, k);
  for (int i = 0; i < 8; ++i) {
    EXPECT_NEAR(p.mu[i], hyper.mu[0][16 + i] + out(i), 1e-12);
    EXPECT_NEAR(p.sigma_raw[i], hyper.sigma_raw[0][16 + i] + out(8 + i), 1e-12);
  }
}

TEST(ChannelAR, OutOfRangeChunkFails) {
  ChannelARNet ar(32, 4);
  HyperOutput h;
  h.mu[0].assign(32, 0.0);
  h.sigma_raw[0].assign(32, 0.0);
  EXPECT_THROW(channel_ar_params(ar, h, std::vector<double>(32), 4), Error);
  EXPECT_THROW(channel_ar_params(ar, h, std::vector<double>(32), -1), Error);
  EXPECT_THROW(channel_ar_params(ar, h, std::vector<double>(8), 2), Error);
}

TEST(FactorizedPriorTest, BitsMatchEmpiricalEntropyForLargeSample) {
  Rng rng(5);
  std::vector<std::vector<double>> rows(4000, std::vector<double>(1));
  for (auto& r : rows) r[0] = rng.index(4) * 1.0;  // uniform on 4 symbols
  FactorizedPrior fp;
  fp.fit(rows, 1.0);
  const double per_symbol = fp.bits(rows) / rows.size();
  EXPECT_NEAR(per_symbol, 2.0, 0.01);
}

TEST(FactorizedPriorTest, ProbabilitiesNormalized) {
  Rng rng(6);
  std::vector<std::vector<double>> rows(200, std::vector<double>(2));
  for (auto& r : rows) r = {rng.normal(), 3 * rng.normal()};
  FactorizedPrior fp;
  fp.fit(rows, 0.25);
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0.0;
    for (long k = -200; k <= 200; ++k) {
      const double p = fp.probability(c, k);
      if (p > kProbabilityFloor) sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}
