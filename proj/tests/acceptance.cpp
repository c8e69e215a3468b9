// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Optional arguments select criteria by number.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>

#include "support.hpp"
#include "ted4/cli.hpp"

using namespace ted4;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Trained runs shared between criteria, keyed by (scene, seed, lambda, temporal).
class Runs {
 public:
  struct Run {
    ToyScene scene;
    EncodedRun encoded;
  };

  const Run& get(const std::string& scene, std::uint64_t seed, double lambda, bool temporal) {
    const auto key = std::make_tuple(scene, seed, lambda, temporal);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    SynthOptions so;
    so.seed = seed;
    Run r;
    r.scene = synthesize(scene, so);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.weights.rate = lambda;
    cfg.model.temporal_activation = temporal;
    r.encoded = train_and_encode(r.scene, cfg);
    return cache_.emplace(key, std::move(r)).first->second;
  }

 private:
  std::map<std::tuple<std::string, std::uint64_t, double, bool>, Run> cache_;
};

Runs runs;

// ---------------------------------------------------------------------------

Verdict coding_round_trip() {
  int exact = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Model q = quantize_model(testing::random_model(1000 + seed));
    if (same_decoder_state(q, read_container(write_container(q)))) ++exact;
  }
  Rng rng(77);
  const std::size_t n = 100000;
  std::vector<SymbolCdf> cdfs;
  std::vector<long> symbols;
  cdfs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = rng.uniform(-4, 4), sigma = 0.1 + 6 * rng.uniform();
    cdfs.push_back(build_cdf(mu, sigma, 1.0, 48));
    symbols.push_back(i % 501 == 0 ? static_cast<long>(rng.index(20000)) - 10000 : std::lround(mu + sigma * rng.normal()));
  }
  const bool coder_ok = range_decode(range_encode(symbols, cdfs), cdfs) == symbols;
  return {exact == 100 && coder_ok, fmt("%d/100 models exact, %zu symbols %s", exact, n, coder_ok ? "exact" : "MISMATCH")};
}

Verdict rate_estimate_fidelity() {
  const auto& run = runs.get("occluder", 0, 0.002, true);
  ContainerHeader h;
  read_container(run.encoded.container, &h);
  const double actual = 8.0 * h.sections[3].length;
  const double estimate = estimate_attribute_bits(run.encoded.quantized);
  const double allowed = 0.02 * estimate + 64 * 8;
  return {std::abs(actual - estimate) <= allowed,
          fmt("actual %.0f bits, estimate %.1f bits, |diff| %.1f <= %.1f", actual, estimate, std::abs(actual - estimate),
              allowed)};
}

Verdict activation_suite() {
  bool ok = true;
  Rng rng(3);
  double worst_edge = 0.0, worst_width = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const double as = rng.uniform(0.05, 0.5), af = rng.uniform(as, 0.95);
    const ActivationParams p{as, rng.uniform(0.01, 0.3), af, rng.uniform(0.01, 0.3)};
    for (int i = 0; i <= 20; ++i) ok = ok && activation(p, as + (af - as) * i / 20.0) == 1.0;
    worst_width = std::max(worst_width, std::abs(activation(p, as - p.start_width) - std::exp(-1.0)));
    worst_width = std::max(worst_width, std::abs(activation(p, af + p.end_width) - std::exp(-1.0)));
    worst_edge = std::max(worst_edge, std::abs(activation(p, std::nextafter(as, 0.0)) - 1.0));
    worst_edge = std::max(worst_edge, std::abs(activation(p, std::nextafter(af, 1.0)) - 1.0));
    const double alpha = rng.uniform(), tau = activation(p, rng.uniform());
    ok = ok && time_aware_opacity(alpha, tau) == alpha * tau;
  }
  ok = ok && worst_width <= 1e-12 && worst_edge <= 1e-12;

  // an anchor whose primitives carry activation 0 renders like no anchor at all
  Model m = testing::random_model(5, false);
  const Camera cam = Camera::look_at({0, 0, 5}, {0, 0, 0}, 24, 24, 30);
  bool identical = true;
  for (double t : {0.0, 0.5, 1.0}) {
    ForwardState st;
    forward(m, t, inference_options(m), nullptr, st);
    auto prims = active_primitives(st);
    std::vector<GaussianPrimitive> without;
    for (auto& p : prims) {
      if (p.anchor != 0) without.push_back(p);
      else p.activation = 0.0;
    }
    identical = identical && render(prims, cam).color == render(without, cam).color;
  }
  ok = ok && identical;
  return {ok, fmt("edge continuity %.1e, value at one width %.1e from exp(-1), zero-activation render %s", worst_edge,
                  worst_width, identical ? "identical" : "DIFFERS")};
}

Verdict likelihood_oracle() {
  const double oracle = std::erf(0.5 / std::sqrt(2.0));
  const double p = likelihood(0.0, 0.0, 1.0, 1.0);
  double worst = 0.0;
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const double mu = rng.uniform(-3, 3), sigma = rng.uniform(0.05, 3), q = rng.uniform(0.01, 1.0) * sigma;
    const long lo = static_cast<long>(std::floor((mu - 8 * sigma) / q)), hi = static_cast<long>(std::ceil((mu + 8 * sigma) / q));
    double sum = 0.0;
    for (long k = lo; k <= hi; ++k) sum += bin_probability(k * q, mu, sigma, q);
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  const bool ok = std::abs(p - 0.382925) <= 1e-6 && std::abs(p - oracle) <= 1e-12 && worst <= 1e-9;
  return {ok, fmt("p = %.9f (erf oracle %.9f), worst mass error %.1e", p, oracle, worst)};
}

Verdict gradient_suite() {
  Rng rng(5);
  const double eps = 1e-6;

  // (a) activation with respect to raw window parameters
  double err_a = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> raw{rng.uniform(-2, 2), rng.uniform(-3, -1), rng.uniform(-2, 2), rng.uniform(-3, -1)};
    const double t = rng.uniform();
    const auto f = [&](const std::vector<double>& x, std::vector<double>* g) {
      if (g) {
        const auto a = activation_grad_raw(x, t);
        g->assign(a.begin(), a.end());
      }
      return activation(ActivationParams::from_raw(x), t);
    };
    err_a = std::max(err_a, grad_check(f, raw, eps, 0, 0, 1e-6));
  }

  // (b) deformation outputs with respect to phi, the bank and the network weights
  const int d = 6, D = 7, df = 5, frames = 8;
  DeformationNets nets(d, D, df, 10);
  nets.project.init(rng);
  nets.deform.init(rng);
  DeformationBank bank(frames, D);
  for (double& v : bank.values) v = rng.uniform(-1, 1);
  std::vector<double> phi(d), gx(3), gf(df);
  for (auto* v : {&phi, &gx, &gf})
    for (double& x : *v) x = rng.uniform(-1, 1);
  const double t = 0.41, scale = 0.2;
  const std::size_t np = nets.project.params().size(), nb = bank.values.size();
  std::vector<double> packed = phi;
  packed.insert(packed.end(), bank.values.begin(), bank.values.end());
  packed.insert(packed.end(), nets.project.params().begin(), nets.project.params().end());
  packed.insert(packed.end(), nets.deform.params().begin(), nets.deform.params().end());
  const auto fb = [&](const std::vector<double>& x, std::vector<double>* g) {
    std::vector<double> ph(x.begin(), x.begin() + d);
    DeformationBank b = bank;
    DeformationNets n = nets;
    std::copy(x.begin() + d, x.begin() + d + nb, b.values.begin());
    std::copy(x.begin() + d + nb, x.begin() + d + nb + np, n.project.params().begin());
    std::copy(x.begin() + d + nb + np, x.end(), n.deform.params().begin());
    DeformTrace tr;
    deform_forward(ph, b, n, t, scale, tr);
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += gx[c] * tr.dx[c];
    for (int j = 0; j < df; ++j) s += gf[j] * tr.df[j];
    if (g) {
      DeformationNets gn = n;
      std::fill(gn.project.params().begin(), gn.project.params().end(), 0.0);
      std::fill(gn.deform.params().begin(), gn.deform.params().end(), 0.0);
      DeformationBank gb(frames, D);
      std::vector<double> gphi(d, 0.0);
      deform_backward(tr, gx, gf, n, scale, gn, gb, gphi);
      *g = gphi;
      g->insert(g->end(), gb.values.begin(), gb.values.end());
      g->insert(g->end(), gn.project.params().begin(), gn.project.params().end());
      g->insert(g->end(), gn.deform.params().begin(), gn.deform.params().end());
    }
    return s;
  };
  const double err_b = grad_check(fb, packed, eps, 0, 0, 1e-6);

  // (c) rate with respect to the hyperprior weights, through the full model path
  Model m = testing::random_model(9, false);
  for (double& w : m.hyper.mlp.params()) w *= 4.0;
  const auto fc = [&](const std::vector<double>& x, std::vector<double>* g) {
    Model p = m;
    p.hyper.mlp.params() = x;
    ForwardOptions o;
    o.noise = true;
    o.temporal = true;
    Rng noise(3);
    ForwardState st;
    forward(p, 0.3, o, &noise, st);
    RateOptions ro;
    ro.activation = true;
    Model grad = zeros_like(p);
    if (g) begin_backward(p, st);
    const double bits = rate_bits(p, st, ro, 1.0, g ? &grad : nullptr);
    if (g) {
      finish_backward(p, st, grad);
      *g = grad.hyper.mlp.params();
    }
    return bits;
  };
  const double err_c = grad_check(fc, m.hyper.mlp.params(), eps, 200, 11, 1e-6);

  // (d) distortion of an 8x8 render with respect to primitive parameters
  std::vector<GaussianPrimitive> prims;
  for (int i = 0; i < 5; ++i) {
    GaussianPrimitive p;
    p.mean = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3)};
    p.scale = {rng.uniform(0.1, 0.25), rng.uniform(0.1, 0.25), rng.uniform(0.1, 0.25)};
    std::array<double, 4> q{1.0, rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
    const double n2 = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    for (double& c : q) c /= n2;
    p.rotation = q;
    p.color = {rng.uniform(), rng.uniform(), rng.uniform()};
    p.opacity = rng.uniform(0.2, 0.8);
    p.activation = rng.uniform(0.5, 1.0);
    p.anchor = i;
    prims.push_back(p);
  }
  const Camera cam = Camera::look_at({0, 0, -3}, {0, 0, 0}, 8, 8, 10);
  Image target(8, 8);
  for (double& v : target.data) v = rng.uniform();
  const auto pack = [](const std::vector<GaussianPrimitive>& ps) {
    std::vector<double> x;
    for (const auto& p : ps) {
      x.insert(x.end(), p.mean.begin(), p.mean.end());
      x.insert(x.end(), p.scale.begin(), p.scale.end());
      x.insert(x.end(), p.rotation.begin(), p.rotation.end());
      x.insert(x.end(), p.color.begin(), p.color.end());
      x.push_back(p.opacity);
      x.push_back(p.activation);
    }
    return x;
  };
  const auto fd = [&](const std::vector<double>& x, std::vector<double>* g) {
    auto ps = prims;
    std::size_t at = 0;
    for (auto& p : ps) {
      for (double& v : p.mean) v = x[at++];
      for (double& v : p.scale) v = x[at++];
      for (double& v : p.rotation) v = x[at++];
      for (double& v : p.color) v = x[at++];
      p.opacity = x[at++];
      p.activation = x[at++];
    }
    Image grad_img(8, 8);
    const double loss = distortion_loss(render(ps, cam).color, target, g ? &grad_img : nullptr, {1.0, 0.0});
    if (g) {
      const auto pg = render_backward(ps, cam, grad_img);
      g->clear();
      for (const auto& p : pg) {
        g->insert(g->end(), p.mean.begin(), p.mean.end());
        g->insert(g->end(), p.scale.begin(), p.scale.end());
        g->insert(g->end(), p.rotation.begin(), p.rotation.end());
        g->insert(g->end(), p.color.begin(), p.color.end());
        g->push_back(p.opacity);
        g->push_back(p.activation);
      }
    }
    return loss;
  };
  const double err_d = grad_check(fd, pack(prims), eps, 0, 0, 1e-6);

  const double worst = std::max({err_a, err_b, err_c, err_d});
  return {worst < 1e-3, fmt("max relative error (a) %.1e (b) %.1e (c) %.1e (d) %.1e", err_a, err_b, err_c, err_d)};
}

Verdict channel_ar_causality() {
  Rng rng(6);
  int violations = 0, checks = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int chunks = 1 + static_cast<int>(rng.index(6));
    const int cs = 1 + static_cast<int>(rng.index(6));
    AnchorDims dims;
    dims.feature_dim = chunks * cs;
    HyperpriorNet hp(dims, 2, 12);
    for (double& w : hp.mlp.params()) w = rng.uniform(-0.5, 0.5);
    ChannelARNet ar(dims.feature_dim, chunks, 8);
    for (auto& n : ar.nets)
      for (double& w : n.params()) w = rng.uniform(-0.5, 0.5);
    const auto hyper = hp.forward({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    std::vector<double> feat(dims.feature_dim);
    for (double& v : feat) v = rng.normal();
    for (int k = 0; k < chunks; ++k) {
      auto moved = feat;
      for (int i = k * cs; i < (k + 1) * cs; ++i) moved[i] += rng.uniform(0.5, 3.0);
      for (int j = 0; j <= k; ++j) {
        const auto a = channel_ar_params(ar, hyper, feat, j), b = channel_ar_params(ar, hyper, moved, j);
        ++checks;
        if (a.mu != b.mu || a.sigma_raw != b.sigma_raw) ++violations;
      }
    }
  }
  return {violations == 0, fmt("%d of %d chunk predictions changed", violations, checks)};
}

Verdict rd_monotonicity() {
  const std::vector<double> lambdas{0.001, 0.002, 0.004, 0.008};
  std::vector<std::size_t> bytes;
  std::vector<double> psnrs;
  std::ostringstream rows;
  for (double l : lambdas) {
    const auto& run = runs.get("occluder", 0, l, true);
    bytes.push_back(run.encoded.container.size());
    psnrs.push_back(evaluate(read_container(run.encoded.container), run.scene).psnr);
    rows << fmt(" %g:%zuB/%.2fdB", l, bytes.back(), psnrs.back());
  }
  bool monotone = true;
  for (std::size_t i = 1; i < bytes.size(); ++i) monotone = monotone && bytes[i] <= bytes[i - 1];
  const bool quality = psnrs.front() >= psnrs.back() - 0.1;
  return {monotone && quality, "lambda:size/psnr" + rows.str()};
}

Verdict hyperprior_vs_factorized() {
  // Attributes that are a smooth function of position plus small noise.
  Rng rng(8);
  AnchorDims dims;
  dims.feature_dim = 8;
  const int n = 600, comps = dims.feature_dim;
  const double q = 0.05;
  std::vector<Vec3> pos(n);
  std::vector<std::vector<double>> rows(n, std::vector<double>(comps));
  for (int i = 0; i < n; ++i) {
    pos[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    for (int c = 0; c < comps; ++c) {
      const double v = std::sin(1.5 * pos[i][0] + c) + 0.7 * std::cos(2.0 * pos[i][1] - 0.5 * c) + 0.5 * pos[i][2] * (c % 3);
      rows[i][c] = q * std::round((v + 0.03 * rng.normal()) / q);
    }
  }
  FactorizedPrior fp;
  fp.fit(rows, q);
  const double factorized = fp.bits(rows);

  HyperpriorNet net(dims, 4, 32);
  Rng init(9);
  net.mlp.init(init, 0.1);
  const int fi = static_cast<int>(AttributeType::feature), at = net.output_offset(AttributeType::feature);
  std::vector<double> m1(net.mlp.params().size()), m2(m1.size()), grad(m1.size());
  const auto total_bits = [&](std::vector<double>* g) {
    double bits = 0.0;
    if (g) std::fill(g->begin(), g->end(), 0.0);
    for (int i = 0; i < n; ++i) {
      Mlp::Cache cache;
      const HyperOutput h = net.forward(pos[i], &cache);
      std::vector<double> gout(net.mlp.out_dim(), 0.0);
      for (int c = 0; c < comps; ++c) {
        const double sigma = h.sigma(AttributeType::feature, c);
        const BitsGrad b = bits_grad(rows[i][c], h.mu[fi][c], sigma, q);
        bits += b.bits;
        gout[at + c] = b.mu;
        gout[at + comps + c] = b.sigma * sigmoid(h.sigma_raw[fi][c]);
      }
      if (g) net.mlp.backward(cache, gout, *g);
    }
    return bits;
  };
  double hyper = total_bits(nullptr);
  const double lr = 3e-3;
  for (int step = 1; step <= 1500; ++step) {
    total_bits(&grad);
    const double c1 = 1.0 - std::pow(0.9, step), c2 = 1.0 - std::pow(0.999, step);
    for (std::size_t j = 0; j < grad.size(); ++j) {
      m1[j] = 0.9 * m1[j] + 0.1 * grad[j];
      m2[j] = 0.999 * m2[j] + 0.001 * grad[j] * grad[j];
      net.mlp.params()[j] -= lr * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + 1e-8);
    }
  }
  hyper = total_bits(nullptr);
  return {hyper < factorized, fmt("hyperprior %.0f bits vs factorized %.0f bits (%.1f%% saving)", hyper, factorized,
                                  100.0 * (factorized - hyper) / factorized)};
}

Verdict temporal_duration() {
  const auto& room = runs.get("static-room", 0, 0.002, true);
  const DurationHistogram hr = model_duration_histogram(room.encoded.quantized);
  const std::size_t nr = room.encoded.quantized.size();
  const double long_share = nr ? static_cast<double>(hr.counts[2]) / nr : 0.0;

  const auto& occ = runs.get("occluder", 0, 0.002, true);
  const DurationHistogram ho = model_duration_histogram(occ.encoded.quantized);

  const auto bits_per_anchor = [](const Runs::Run& r) {
    ContainerHeader h;
    read_container(r.encoded.container, &h);
    return 8.0 * h.sections[3].length / std::max<std::size_t>(1, r.encoded.quantized.size());
  };
  std::string ablation;
  bool ablation_ok = true;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const double with = bits_per_anchor(runs.get("occluder", seed, 0.002, true));
    const double without = bits_per_anchor(runs.get("occluder", seed, 0.002, false));
    ablation_ok = ablation_ok && without > with;
    ablation += fmt(" seed %llu: %.1f vs %.1f;", static_cast<unsigned long long>(seed), without, with);
  }
  const bool a = long_share >= 0.95, b = ho.counts[0] >= 1;
  return {a && b && ablation_ok,
          fmt("(a) static-room long bin %.1f%% %s; (b) occluder short bin %zu %s; (c) bits/anchor without vs with:",
              100.0 * long_share, a ? "ok" : "FAIL", ho.counts[0], b ? "ok" : "FAIL") +
              ablation + (ablation_ok ? " ok" : " FAIL")};
}

Verdict determinism() {
  std::vector<std::vector<std::uint8_t>> containers;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = fs::temp_directory_path() / ("ted4_accept_" + std::to_string(rep));
    fs::remove_all(dir);
    const std::string scene = (dir / "scene").string(), ckpt = (dir / "m.ckpt").string(), out = (dir / "m.ted4").string();
    std::ostringstream sink;
    const auto call = [&](std::vector<std::string> args) {
      args.insert(args.begin(), "ted4");
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      return cli::run(static_cast<int>(argv.size()), argv.data(), sink, sink);
    };
    const int rc = call({"synth", "--scene", "occluder", "--out", scene, "--seed", "3"}) |
                   call({"train", "--scene", scene, "--out", ckpt, "--seed", "3"}) | call({"encode", "--in", ckpt, "--out", out});
    if (rc != 0) return {false, "pipeline failed: " + sink.str()};
    containers.push_back(read_file(out));
    fs::remove_all(dir);
  }
  const bool same = containers[0] == containers[1];
  return {same, fmt("%zu and %zu bytes, %s", containers[0].size(), containers[1].size(), same ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"coding round trip", coding_round_trip},
      {"rate-estimate fidelity", rate_estimate_fidelity},
      {"temporal activation", activation_suite},
      {"bin likelihood oracle", likelihood_oracle},
      {"gradient suite", gradient_suite},
      {"channel-AR causality", channel_ar_causality},
      {"RD monotonicity", rd_monotonicity},
      {"hyperprior vs factorized prior", hyperprior_vs_factorized},
      {"temporal duration", temporal_duration},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d %s: %s [%s] (%.1f s)\n", number, v.pass ? "PASS" : "FAIL", criteria[i].first,
                v.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !v.pass;
  }
  return failures == 0 ? 0 : 1;
}
