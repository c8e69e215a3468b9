#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "ted4/anchor.hpp"
#include "ted4/common.hpp"
#include "ted4/mlp.hpp"

namespace ted4 {

/// Global bank of F/2 deformation vectors; node k sits at time k / (F/2 - 1).
struct DeformationBank {
  int frame_count = 0;  // F
  int dim = 0;          // D
  std::vector<double> values;  // (F/2) x D, row-major

  DeformationBank() = default;
  DeformationBank(int frames, int d) : frame_count(frames), dim(d) {
    require(frames >= 2 && frames % 2 == 0, "deformation bank needs an even frame count >= 2");
    values.assign(static_cast<std::size_t>(rows()) * dim, 0.0);
  }

  int rows() const { return frame_count / 2; }
  std::span<double> row(int k) { return {values.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)}; }
  std::span<const double> row(int k) const {
    return {values.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
  }
  double node_time(int k) const { return rows() == 1 ? 0.0 : static_cast<double>(k) / (rows() - 1); }
};

/// Lower node index and blend weight toward the next node for time t.
inline std::pair<int, double> bank_segment(const DeformationBank& bank, double t) {
  require(t >= 0.0 && t <= 1.0, "time " + std::to_string(t) + " outside [0,1]");
  if (bank.rows() == 1) return {0, 0.0};
  const double s = t * (bank.rows() - 1);
  const int k = std::min(static_cast<int>(std::floor(s)), bank.rows() - 2);
  return {k, s - k};
}

inline std::vector<double> interp(const DeformationBank& bank, double t) {
  const auto [k, lambda] = bank_segment(bank, t);
  std::vector<double> z(bank.row(k).begin(), bank.row(k).end());
  if (lambda != 0.0) {
    const auto next = bank.row(k + 1);
    for (int j = 0; j < bank.dim; ++j) z[j] = (1.0 - lambda) * z[j] + lambda * next[j];
  }
  return z;
}

/// F_project (d -> D, bias-free linear) and F_deform (D -> hidden -> hidden -> 3 + d_f).
struct DeformationNets {
  Mlp project;
  Mlp deform;

  DeformationNets() = default;
  DeformationNets(int temporal_dim, int bank_dim, int feature_dim, int hidden = 64)
      : project({temporal_dim, bank_dim}, false), deform({bank_dim, hidden, hidden, 3 + feature_dim}) {}

  int feature_dim() const { return deform.out_dim() - 3; }
};

inline std::vector<double> project(std::span<const double> phi, const DeformationNets& nets) {
  require(static_cast<int>(phi.size()) == nets.project.in_dim(), "temporal feature dimension mismatch");
  return nets.project.forward(phi);
}

inline std::vector<double> query(std::span<const double> w, std::span<const double> z) {
  require(w.size() == z.size(), "query dimension mismatch");
  std::vector<double> out(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) out[j] = w[j] * z[j];
  return out;
}

/// Everything needed to backpropagate one anchor's deformation.
struct DeformTrace {
  int row = 0;
  double lambda = 0.0;
  std::vector<double> z;  // interpolated bank vector
  Mlp::Cache proj;
  Mlp::Cache dec;
  std::vector<double> dx;  // scaled displacement
  std::vector<double> df;  // feature residual
};

/// Raw deformation (dx, df) for a temporal feature at time t, before the mask gate.
inline void deform_forward(std::span<const double> phi, const DeformationBank& bank, const DeformationNets& nets, double t,
                           double dx_scale, DeformTrace& trace) {
  require(static_cast<int>(phi.size()) == nets.project.in_dim(), "temporal feature dimension mismatch");
  require(nets.project.out_dim() == bank.dim, "projection width does not match bank dimension");
  std::tie(trace.row, trace.lambda) = bank_segment(bank, t);
  trace.z = interp(bank, t);
  nets.project.forward(phi, trace.proj);
  const auto latent = query(trace.proj.output(), trace.z);
  nets.deform.forward(latent, trace.dec);
  const auto out = trace.dec.output();
  trace.dx.assign(3, 0.0);
  for (int c = 0; c < 3; ++c) trace.dx[c] = dx_scale * out[c];
  trace.df.assign(out.begin() + 3, out.end());
}

/// Accumulates gradients of (dx, df) into nets, bank and phi.
inline void deform_backward(const DeformTrace& trace, std::span<const double> grad_dx, std::span<const double> grad_df,
                            const DeformationNets& nets, double dx_scale, DeformationNets& grad_nets,
                            DeformationBank& grad_bank, std::span<double> grad_phi) {
  std::vector<double> g_out(3 + grad_df.size());
  for (int c = 0; c < 3; ++c) g_out[c] = dx_scale * grad_dx[c];
  std::copy(grad_df.begin(), grad_df.end(), g_out.begin() + 3);
  const auto g_latent = nets.deform.backward(trace.dec, g_out, grad_nets.deform.params());
  const auto w = trace.proj.output();
  std::vector<double> g_w(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) {
    g_w[j] = g_latent[j] * trace.z[j];
    const double g_z = g_latent[j] * w[j];
    grad_bank.row(trace.row)[j] += (1.0 - trace.lambda) * g_z;
    if (trace.lambda != 0.0) grad_bank.row(trace.row + 1)[j] += trace.lambda * g_z;
  }
  const auto g_phi = nets.project.backward(trace.proj, g_w, grad_nets.project.params());
  for (std::size_t j = 0; j < g_phi.size(); ++j) grad_phi[j] += g_phi[j];
}

struct Deformed {
  Vec3 position{};
  std::vector<double> feature;
};

/// x' = x + dx, f' = f + df for dynamic anchors; static anchors pass through.
inline Deformed deform(const Anchor& anchor, const DeformationBank& bank, const DeformationNets& nets, double t,
                       double dx_scale) {
  require(t >= 0.0 && t <= 1.0, "time " + std::to_string(t) + " outside [0,1]");
  Deformed out{anchor.position_vec(), {anchor.feature().begin(), anchor.feature().end()}};
  if (!anchor.dynamic()) return out;
  DeformTrace trace;
  deform_forward(anchor.temporal_feature(), bank, nets, t, dx_scale, trace);
  for (int c = 0; c < 3; ++c) out.position[c] += trace.dx[c];
  for (std::size_t j = 0; j < out.feature.size(); ++j) out.feature[j] += trace.df[j];
  return out;
}

/// Mean squared difference of adjacent bank rows.
inline double bank_tv_loss(const DeformationBank& bank) {
  if (bank.rows() < 2) return 0.0;
  double sum = 0.0;
  for (int k = 0; k + 1 < bank.rows(); ++k) {
    for (int j = 0; j < bank.dim; ++j) {
      const double d = bank.row(k + 1)[j] - bank.row(k)[j];
      sum += d * d;
    }
  }
  return sum / (bank.rows() - 1);
}

inline void bank_tv_backward(const DeformationBank& bank, double scale, DeformationBank& grad) {
  if (bank.rows() < 2) return;
  const double c = 2.0 * scale / (bank.rows() - 1);
  for (int k = 0; k + 1 < bank.rows(); ++k) {
    for (int j = 0; j < bank.dim; ++j) {
      const double d = bank.row(k + 1)[j] - bank.row(k)[j];
      grad.row(k + 1)[j] += c * d;
      grad.row(k)[j] -= c * d;
    }
  }
}

}  // namespace ted4
