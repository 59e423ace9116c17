#pragma once

// Straight-line reference for the autoencoder, written from the layer
// definitions with explicit index arithmetic. Shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "barseg/ae_core.h"

namespace barseg::oracle {

struct Volume {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
  Volume(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
  double& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
  double get(int ci, int y, int x) const {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
  }
};

// w[oc][ic][ky][kx], padding 1.
inline Volume conv3x3(const Volume& in, const std::vector<double>& w, const std::vector<double>& b,
                      int cout) {
  Volume out(cout, in.h, in.w);
  for (int oc = 0; oc < cout; ++oc) {
    for (int y = 0; y < in.h; ++y) {
      for (int x = 0; x < in.w; ++x) {
        double s = b[oc];
        for (int ic = 0; ic < in.c; ++ic) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              s += w[((oc * in.c + ic) * 3 + ky) * 3 + kx] * in.get(ic, y + ky - 1, x + kx - 1);
            }
          }
        }
        out.at(oc, y, x) = s;
      }
    }
  }
  return out;
}

// w[ic][oc][ky][kx], stride 2, padding 1, output padding 1.
inline Volume tconv3x3(const Volume& in, const std::vector<double>& w, const std::vector<double>& b,
                       int cout) {
  Volume out(cout, 2 * in.h, 2 * in.w);
  for (int oc = 0; oc < cout; ++oc) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) out.at(oc, y, x) = b[oc];
    }
  }
  for (int ic = 0; ic < in.c; ++ic) {
    for (int iy = 0; iy < in.h; ++iy) {
      for (int ix = 0; ix < in.w; ++ix) {
        for (int oc = 0; oc < cout; ++oc) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int y = 2 * iy - 1 + ky, x = 2 * ix - 1 + kx;
              if (y < 0 || y >= out.h || x < 0 || x >= out.w) continue;
              out.at(oc, y, x) += in.get(ic, iy, ix) * w[((ic * cout + oc) * 3 + ky) * 3 + kx];
            }
          }
        }
      }
    }
  }
  return out;
}

/// Piecewise-linear choices made by a forward pass: the sign of every ReLU
/// input and the winning cell of every pooling window. The loss is smooth in
/// the parameters wherever this pattern is constant.
using Pattern = std::vector<std::uint8_t>;

inline Volume relu(Volume v, Pattern* pattern = nullptr) {
  for (auto& x : v.v) {
    if (pattern != nullptr) pattern->push_back(x > 0.0);
    x = std::max(x, 0.0);
  }
  return v;
}

inline Volume maxpool2(const Volume& in, Pattern* pattern = nullptr) {
  Volume out(in.c, in.h / 2, in.w / 2);
  for (int c = 0; c < in.c; ++c) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        const double cells[4] = {in.get(c, 2 * y, 2 * x), in.get(c, 2 * y, 2 * x + 1),
                                 in.get(c, 2 * y + 1, 2 * x), in.get(c, 2 * y + 1, 2 * x + 1)};
        const auto best = std::max_element(cells, cells + 4);
        if (pattern != nullptr) pattern->push_back(static_cast<std::uint8_t>(best - cells));
        out.at(c, y, x) = *best;
      }
    }
  }
  return out;
}

struct Output {
  std::vector<double> latent;
  std::vector<double> reconstruction;
};

/// One 96 x F bar (row-major [frame][bin]) through the network.
inline Output run(const AEParams<double>& p, std::span<const double> bar, Pattern* pattern = nullptr) {
  const int F = p.feature_dim;
  Volume x(1, 96, F);
  std::copy(bar.begin(), bar.end(), x.v.begin());
  const Volume h1 = maxpool2(relu(conv3x3(x, p.conv1_w, p.conv1_b, 4), pattern), pattern);
  const Volume h2 = maxpool2(relu(conv3x3(h1, p.conv2_w, p.conv2_b, 16), pattern), pattern);
  const std::size_t flat = h2.v.size();
  Output o;
  o.latent.assign(p.d_ls, 0.0);
  for (int i = 0; i < p.d_ls; ++i) {
    double s = p.enc_fc_b[i];
    for (std::size_t j = 0; j < flat; ++j) s += p.enc_fc_w[i * flat + j] * h2.v[j];
    o.latent[i] = s;
  }
  Volume d(16, 24, F / 4);
  for (std::size_t r = 0; r < flat; ++r) {
    double s = p.dec_fc_b[r];
    for (int j = 0; j < p.d_ls; ++j) s += p.dec_fc_w[r * p.d_ls + j] * o.latent[j];
    if (pattern != nullptr) pattern->push_back(s > 0.0);
    d.v[r] = std::max(s, 0.0);
  }
  const Volume u1 = relu(tconv3x3(d, p.tconv1_w, p.tconv1_b, 4), pattern);
  const Volume u2 = tconv3x3(u1, p.tconv2_w, p.tconv2_b, 1);
  o.reconstruction = u2.v;
  return o;
}

/// Mean squared reconstruction error of a batch of concatenated bars.
inline double batch_loss(const AEParams<double>& p, std::span<const double> bars) {
  const std::size_t n = static_cast<std::size_t>(96) * p.feature_dim;
  double s = 0.0;
  for (std::size_t b = 0; b * n < bars.size(); ++b) {
    const auto o = run(p, bars.subspan(b * n, n));
    for (std::size_t i = 0; i < n; ++i) {
      const double d = o.reconstruction[i] - bars[b * n + i];
      s += d * d;
    }
  }
  return s / static_cast<double>(bars.size());
}

inline std::vector<double> random_bars(std::size_t count, int F, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(count * 96 * static_cast<std::size_t>(F));
  for (auto& v : x) v = u(rng);
  return x;
}

inline Pattern batch_pattern(const AEParams<double>& p, std::span<const double> bars) {
  const std::size_t n = static_cast<std::size_t>(96) * p.feature_dim;
  Pattern pattern;
  for (std::size_t b = 0; b * n < bars.size(); ++b) run(p, bars.subspan(b * n, n), &pattern);
  return pattern;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  /// Parameters whose +-eps step changed the activation pattern and were
  /// re-measured with a smaller step.
  std::size_t reduced_step = 0;
};

/// Central finite differences of the library loss against the library
/// gradient, over every parameter. Relative error uses max(|a|, |n|) with a
/// floor of `abs_floor` for parameters whose gradient vanishes. Where a step
/// of eps crosses a ReLU or pooling switch the loss is not differentiable
/// along the step, so the step is divided by 10 until the activation pattern
/// holds on both sides (down to eps * 1e-4).
inline GradCheck finite_difference_check(const AEParams<double>& params,
                                         std::span<const double> bars, double eps = 1e-4,
                                         double abs_floor = 1e-7) {
  const auto fwd = forward<double>(params, bars);
  const auto g = backward<double>(params, fwd, bars);
  const Pattern base = batch_pattern(params, bars);
  AEParams<double> p = params;
  auto pt = p.tensors();
  const auto gt = g.tensors();
  GradCheck r;
  std::size_t flat_index = 0;
  for (std::size_t t = 0; t < pt.size(); ++t) {
    for (std::size_t i = 0; i < pt[t].size(); ++i, ++flat_index) {
      const double saved = pt[t][i];
      double step = eps;
      for (int k = 0; k < 4; ++k, step /= 10.0) {
        pt[t][i] = saved + step;
        const bool plus_same = batch_pattern(p, bars) == base;
        pt[t][i] = saved - step;
        const bool minus_same = batch_pattern(p, bars) == base;
        if (plus_same && minus_same) break;
      }
      if (step != eps) ++r.reduced_step;
      pt[t][i] = saved + step;
      const auto fp = forward<double>(p, bars);
      const double lp = mse_loss<double>(bars, fp.reconstructions);
      pt[t][i] = saved - step;
      const auto fm = forward<double>(p, bars);
      const double lm = mse_loss<double>(bars, fm.reconstructions);
      pt[t][i] = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double analytic = gt[t][i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), abs_floor});
      const double rel = std::abs(numeric - analytic) / denom;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_index = flat_index;
      }
      ++r.checked;
    }
  }
  return r;
}

}  // namespace barseg::oracle
