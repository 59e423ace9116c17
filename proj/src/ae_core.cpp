#include "barseg/ae_core.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "barseg/error.h"
#include "barseg/parallel.h"

namespace barseg {

namespace {

constexpr int kH0 = kAeRows;
constexpr int kH1 = kAeRows / 2;
constexpr int kH2 = kAeRows / 4;

/// Dot product with 16 interleaved partial sums: vectorizes without
/// reassociation flags and always sums in the same order.
template <typename Real>
Real dot(const Real* __restrict a, const Real* __restrict b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  Real acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  }
  Real tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  Real s = 0;
  for (std::size_t l = 0; l < kLanes; ++l) s += acc[l];
  return s + tail;
}

/// Nine dot products of `a` against shifted copies of `b` in one pass.
/// Per tap, the lanes and reduction match dot() exactly.
template <typename Real>
void dot9(const Real* __restrict a, const Real* __restrict b, const std::size_t* off, std::size_t n,
          Real* out) {
  constexpr std::size_t kLanes = 16;
  typedef Real Vec __attribute__((vector_size(kLanes * sizeof(Real))));
  const auto load = [](const Real* p) {
    Vec v;
    std::memcpy(&v, p, sizeof v);
    return v;
  };
  Vec acc[9] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const Vec x = load(a + i);
    for (int t = 0; t < 9; ++t) acc[t] += x * load(b + off[t] + i);
  }
  for (int t = 0; t < 9; ++t) {
    const Real* bt = b + off[t];
    Real tail = 0;
    for (std::size_t j = i; j < n; ++j) tail += a[j] * bt[j];
    Real s = 0;
    for (std::size_t l = 0; l < kLanes; ++l) s += acc[t][l];
    out[t] = s + tail;
  }
}

template <typename Real>
Real sum(const Real* a, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  Real acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l];
  }
  Real tail = 0;
  for (; i < n; ++i) tail += a[i];
  Real s = 0;
  for (std::size_t l = 0; l < kLanes; ++l) s += acc[l];
  return s + tail;
}

// 3x3 convolution, stride 1. `in` holds cin zero-bordered (H+2) x (W+2)
// planes; `out` receives cout H x W planes. Each output plane is computed on
// the bordered row pitch, so every tap is one long shifted pass; the two
// extra columns per row are discarded. `work` needs H*(W+2) entries.
template <typename Real>
void conv3x3_forward(const Real* in, int cin, const Real* w, const Real* b, int cout, int H, int W,
                     Real* out, Real* work) {
  const int Wp = W + 2;
  const std::size_t in_plane = static_cast<std::size_t>(H + 2) * Wp;
  const std::size_t n = static_cast<std::size_t>(H) * Wp - 2;
  for (int oc = 0; oc < cout; ++oc) {
    Real* __restrict o = work;
    std::fill(o, o + n, b[oc]);
    for (int ic = 0; ic < cin; ++ic) {
      const Real* __restrict s = in + ic * in_plane;
      const Real* k = w + (oc * cin + ic) * 9;
      const Real k0 = k[0], k1 = k[1], k2 = k[2], k3 = k[3], k4 = k[4], k5 = k[5], k6 = k[6],
                 k7 = k[7], k8 = k[8];
      const Real* __restrict s1 = s + Wp;
      const Real* __restrict s2 = s + 2 * Wp;
      for (std::size_t i = 0; i < n; ++i) {
        o[i] += k0 * s[i] + k1 * s[i + 1] + k2 * s[i + 2] + k3 * s1[i] + k4 * s1[i + 1] +
                k5 * s1[i + 2] + k6 * s2[i] + k7 * s2[i + 1] + k8 * s2[i + 2];
      }
    }
    Real* dst = out + static_cast<std::size_t>(oc) * H * W;
    for (int y = 0; y < H; ++y) std::copy_n(o + static_cast<std::size_t>(y) * Wp, W, dst + static_cast<std::size_t>(y) * W);
  }
}

template <typename Real>
std::size_t conv3x3_work_size(int H, int W) {
  const std::size_t Wp = static_cast<std::size_t>(W) + 2;
  return 2 * Wp + 2 + (static_cast<std::size_t>(H) + 2) * Wp;
}

// Gradients of conv3x3_forward. `d_in`, when given, is a zero-bordered
// buffer shaped like `in` that receives (+=) the input gradient, border
// included. `work` needs conv3x3_work_size entries.
template <typename Real>
void conv3x3_backward(const Real* in, int cin, const Real* w, int cout, int H, int W,
                      const Real* d_out, Real* dw, Real* db, Real* d_in, Real* work) {
  const int Wp = W + 2;
  const std::size_t in_plane = static_cast<std::size_t>(H + 2) * Wp;
  const std::size_t out_plane = static_cast<std::size_t>(H) * W;
  const std::size_t pad = 2 * static_cast<std::size_t>(Wp) + 2;
  const std::size_t n = static_cast<std::size_t>(H) * Wp - 2;
  const std::size_t offsets[9] = {0, 1, 2, static_cast<std::size_t>(Wp), static_cast<std::size_t>(Wp) + 1,
                                  static_cast<std::size_t>(Wp) + 2, 2 * static_cast<std::size_t>(Wp),
                                  2 * static_cast<std::size_t>(Wp) + 1, 2 * static_cast<std::size_t>(Wp) + 2};
  // d_out of one map on the bordered pitch, preceded by `pad` zeros and
  // zero in the discarded columns.
  Real* D = work;
  std::fill(D, D + conv3x3_work_size<Real>(H, W), Real(0));
  for (int oc = 0; oc < cout; ++oc) {
    const Real* d = d_out + oc * out_plane;
    db[oc] = sum(d, out_plane);
    for (int y = 0; y < H; ++y) std::copy_n(d + static_cast<std::size_t>(y) * W, W, D + pad + static_cast<std::size_t>(y) * Wp);
    const Real* __restrict g = D + pad;
    for (int ic = 0; ic < cin; ++ic) {
      const Real* __restrict src = in + ic * in_plane;
      Real* k_grad = dw + (oc * cin + ic) * 9;
      dot9(g, src, offsets, n, k_grad);

      if (d_in != nullptr) {
        // d_in[j] += sum_t k_t * d[j - offset_t], read from the padded copy.
        const Real* k = w + (oc * cin + ic) * 9;
        const Real k0 = k[0], k1 = k[1], k2 = k[2], k3 = k[3], k4 = k[4], k5 = k[5], k6 = k[6],
                   k7 = k[7], k8 = k[8];
        Real* __restrict r = d_in + ic * in_plane;
        const Real* __restrict q0 = D + pad - offsets[0];
        const Real* __restrict q1 = D + pad - offsets[1];
        const Real* __restrict q2 = D + pad - offsets[2];
        const Real* __restrict q3 = D + pad - offsets[3];
        const Real* __restrict q4 = D + pad - offsets[4];
        const Real* __restrict q5 = D + pad - offsets[5];
        const Real* __restrict q6 = D + pad - offsets[6];
        const Real* __restrict q7 = D + pad - offsets[7];
        const Real* __restrict q8 = D + pad - offsets[8];
        for (std::size_t j = 0; j < in_plane; ++j) {
          r[j] += k0 * q0[j] + k1 * q1[j] + k2 * q2[j] + k3 * q3[j] + k4 * q4[j] + k5 * q5[j] +
                  k6 * q6[j] + k7 * q7[j] + k8 * q8[j];
        }
      }
    }
  }
}

// ReLU followed by 2x2 max pooling of C planes H x W. The first maximum in
// row-major window order wins ties. Output planes are (H/2 + 2*border) x
// (W/2 + 2*border) with the pooled values in the interior.
template <typename Real>
void relu_maxpool(const Real* pre, int C, int H, int W, Real* out, std::uint8_t* arg, int border) {
  const int h = H / 2, w = W / 2;
  const int ow = w + 2 * border;
  const std::size_t out_plane = static_cast<std::size_t>(h + 2 * border) * ow;
  for (int c = 0; c < C; ++c) {
    const Real* p = pre + static_cast<std::size_t>(c) * H * W;
    for (int y = 0; y < h; ++y) {
      Real* orow = out + c * out_plane + static_cast<std::size_t>(y + border) * ow + border;
      std::uint8_t* arow = arg + (static_cast<std::size_t>(c) * h + y) * w;
      for (int x = 0; x < w; ++x) {
        const Real* top = p + static_cast<std::size_t>(2 * y) * W + 2 * x;
        const Real v0 = std::max(top[0], Real(0)), v1 = std::max(top[1], Real(0));
        const Real v2 = std::max(top[W], Real(0)), v3 = std::max(top[W + 1], Real(0));
        // Strict comparisons keep the first maximum; written branch-free.
        Real m = v0;
        std::uint8_t best = 0;
        best = v1 > m ? 1 : best;
        m = v1 > m ? v1 : m;
        best = v2 > m ? 2 : best;
        m = v2 > m ? v2 : m;
        best = v3 > m ? 3 : best;
        m = v3 > m ? v3 : m;
        orow[x] = m;
        arow[x] = best;
      }
    }
  }
}

// Routes pooled gradients back to the argmax positions and applies the ReLU
// derivative. `d_pooled` uses the same bordered layout as relu_maxpool.
// Every cell of d_pre is written.
template <typename Real>
void relu_maxpool_backward(const Real* pre, const std::uint8_t* arg, int C, int H, int W,
                           const Real* d_pooled, int border, Real* d_pre) {
  const int h = H / 2, w = W / 2;
  const int ow = w + 2 * border;
  const std::size_t in_plane = static_cast<std::size_t>(h + 2 * border) * ow;
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < h; ++y) {
      const Real* drow = d_pooled + c * in_plane + static_cast<std::size_t>(y + border) * ow + border;
      const std::uint8_t* arow = arg + (static_cast<std::size_t>(c) * h + y) * w;
      const std::size_t top = static_cast<std::size_t>(c) * H * W + static_cast<std::size_t>(2 * y) * W;
      const Real* p0 = pre + top;
      const Real* p1 = p0 + W;
      Real* g0 = d_pre + top;
      Real* g1 = g0 + W;
      for (int x = 0; x < w; ++x) {
        const std::uint8_t a = arow[x];
        const Real d = drow[x];
        g0[2 * x] = (a == 0 && p0[2 * x] > Real(0)) ? d : Real(0);
        g0[2 * x + 1] = (a == 1 && p0[2 * x + 1] > Real(0)) ? d : Real(0);
        g1[2 * x] = (a == 2 && p1[2 * x] > Real(0)) ? d : Real(0);
        g1[2 * x + 1] = (a == 3 && p1[2 * x + 1] > Real(0)) ? d : Real(0);
      }
    }
  }
}

// Transposed 3x3 convolution, stride 2, padding 1, output padding 1:
// out[oc][2iy-1+ky][2ix-1+kx] += in[ic][iy][ix] * w[ic][oc][ky][kx].
//
// The output splits into four phase planes by row and column parity. With
// the input stored on a pitch of W+1 plus one zero row, output (2r+py,
// 2x+px) sits at flat index i = r*(W+1) + x of plane (py, px) and reads
//   (0,0): w11 s[i]
//   (0,1): w12 s[i] + w10 s[i+1]
//   (1,0): w21 s[i] + w01 s[i+P]
//   (1,1): w22 s[i] + w20 s[i+1] + w02 s[i+P] + w00 s[i+P+1]
// with P = W+1. Column W of each plane is discarded.
template <typename Real>
std::size_t tconv_work_size(int cin, int cout, int H, int W) {
  const std::size_t P = static_cast<std::size_t>(W) + 1;
  const std::size_t plane = static_cast<std::size_t>(H) * P;
  const std::size_t in_pad = static_cast<std::size_t>(cin) * (H + 1) * P;
  return in_pad + std::max(4 * plane, 4 * static_cast<std::size_t>(cout) * (P + 1 + plane) + plane);
}

template <typename Real>
void tconv_pad_input(const Real* in, int cin, int H, int W, Real* in_pad) {
  const std::size_t P = static_cast<std::size_t>(W) + 1;
  std::fill(in_pad, in_pad + static_cast<std::size_t>(cin) * (H + 1) * P, Real(0));
  for (int ic = 0; ic < cin; ++ic) {
    for (int y = 0; y < H; ++y) {
      std::copy_n(in + (static_cast<std::size_t>(ic) * H + y) * W, W,
                  in_pad + (static_cast<std::size_t>(ic) * (H + 1) + y) * P);
    }
  }
}

template <typename Real>
void tconv_forward(const Real* in, int cin, const Real* w, const Real* b, int cout, int H, int W,
                   Real* out, Real* work) {
  const std::size_t P = static_cast<std::size_t>(W) + 1;
  const std::size_t plane = static_cast<std::size_t>(H) * P;
  const std::size_t in_plane = static_cast<std::size_t>(H + 1) * P;
  const std::size_t n = plane - 1;
  const int OW = 2 * W;
  Real* in_pad = work;
  tconv_pad_input(in, cin, H, W, in_pad);
  Real* __restrict p00 = in_pad + static_cast<std::size_t>(cin) * in_plane;
  Real* __restrict p01 = p00 + plane;
  Real* __restrict p10 = p01 + plane;
  Real* __restrict p11 = p10 + plane;
  for (int oc = 0; oc < cout; ++oc) {
    std::fill(p00, p00 + 4 * plane, b[oc]);
    for (int ic = 0; ic < cin; ++ic) {
      const Real* __restrict s = in_pad + ic * in_plane;
      const Real* __restrict sP = s + P;
      const Real* k = w + (ic * cout + oc) * 9;
      const Real w00 = k[0], w01 = k[1], w02 = k[2], w10 = k[3], w11 = k[4], w12 = k[5],
                 w20 = k[6], w21 = k[7], w22 = k[8];
      // One loop per plane keeps each vectorizable without alias checks.
      for (std::size_t i = 0; i < n; ++i) p00[i] += w11 * s[i];
      for (std::size_t i = 0; i < n; ++i) p01[i] += w12 * s[i] + w10 * s[i + 1];
      for (std::size_t i = 0; i < n; ++i) p10[i] += w21 * s[i] + w01 * sP[i];
      for (std::size_t i = 0; i < n; ++i) {
        p11[i] += w22 * s[i] + w20 * s[i + 1] + w02 * sP[i] + w00 * sP[i + 1];
      }
    }
    Real* o = out + static_cast<std::size_t>(oc) * 2 * H * OW;
    for (int r = 0; r < H; ++r) {
      Real* even = o + static_cast<std::size_t>(2 * r) * OW;
      Real* odd = even + OW;
      const std::size_t base = static_cast<std::size_t>(r) * P;
      for (int x = 0; x < W; ++x) {
        even[2 * x] = p00[base + x];
        even[2 * x + 1] = p01[base + x];
        odd[2 * x] = p10[base + x];
        odd[2 * x + 1] = p11[base + x];
      }
    }
  }
}

// Gradients of tconv_forward. Writes dw/db, and d_in (cin x H x W) when
// non-null. `work` needs tconv_work_size entries.
template <typename Real>
void tconv_backward(const Real* in, int cin, const Real* w, int cout, int H, int W,
                    const Real* d_out, Real* dw, Real* db, Real* d_in, Real* work) {
  const std::size_t P = static_cast<std::size_t>(W) + 1;
  const std::size_t plane = static_cast<std::size_t>(H) * P;
  const std::size_t in_plane = static_cast<std::size_t>(H + 1) * P;
  const std::size_t n = plane - 1;
  const std::size_t lead = P + 1;  // zeros before each phase plane
  const std::size_t stride = lead + plane;
  const int OW = 2 * W;
  Real* in_pad = work;
  tconv_pad_input(in, cin, H, W, in_pad);
  // Phase planes of d_out: [oc][phase] with `lead` zeros in front and zero
  // discarded columns.
  Real* D = in_pad + static_cast<std::size_t>(cin) * in_plane;
  Real* ds = D + 4 * static_cast<std::size_t>(cout) * stride;
  std::fill(D, D + 4 * static_cast<std::size_t>(cout) * stride, Real(0));
  for (int oc = 0; oc < cout; ++oc) {
    const Real* g = d_out + static_cast<std::size_t>(oc) * 2 * H * OW;
    db[oc] = sum(g, static_cast<std::size_t>(2 * H) * OW);
    Real* q = D + 4 * static_cast<std::size_t>(oc) * stride + lead;
    for (int r = 0; r < H; ++r) {
      const Real* even = g + static_cast<std::size_t>(2 * r) * OW;
      const Real* odd = even + OW;
      const std::size_t base = static_cast<std::size_t>(r) * P;
      for (int x = 0; x < W; ++x) {
        q[base + x] = even[2 * x];
        q[stride + base + x] = even[2 * x + 1];
        q[2 * stride + base + x] = odd[2 * x];
        q[3 * stride + base + x] = odd[2 * x + 1];
      }
    }
  }
  for (int ic = 0; ic < cin; ++ic) {
    const Real* s = in_pad + ic * in_plane;
    if (d_in != nullptr) std::fill(ds, ds + plane, Real(0));
    for (int oc = 0; oc < cout; ++oc) {
      const Real* __restrict q00 = D + 4 * static_cast<std::size_t>(oc) * stride + lead;
      const Real* __restrict q01 = q00 + stride;
      const Real* __restrict q10 = q01 + stride;
      const Real* __restrict q11 = q10 + stride;
      Real* kg = dw + (ic * cout + oc) * 9;
      kg[4] = dot(q00, s, n);
      kg[5] = dot(q01, s, n);
      kg[3] = dot(q01, s + 1, n);
      kg[7] = dot(q10, s, n);
      kg[1] = dot(q10, s + P, n);
      kg[8] = dot(q11, s, n);
      kg[6] = dot(q11, s + 1, n);
      kg[2] = dot(q11, s + P, n);
      kg[0] = dot(q11, s + P + 1, n);
      if (d_in == nullptr) continue;
      const Real* k = w + (ic * cout + oc) * 9;
      const Real w00 = k[0], w01 = k[1], w02 = k[2], w10 = k[3], w11 = k[4], w12 = k[5],
                 w20 = k[6], w21 = k[7], w22 = k[8];
      const Real* __restrict q01m1 = q01 - 1;
      const Real* __restrict q10mP = q10 - P;
      const Real* __restrict q11m1 = q11 - 1;
      const Real* __restrict q11mP = q11 - P;
      const Real* __restrict q11mP1 = q11 - P - 1;
      Real* __restrict acc = ds;
      for (std::size_t j = 0; j < plane; ++j) {
        acc[j] += w11 * q00[j] + w12 * q01[j] + w10 * q01m1[j] + w21 * q10[j] + w01 * q10mP[j] +
                  w22 * q11[j] + w20 * q11m1[j] + w02 * q11mP[j] + w00 * q11mP1[j];
      }
    }
    if (d_in != nullptr) {
      for (int y = 0; y < H; ++y) {
        std::copy_n(ds + static_cast<std::size_t>(y) * P, W, d_in + (static_cast<std::size_t>(ic) * H + y) * W);
      }
    }
  }
}

template <typename Real>
bool all_finite(const std::vector<Real>& v) {
  for (Real x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

template <typename Real>
std::size_t work_size(int feature_dim) {
  const int W1 = feature_dim / 2, W2 = feature_dim / 4;
  return std::max({tconv_work_size<Real>(kConv2Maps, kConv1Maps, kH2, W2),
                   tconv_work_size<Real>(kConv1Maps, 1, kH1, W1),
                   conv3x3_work_size<Real>(kH0, feature_dim), conv3x3_work_size<Real>(kH1, W1)});
}

void check_shape(int feature_dim, int d_ls) {
  if (feature_dim <= 0 || feature_dim % 4 != 0) {
    throw Error(Errc::shape_mismatch, "feature dimension must be a positive multiple of 4");
  }
  if (d_ls < 1) throw Error(Errc::invalid_argument, "latent dimension must be at least 1");
}

template <typename Real>
void run_encoder(const AEParams<Real>& p, std::span<const Real> bar, BarTape<Real>& t) {
  Real* work = t.work.data();
  const int F = p.feature_dim;
  const int W1 = F / 2;
  if (bar.size() != static_cast<std::size_t>(kH0) * F) {
    throw Error(Errc::shape_mismatch, "bar must hold 96 x F values");
  }
  for (int y = 0; y < kH0; ++y) {
    std::copy_n(bar.data() + static_cast<std::size_t>(y) * F, F,
                t.input_pad.data() + static_cast<std::size_t>(y + 1) * (F + 2) + 1);
  }
  conv3x3_forward(t.input_pad.data(), 1, p.conv1_w.data(), p.conv1_b.data(), kConv1Maps, kH0, F,
                  t.conv1_pre.data(), work);
  relu_maxpool(t.conv1_pre.data(), kConv1Maps, kH0, F, t.pool1_pad.data(), t.pool1_arg.data(), 1);
  conv3x3_forward(t.pool1_pad.data(), kConv1Maps, p.conv2_w.data(), p.conv2_b.data(), kConv2Maps,
                  kH1, W1, t.conv2_pre.data(), work);
  relu_maxpool(t.conv2_pre.data(), kConv2Maps, kH1, W1, t.pool2.data(), t.pool2_arg.data(), 0);
  const std::size_t flat = t.pool2.size();
  for (int i = 0; i < p.d_ls; ++i) {
    t.latent[i] = p.enc_fc_b[i] + dot(p.enc_fc_w.data() + i * flat, t.pool2.data(), flat);
  }
  if (!all_finite(t.latent)) throw Error(Errc::non_finite, "non-finite latent activation");
}

// dec_fc_w is [flat][d_ls]; the decoder reads it transposed so that the
// product is d_ls long passes over the flat features.
template <typename Real>
void transpose_dec_weights(const AEParams<Real>& p, std::vector<Real>& wt) {
  const std::size_t flat = p.dec_fc_b.size();
  const auto d = static_cast<std::size_t>(p.d_ls);
  wt.resize(flat * d);
  for (std::size_t r = 0; r < flat; ++r) {
    for (std::size_t j = 0; j < d; ++j) wt[j * flat + r] = p.dec_fc_w[r * d + j];
  }
}

template <typename Real>
void run_decoder(const AEParams<Real>& p, BarTape<Real>& t, const Real* dec_wt) {
  Real* scratch = t.work.data();
  const int F = p.feature_dim;
  const int W1 = F / 2, W2 = F / 4;
  const std::size_t flat = t.dec_pre.size();
  Real* __restrict pre = t.dec_pre.data();
  std::copy(p.dec_fc_b.begin(), p.dec_fc_b.end(), pre);
  for (int j = 0; j < p.d_ls; ++j) {
    const Real zj = t.latent[j];
    const Real* __restrict col = dec_wt + static_cast<std::size_t>(j) * flat;
    for (std::size_t r = 0; r < flat; ++r) pre[r] += zj * col[r];
  }
  for (std::size_t r = 0; r < flat; ++r) t.dec_act[r] = std::max(pre[r], Real(0));
  tconv_forward(t.dec_act.data(), kConv2Maps, p.tconv1_w.data(), p.tconv1_b.data(), kConv1Maps,
                kH2, W2, t.tconv1_pre.data(), scratch);
  for (std::size_t i = 0; i < t.tconv1_pre.size(); ++i) {
    t.tconv1_act[i] = std::max(t.tconv1_pre[i], Real(0));
  }
  tconv_forward(t.tconv1_act.data(), kConv1Maps, p.tconv2_w.data(), p.tconv2_b.data(), 1, kH1, W1,
                t.output.data(), scratch);
  if (!all_finite(t.output)) throw Error(Errc::non_finite, "non-finite reconstruction");
}

/// Backward pass for one bar. Fills every gradient except the two linear
/// weight matrices, whose rank-one terms are returned through d_latent
/// (dL/dz) and d_dec_pre (dL/d pre-activation of dec_fc).
template <typename Real>
void backward_bar(const AEParams<Real>& p, const Real* dec_wt, const BarTape<Real>& t,
                  std::span<const Real> bar, Real scale, Gradients<Real>& g,
                  std::vector<Real>& d_latent, std::vector<Real>& d_dec_pre,
                  std::vector<Real>& scratch) {
  const int F = p.feature_dim;
  const int W1 = F / 2, W2 = F / 4;
  const std::size_t flat = t.pool2.size();
  const std::size_t out_size = t.output.size();
  const std::size_t act1 = t.tconv1_pre.size();
  const std::size_t pool1 = t.pool1_pad.size();
  const std::size_t conv1 = t.conv1_pre.size();
  const std::size_t conv2 = t.conv2_pre.size();
  const std::size_t tsz = work_size<Real>(F);
  // Layout of the per-bar scratch region.
  scratch.resize(out_size + act1 + flat + flat + conv2 + pool1 + conv1 + tsz);
  Real* d_out = scratch.data();
  Real* d_act1 = d_out + out_size;
  Real* d_dec_act = d_act1 + act1;
  Real* d_flat = d_dec_act + flat;
  Real* d_conv2 = d_flat + flat;
  Real* d_pool1 = d_conv2 + conv2;
  Real* d_conv1 = d_pool1 + pool1;
  Real* work = d_conv1 + conv1;

  for (std::size_t i = 0; i < out_size; ++i) d_out[i] = scale * (t.output[i] - bar[i]);

  tconv_backward(t.tconv1_act.data(), kConv1Maps, p.tconv2_w.data(), 1, kH1, W1, d_out,
                 g.tconv2_w.data(), g.tconv2_b.data(), d_act1, work);
  for (std::size_t i = 0; i < act1; ++i) {
    if (!(t.tconv1_pre[i] > Real(0))) d_act1[i] = 0;
  }
  tconv_backward(t.dec_act.data(), kConv2Maps, p.tconv1_w.data(), kConv1Maps, kH2, W2, d_act1,
                 g.tconv1_w.data(), g.tconv1_b.data(), d_dec_act, work);

  d_dec_pre.assign(flat, Real(0));
  for (std::size_t r = 0; r < flat; ++r) {
    d_dec_pre[r] = t.dec_pre[r] > Real(0) ? d_dec_act[r] : Real(0);
  }
  std::copy(d_dec_pre.begin(), d_dec_pre.end(), g.dec_fc_b.begin());

  d_latent.resize(p.d_ls);
  for (int j = 0; j < p.d_ls; ++j) {
    d_latent[j] = dot(dec_wt + static_cast<std::size_t>(j) * flat, d_dec_pre.data(), flat);
  }
  std::copy(d_latent.begin(), d_latent.end(), g.enc_fc_b.begin());

  std::fill(d_flat, d_flat + flat, Real(0));
  for (int i = 0; i < p.d_ls; ++i) {
    const Real di = d_latent[i];
    const Real* __restrict wi = p.enc_fc_w.data() + i * flat;
    for (std::size_t j = 0; j < flat; ++j) d_flat[j] += wi[j] * di;
  }

  relu_maxpool_backward(t.conv2_pre.data(), t.pool2_arg.data(), kConv2Maps, kH1, W1, d_flat, 0,
                        d_conv2);
  std::fill(d_pool1, d_pool1 + pool1, Real(0));
  conv3x3_backward(t.pool1_pad.data(), kConv1Maps, p.conv2_w.data(), kConv2Maps, kH1, W1, d_conv2,
                   g.conv2_w.data(), g.conv2_b.data(), d_pool1, work);
  // The border of d_pool1 collects gradient for padding cells; only the
  // interior is read back.
  relu_maxpool_backward(t.conv1_pre.data(), t.pool1_arg.data(), kConv1Maps, kH0, F, d_pool1, 1,
                        d_conv1);
  conv3x3_backward<Real>(t.input_pad.data(), 1, p.conv1_w.data(), kConv1Maps, kH0, F, d_conv1,
                         g.conv1_w.data(), g.conv1_b.data(), nullptr, work);
}

template <typename Real>
Gradients<Real> small_gradients(int feature_dim, int d_ls) {
  auto g = Gradients<Real>::zeros(feature_dim, d_ls);
  g.enc_fc_w.clear();
  g.dec_fc_w.clear();
  return g;
}

/// Adds every tensor of `src` that is non-empty into `dst`.
template <typename Real>
void accumulate_small(Gradients<Real>& dst, const Gradients<Real>& src) {
  auto d = dst.tensors();
  auto s = src.tensors();
  for (std::size_t t = 0; t < d.size(); ++t) {
    if (s[t].empty()) continue;
    for (std::size_t i = 0; i < s[t].size(); ++i) d[t][i] += s[t][i];
  }
}

/// Adds the per-bar rank-one linear weight gradients in bar order.
template <typename Real>
void accumulate_linear(Gradients<Real>& g, std::span<const std::vector<Real>* const> d_latent,
                       std::span<const std::vector<Real>* const> flat_in,
                       std::span<const std::vector<Real>* const> d_dec_pre,
                       std::span<const std::vector<Real>* const> latent, int threads) {
  const std::size_t flat = g.dec_fc_b.size();
  const int d_ls = g.d_ls;
  const std::size_t bars = d_latent.size();
  parallel_for(static_cast<std::size_t>(d_ls), threads, [&](std::size_t i) {
    Real* __restrict row = g.enc_fc_w.data() + i * flat;
    for (std::size_t b = 0; b < bars; ++b) {
      const Real di = (*d_latent[b])[i];
      const Real* __restrict x = flat_in[b]->data();
      for (std::size_t j = 0; j < flat; ++j) row[j] += di * x[j];
    }
  });
  // dec_fc_w is [flat][d_ls]; sum each column contiguously, then scatter.
  std::vector<Real> col_sum(flat * static_cast<std::size_t>(d_ls));
  parallel_for(static_cast<std::size_t>(d_ls), threads, [&](std::size_t j) {
    Real* __restrict col = col_sum.data() + j * flat;
    for (std::size_t b = 0; b < bars; ++b) {
      const Real zj = (*latent[b])[j];
      const Real* __restrict dr = d_dec_pre[b]->data();
      for (std::size_t r = 0; r < flat; ++r) col[r] += zj * dr[r];
    }
  });
  for (std::size_t r = 0; r < flat; ++r) {
    Real* row = g.dec_fc_w.data() + r * d_ls;
    for (int j = 0; j < d_ls; ++j) row[j] += col_sum[static_cast<std::size_t>(j) * flat + r];
  }
}

template <typename Real>
Real squared_error(std::span<const Real> a, std::span<const Real> b) {
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Real d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// AEParams

template <typename Real>
AEParams<Real> AEParams<Real>::zeros(int feature_dim, int d_ls) {
  check_shape(feature_dim, d_ls);
  AEParams p;
  p.feature_dim = feature_dim;
  p.d_ls = d_ls;
  const std::size_t flat = static_cast<std::size_t>(p.flat_dim());
  p.conv1_w.assign(kConv1Maps * 1 * 9, 0);
  p.conv1_b.assign(kConv1Maps, 0);
  p.conv2_w.assign(kConv2Maps * kConv1Maps * 9, 0);
  p.conv2_b.assign(kConv2Maps, 0);
  p.enc_fc_w.assign(flat * d_ls, 0);
  p.enc_fc_b.assign(d_ls, 0);
  p.dec_fc_w.assign(flat * d_ls, 0);
  p.dec_fc_b.assign(flat, 0);
  p.tconv1_w.assign(kConv2Maps * kConv1Maps * 9, 0);
  p.tconv1_b.assign(kConv1Maps, 0);
  p.tconv2_w.assign(kConv1Maps * 1 * 9, 0);
  p.tconv2_b.assign(1, 0);
  return p;
}

template <typename Real>
std::array<std::span<Real>, 12> AEParams<Real>::tensors() {
  return {conv1_w, conv1_b, conv2_w, conv2_b, enc_fc_w, enc_fc_b,
          dec_fc_w, dec_fc_b, tconv1_w, tconv1_b, tconv2_w, tconv2_b};
}

template <typename Real>
std::array<std::span<const Real>, 12> AEParams<Real>::tensors() const {
  return {conv1_w, conv1_b, conv2_w, conv2_b, enc_fc_w, enc_fc_b,
          dec_fc_w, dec_fc_b, tconv1_w, tconv1_b, tconv2_w, tconv2_b};
}

template <typename Real>
std::size_t AEParams<Real>::size() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

std::array<int, 12> kaiming_fan_in(int feature_dim, int d_ls) {
  const int flat = kConv2Maps * kH2 * (feature_dim / 4);
  const int conv1 = 1 * 9, conv2 = kConv1Maps * 9;
  const int tconv1 = kConv2Maps * 9, tconv2 = kConv1Maps * 9;
  return {conv1, conv1, conv2, conv2, flat, flat, d_ls, d_ls, tconv1, tconv1, tconv2, tconv2};
}

template <typename Real>
AEParams<Real> init_kaiming(const AEConfig& config) {
  auto p = AEParams<Real>::zeros(config.feature_dim, config.d_ls);
  const auto fan_in = kaiming_fan_in(config.feature_dim, config.d_ls);
  std::mt19937_64 rng(config.seed);
  auto tensors = p.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const bool is_bias = t % 2 == 1;
    const double bound = is_bias ? 1.0 / std::sqrt(static_cast<double>(fan_in[t]))
                                 : std::sqrt(6.0 / fan_in[t]);
    for (Real& v : tensors[t]) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      v = static_cast<Real>((2.0 * u - 1.0) * bound);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename Real>
void BarTape<Real>::resize(int F, int latent_dim) {
  check_shape(F, latent_dim);
  feature_dim = F;
  d_ls = latent_dim;
  const int W1 = F / 2, W2 = F / 4;
  const std::size_t flat = static_cast<std::size_t>(kConv2Maps) * kH2 * W2;
  input_pad.assign(static_cast<std::size_t>(kH0 + 2) * (F + 2), 0);
  conv1_pre.assign(static_cast<std::size_t>(kConv1Maps) * kH0 * F, 0);
  pool1_pad.assign(static_cast<std::size_t>(kConv1Maps) * (kH1 + 2) * (W1 + 2), 0);
  pool1_arg.assign(static_cast<std::size_t>(kConv1Maps) * kH1 * W1, 0);
  conv2_pre.assign(static_cast<std::size_t>(kConv2Maps) * kH1 * W1, 0);
  pool2.assign(flat, 0);
  pool2_arg.assign(flat, 0);
  latent.assign(latent_dim, 0);
  dec_pre.assign(flat, 0);
  dec_act.assign(flat, 0);
  tconv1_pre.assign(static_cast<std::size_t>(kConv1Maps) * kH1 * W1, 0);
  tconv1_act.assign(tconv1_pre.size(), 0);
  output.assign(static_cast<std::size_t>(kH0) * F, 0);
  work.assign(work_size<Real>(F), 0);
}

template <typename Real>
void forward_bar(const AEParams<Real>& params, std::span<const Real> bar, BarTape<Real>& tape) {
  if (tape.feature_dim != params.feature_dim || tape.d_ls != params.d_ls) {
    tape.resize(params.feature_dim, params.d_ls);
  }
  std::vector<Real> dec_wt;
  transpose_dec_weights(params, dec_wt);
  run_encoder(params, bar, tape);
  run_decoder(params, tape, dec_wt.data());
}

template <typename Real>
void encode_bar(const AEParams<Real>& params, std::span<const Real> bar, BarTape<Real>& scratch,
                std::span<Real> latent) {
  if (scratch.feature_dim != params.feature_dim || scratch.d_ls != params.d_ls) {
    scratch.resize(params.feature_dim, params.d_ls);
  }
  if (latent.size() != static_cast<std::size_t>(params.d_ls)) {
    throw Error(Errc::shape_mismatch, "latent buffer size differs from d_ls");
  }
  run_encoder(params, bar, scratch);
  std::copy(scratch.latent.begin(), scratch.latent.end(), latent.begin());
}

template <typename Real>
ForwardResult<Real> forward(const AEParams<Real>& params, std::span<const Real> bars, int threads) {
  const std::size_t bar_size = static_cast<std::size_t>(kH0) * params.feature_dim;
  if (bars.empty() || bars.size() % bar_size != 0) {
    throw Error(Errc::shape_mismatch, "batch is not a whole number of 96 x F bars");
  }
  ForwardResult<Real> r;
  r.batch = bars.size() / bar_size;
  r.tape.resize(r.batch);
  r.latents.resize(r.batch * params.d_ls);
  r.reconstructions.resize(bars.size());
  parallel_for(r.batch, threads, [&](std::size_t b) {
    auto& t = r.tape[b];
    forward_bar(params, bars.subspan(b * bar_size, bar_size), t);
    std::copy(t.latent.begin(), t.latent.end(), r.latents.begin() + b * params.d_ls);
    std::copy(t.output.begin(), t.output.end(), r.reconstructions.begin() + b * bar_size);
  });
  return r;
}

template <typename Real>
Real mse_loss(std::span<const Real> x, std::span<const Real> reconstruction) {
  if (x.size() != reconstruction.size() || x.empty()) {
    throw Error(Errc::shape_mismatch, "loss operands differ in shape");
  }
  return squared_error(x, reconstruction) / static_cast<Real>(x.size());
}

template <typename Real>
Gradients<Real> backward(const AEParams<Real>& params, const ForwardResult<Real>& fwd,
                         std::span<const Real> x, int threads) {
  const std::size_t bar_size = static_cast<std::size_t>(kH0) * params.feature_dim;
  if (x.size() != fwd.batch * bar_size || fwd.tape.size() != fwd.batch) {
    throw Error(Errc::shape_mismatch, "tape does not match the batch");
  }
  for (const auto& t : fwd.tape) {
    if (t.feature_dim != params.feature_dim || t.d_ls != params.d_ls) {
      throw Error(Errc::shape_mismatch, "stale tape: shapes differ from the parameters");
    }
  }
  const Real scale = Real(2) / static_cast<Real>(x.size());
  std::vector<Gradients<Real>> small(fwd.batch, small_gradients<Real>(params.feature_dim, params.d_ls));
  std::vector<std::vector<Real>> d_latent(fwd.batch), d_dec(fwd.batch);
  const auto& tapes = fwd.tape;
  std::vector<Real> dec_wt;
  transpose_dec_weights(params, dec_wt);
  parallel_for(fwd.batch, threads, [&](std::size_t b) {
    std::vector<Real> scratch;
    backward_bar(params, dec_wt.data(), tapes[b], x.subspan(b * bar_size, bar_size), scale, small[b], d_latent[b],
                 d_dec[b], scratch);
  });
  auto g = Gradients<Real>::zeros(params.feature_dim, params.d_ls);
  std::vector<const std::vector<Real>*> dl, fl, dd, zl;
  for (std::size_t b = 0; b < fwd.batch; ++b) {
    accumulate_small(g, small[b]);
    dl.push_back(&d_latent[b]);
    fl.push_back(&tapes[b].pool2);
    dd.push_back(&d_dec[b]);
    zl.push_back(&tapes[b].latent);
  }
  accumulate_linear<Real>(g, dl, fl, dd, zl, threads);
  return g;
}

template <typename Real>
BatchWorkspace<Real>::BatchWorkspace(int feature_dim, int d_ls, std::size_t max_batch)
    : feature_dim_(feature_dim), d_ls_(d_ls), slots_(max_batch) {
  for (auto& s : slots_) {
    s.tape.resize(feature_dim, d_ls);
    s.small = small_gradients<Real>(feature_dim, d_ls);
  }
}

template <typename Real>
Real BatchWorkspace<Real>::loss_and_gradient(const AEParams<Real>& params,
                                             std::span<const std::span<const Real>> bars,
                                             Gradients<Real>& grads, int threads) {
  if (bars.empty() || bars.size() > slots_.size()) {
    throw Error(Errc::shape_mismatch, "batch size exceeds the workspace");
  }
  if (params.feature_dim != feature_dim_ || params.d_ls != d_ls_) {
    throw Error(Errc::shape_mismatch, "parameters do not match the workspace");
  }
  const std::size_t n = bars.size();
  const std::size_t bar_size = static_cast<std::size_t>(kH0) * feature_dim_;
  const Real scale = Real(2) / static_cast<Real>(n * bar_size);
  transpose_dec_weights(params, dec_wt_);
  parallel_for(n, threads, [&](std::size_t b) {
    DenormalGuard guard;
    Slot& s = slots_[b];
    run_encoder(params, bars[b], s.tape);
    run_decoder(params, s.tape, dec_wt_.data());
    s.loss = squared_error<Real>(s.tape.output, bars[b]);
    backward_bar(params, dec_wt_.data(), s.tape, bars[b], scale, s.small, s.d_latent, s.d_dec_pre,
                 s.scratch);
  });

  if (grads.feature_dim != feature_dim_ || grads.d_ls != d_ls_) {
    grads = Gradients<Real>::zeros(feature_dim_, d_ls_);
  } else {
    for (auto t : grads.tensors()) std::fill(t.begin(), t.end(), Real(0));
  }
  Real total = 0;
  std::vector<const std::vector<Real>*> dl, fl, dd, zl;
  for (std::size_t b = 0; b < n; ++b) {
    total += slots_[b].loss;
    accumulate_small(grads, slots_[b].small);
    dl.push_back(&slots_[b].d_latent);
    fl.push_back(&slots_[b].tape.pool2);
    dd.push_back(&slots_[b].d_dec_pre);
    zl.push_back(&slots_[b].tape.latent);
  }
  accumulate_linear<Real>(grads, dl, fl, dd, zl, threads);
  return total / static_cast<Real>(n * bar_size);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'B', 'S', 'A', 'E'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(Errc::malformed_file, "truncated checkpoint");
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.feature_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.d_ls));
  put<std::uint64_t>(out, ckpt.seed);
  put<std::uint32_t>(out, ckpt.epoch);
  for (auto t : ckpt.params.tensors()) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size_bytes()));
  }
  if (!out) throw Error(Errc::io_error, "short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::file_not_found, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw Error(Errc::malformed_file, path.string() + ": not a checkpoint");
  }
  if (get<std::uint32_t>(in) != kCheckpointVersion) {
    throw Error(Errc::malformed_file, path.string() + ": unsupported checkpoint version");
  }
  const auto F = get<std::uint32_t>(in);
  const auto d_ls = get<std::uint32_t>(in);
  Checkpoint c;
  c.seed = get<std::uint64_t>(in);
  c.epoch = get<std::uint32_t>(in);
  c.params = AEParams<float>::zeros(static_cast<int>(F), static_cast<int>(d_ls));
  for (auto t : c.params.tensors()) {
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size_bytes()));
    if (!in) throw Error(Errc::malformed_file, path.string() + ": truncated checkpoint");
  }
  return c;
}

// ---------------------------------------------------------------------------

#define BARSEG_INSTANTIATE_AE(Real)                                                              \
  template struct AEParams<Real>;                                                                \
  template struct BarTape<Real>;                                                                 \
  template class BatchWorkspace<Real>;                                                           \
  template AEParams<Real> init_kaiming<Real>(const AEConfig&);                                   \
  template void forward_bar<Real>(const AEParams<Real>&, std::span<const Real>, BarTape<Real>&); \
  template void encode_bar<Real>(const AEParams<Real>&, std::span<const Real>, BarTape<Real>&,   \
                                 std::span<Real>);                                               \
  template ForwardResult<Real> forward<Real>(const AEParams<Real>&, std::span<const Real>, int); \
  template Real mse_loss<Real>(std::span<const Real>, std::span<const Real>);                    \
  template Gradients<Real> backward<Real>(const AEParams<Real>&, const ForwardResult<Real>&,     \
                                          std::span<const Real>, int);

BARSEG_INSTANTIATE_AE(float)
BARSEG_INSTANTIATE_AE(double)

#undef BARSEG_INSTANTIATE_AE

}  // namespace barseg
