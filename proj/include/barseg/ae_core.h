#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace barseg {

/// Convolutional autoencoder for one 96 x F bar.
///
///   encoder: conv3x3(1->4) ReLU pool2x2, conv3x3(4->16) ReLU pool2x2,
///            flatten(16*24*F/4), linear -> z (no activation)
///   decoder: linear -> ReLU, reshape(16, 24, F/4),
///            tconv3x3/2(16->4) ReLU, tconv3x3/2(4->1)
///
/// Convolutions use padding 1; transposed convolutions use padding 1 and
/// output padding 1, so shapes halve and double exactly.
inline constexpr int kAeRows = 96;
inline constexpr int kConv1Maps = 4;
inline constexpr int kConv2Maps = 16;

struct AEConfig {
  int d_ls = 32;
  int feature_dim = 80;
  std::uint64_t seed = 0;
};

/// All weights and biases. Also used for gradients and optimizer moments.
///
/// Layouts: conv weights [out][in][3][3]; transposed-conv weights
/// [in][out][3][3]; linear weights [out][in].
template <typename Real>
struct AEParams {
  static constexpr std::size_t kTensorCount = 12;
  static constexpr std::array<std::string_view, kTensorCount> kTensorNames = {
      "enc_conv1.weight", "enc_conv1.bias", "enc_conv2.weight", "enc_conv2.bias",
      "enc_fc.weight",    "enc_fc.bias",    "dec_fc.weight",    "dec_fc.bias",
      "dec_tconv1.weight", "dec_tconv1.bias", "dec_tconv2.weight", "dec_tconv2.bias"};

  int feature_dim = 0;
  int d_ls = 0;

  std::vector<Real> conv1_w, conv1_b;
  std::vector<Real> conv2_w, conv2_b;
  std::vector<Real> enc_fc_w, enc_fc_b;
  std::vector<Real> dec_fc_w, dec_fc_b;
  std::vector<Real> tconv1_w, tconv1_b;
  std::vector<Real> tconv2_w, tconv2_b;

  /// Zero-filled parameters of the right shapes. Throws on invalid shapes.
  static AEParams zeros(int feature_dim, int d_ls);

  int flat_dim() const { return kConv2Maps * (kAeRows / 4) * (feature_dim / 4); }

  std::array<std::span<Real>, kTensorCount> tensors();
  std::array<std::span<const Real>, kTensorCount> tensors() const;
  std::size_t size() const;

  template <typename Other>
  AEParams<Other> cast() const {
    AEParams<Other> out = AEParams<Other>::zeros(feature_dim, d_ls);
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t t = 0; t < kTensorCount; ++t) {
      for (std::size_t i = 0; i < src[t].size(); ++i) dst[t][i] = static_cast<Other>(src[t][i]);
    }
    return out;
  }

  bool operator==(const AEParams&) const = default;
};

template <typename Real>
using Gradients = AEParams<Real>;

/// Uniform He ("kaiming") initialization: weights on +-sqrt(6/fan_in),
/// biases on +-1/sqrt(fan_in), fan_in = input channels * kernel area (or
/// input width for linear layers). Deterministic in the seed.
template <typename Real>
AEParams<Real> init_kaiming(const AEConfig& config);

/// Fan-in of each tensor in `AEParams::tensors()` order.
std::array<int, 12> kaiming_fan_in(int feature_dim, int d_ls);

/// Cached activations of one bar's forward pass.
template <typename Real>
struct BarTape {
  int feature_dim = 0;
  int d_ls = 0;
  std::vector<Real> input_pad;    // 98 x (F+2)
  std::vector<Real> conv1_pre;    // 4 x 96 x F
  std::vector<Real> pool1_pad;    // 4 x 50 x (F/2+2), post-ReLU, zero border
  std::vector<std::uint8_t> pool1_arg;
  std::vector<Real> conv2_pre;    // 16 x 48 x F/2
  std::vector<Real> pool2;        // 16 x 24 x F/4 (flattened encoder features)
  std::vector<std::uint8_t> pool2_arg;
  std::vector<Real> latent;       // d_ls
  std::vector<Real> dec_pre;      // flat
  std::vector<Real> dec_act;      // flat, post-ReLU
  std::vector<Real> tconv1_pre;   // 4 x 48 x F/2
  std::vector<Real> tconv1_act;   // 4 x 48 x F/2, post-ReLU
  std::vector<Real> output;       // 96 x F
  std::vector<Real> work;         // forward-pass scratch

  void resize(int feature_dim, int d_ls);
};

/// Runs one bar through the network, filling the tape (latent and output
/// included). Throws Errc::non_finite when an activation diverges.
template <typename Real>
void forward_bar(const AEParams<Real>& params, std::span<const Real> bar, BarTape<Real>& tape);

/// Encoder only: writes the d_ls latent vector of one bar.
template <typename Real>
void encode_bar(const AEParams<Real>& params, std::span<const Real> bar, BarTape<Real>& scratch,
                std::span<Real> latent);

template <typename Real>
struct ForwardResult {
  std::size_t batch = 0;
  std::vector<Real> latents;          // batch x d_ls
  std::vector<Real> reconstructions;  // batch x 96 x F
  std::vector<BarTape<Real>> tape;
};

/// Batched forward pass over `bars` (concatenated 96 x F matrices).
template <typename Real>
ForwardResult<Real> forward(const AEParams<Real>& params, std::span<const Real> bars,
                            int threads = 1);

/// Mean squared error over every entry of the batch.
template <typename Real>
Real mse_loss(std::span<const Real> x, std::span<const Real> reconstruction);

/// Gradient of mse_loss(x, forward(x)) with respect to every parameter.
template <typename Real>
Gradients<Real> backward(const AEParams<Real>& params, const ForwardResult<Real>& fwd,
                         std::span<const Real> x, int threads = 1);

/// Reusable buffers for fused batch loss/gradient evaluation.
template <typename Real>
class BatchWorkspace {
 public:
  BatchWorkspace(int feature_dim, int d_ls, std::size_t max_batch);

  /// Forward and backward over the given bars; overwrites `grads` with the
  /// batch gradient and returns the batch MSE. Per-bar contributions are
  /// reduced in bar order, so results do not depend on `threads`.
  Real loss_and_gradient(const AEParams<Real>& params,
                         std::span<const std::span<const Real>> bars, Gradients<Real>& grads,
                         int threads = 1);

 private:
  struct Slot {
    BarTape<Real> tape;
    Gradients<Real> small;       // linear-layer weights left empty
    std::vector<Real> d_latent;  // dL/dz
    std::vector<Real> d_dec_pre; // dL/d(dec_fc pre-activation)
    Real loss = 0;
    std::vector<Real> scratch;
  };
  int feature_dim_;
  int d_ls_;
  std::vector<Slot> slots_;
  std::vector<Real> dec_wt_;  // dec_fc_w transposed to [d_ls][flat]
};

/// Checkpoint: "BSAE", u32 version, u32 F, u32 d_ls, u64 seed, u32 epoch,
/// then each tensor as row-major little-endian float32.
struct Checkpoint {
  AEParams<float> params;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
};
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace barseg
