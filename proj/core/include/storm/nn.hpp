#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "storm/rng.hpp"

namespace storm {
namespace nn {

// From-scratch convolutional network stack with hand-written backprop. No
// autodiff framework: every layer implements its own forward/backward, and
// dense inner products are delegated to Eigen GEMMs. Templated on the scalar
// type: production runs float, gradient-integrity tests instantiate double.

// ----------------------------------------------------------------------------
// FeatureMap: H x W spatial grid with C channels, stored channels-last with a
// one-pixel zero halo around the spatial extent (buffer is (H+2) x (W+2) x C).
// The halo makes every 3x3 convolution a set of nine dense GEMMs over
// contiguous row ranges of the padded plane ("implicit GEMM"): shifting by
// (dy, dx) is just a pointer offset of dy*(W+2)+dx pixels. The GEMMs write
// garbage into halo cells between valid rows; producers re-zero the halo
// before anyone reads it. Invariant: any map handed between layers has an
// all-zero halo.
// ----------------------------------------------------------------------------
template <class S>
struct FeatureMap {
  int h = 0, w = 0, c = 0;
  std::vector<S> buf;

  FeatureMap() = default;
  FeatureMap(int h_, int w_, int c_) { resize(h_, w_, c_); }

  void resize(int h_, int w_, int c_) {
    h = h_;
    w = w_;
    c = c_;
    buf.assign(static_cast<size_t>(h + 2) * (w + 2) * c, S(0));
  }

  // Pointer to channels of valid pixel (y, x), 0-based in the valid region.
  S* at(int y, int x) {
    return buf.data() + (static_cast<size_t>(y + 1) * (w + 2) + (x + 1)) * c;
  }
  const S* at(int y, int x) const {
    return buf.data() + (static_cast<size_t>(y + 1) * (w + 2) + (x + 1)) * c;
  }

  void zero() { std::fill(buf.begin(), buf.end(), S(0)); }

  void zero_halo() {
    const int pw = w + 2;
    std::fill_n(buf.begin(), static_cast<size_t>(pw) * c, S(0));
    std::fill_n(buf.begin() + static_cast<size_t>(h + 1) * pw * c,
                static_cast<size_t>(pw) * c, S(0));
    for (int y = 1; y <= h; ++y) {
      S* row = buf.data() + static_cast<size_t>(y) * pw * c;
      std::fill_n(row, c, S(0));
      std::fill_n(row + static_cast<size_t>(pw - 1) * c, c, S(0));
    }
  }

  bool same_shape(const FeatureMap& o) const {
    return h == o.h && w == o.w && c == o.c;
  }
};

// ----------------------------------------------------------------------------
// Flat parameter storage: one contiguous value vector and one gradient vector
// for the whole model. Layers allocate [offset, offset+n) slices at
// construction; optimizers, EMA tracking and checkpoints all operate on the
// flat vectors directly.
// ----------------------------------------------------------------------------
template <class S>
class ParamStore {
 public:
  int allocate(int n) {
    const int off = static_cast<int>(values.size());
    values.resize(values.size() + n, S(0));
    grads.resize(grads.size() + n, S(0));
    return off;
  }
  void zero_grads() { std::fill(grads.begin(), grads.end(), S(0)); }
  int size() const { return static_cast<int>(values.size()); }

  std::vector<S> values;
  std::vector<S> grads;
};

namespace detail {

template <class S>
using MatMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// ----------------------------------------------------------------------------
// 3x3 same-padding convolution. Weights are stored per spatial shift as nine
// row-major (Cin x Cout) blocks, so forward, input-gradient and
// weight-gradient passes are each nine plain GEMMs over the padded plane.
// ----------------------------------------------------------------------------
template <class S>
class Conv3x3 {
 public:
  Conv3x3() = default;
  Conv3x3(ParamStore<S>& store, int cin, int cout) : cin_(cin), cout_(cout) {
    w_off_ = store.allocate(9 * cin * cout);
    b_off_ = store.allocate(cout);
  }

  void init_params(ParamStore<S>& store, Rng& rng) const {
    // He-uniform over the 3x3 receptive field; zero bias.
    const double bound = std::sqrt(6.0 / (9.0 * cin_));
    S* w = store.values.data() + w_off_;
    for (int i = 0; i < 9 * cin_ * cout_; ++i)
      w[i] = static_cast<S>(rng.uniform(-bound, bound));
    S* b = store.values.data() + b_off_;
    std::fill_n(b, cout_, S(0));
  }

  void forward(const ParamStore<S>& store, const FeatureMap<S>& in,
               FeatureMap<S>& out) const {
    check_in(in);
    out.resize(in.h, in.w, cout_);
    const int pw = in.w + 2;
    const int r0 = pw + 1;
    const int n = (in.h - 1) * pw + in.w;
    detail::MatMap<S> out_m(out.buf.data() + static_cast<size_t>(r0) * cout_,
                            n, cout_);
    for (int s = 0; s < 9; ++s) {
      const int off = (s / 3 - 1) * pw + (s % 3 - 1);
      detail::ConstMatMap<S> in_m(
          in.buf.data() + static_cast<size_t>(r0 + off) * cin_, n, cin_);
      detail::ConstMatMap<S> w_m(
          store.values.data() + w_off_ + static_cast<size_t>(s) * cin_ * cout_,
          cin_, cout_);
      out_m.noalias() += in_m * w_m;
    }
    const S* b = store.values.data() + b_off_;
    for (int y = 0; y < out.h; ++y) {
      S* row = out.at(y, 0);
      for (int x = 0; x < out.w; ++x)
        for (int ch = 0; ch < cout_; ++ch) row[x * cout_ + ch] += b[ch];
    }
    out.zero_halo();
  }

  // Accumulates parameter gradients into the store and writes dL/d(input)
  // into din (resized and overwritten). dout must have a zero halo.
  void backward(ParamStore<S>& store, const FeatureMap<S>& in,
                const FeatureMap<S>& dout, FeatureMap<S>& din) const {
    check_in(in);
    if (dout.h != in.h || dout.w != in.w || dout.c != cout_)
      throw std::runtime_error("conv3x3 backward: shape mismatch");
    din.resize(in.h, in.w, cin_);
    const int pw = in.w + 2;
    const int r0 = pw + 1;
    const int n = (in.h - 1) * pw + in.w;
    detail::ConstMatMap<S> dout_m(
        dout.buf.data() + static_cast<size_t>(r0) * cout_, n, cout_);
    for (int s = 0; s < 9; ++s) {
      const int off = (s / 3 - 1) * pw + (s % 3 - 1);
      detail::ConstMatMap<S> in_m(
          in.buf.data() + static_cast<size_t>(r0 + off) * cin_, n, cin_);
      detail::MatMap<S> dw_m(
          store.grads.data() + w_off_ + static_cast<size_t>(s) * cin_ * cout_,
          cin_, cout_);
      dw_m.noalias() += in_m.transpose() * dout_m;
      detail::ConstMatMap<S> w_m(
          store.values.data() + w_off_ + static_cast<size_t>(s) * cin_ * cout_,
          cin_, cout_);
      detail::MatMap<S> din_m(
          din.buf.data() + static_cast<size_t>(r0 + off) * cin_, n, cin_);
      din_m.noalias() += dout_m * w_m.transpose();
    }
    S* db = store.grads.data() + b_off_;
    for (int y = 0; y < dout.h; ++y) {
      const S* row = dout.at(y, 0);
      for (int x = 0; x < dout.w; ++x)
        for (int ch = 0; ch < cout_; ++ch) db[ch] += row[x * cout_ + ch];
    }
    din.zero_halo();
  }

  int cin() const { return cin_; }
  int cout() const { return cout_; }

 private:
  void check_in(const FeatureMap<S>& in) const {
    if (in.c != cin_)
      throw std::runtime_error("conv3x3: expected " + std::to_string(cin_) +
                               " input channels, got " + std::to_string(in.c));
  }

  int cin_ = 0, cout_ = 0;
  int w_off_ = 0, b_off_ = 0;
};

// ----------------------------------------------------------------------------
// Dense layer on plain vectors (noise-level embedding pathway).
// ----------------------------------------------------------------------------
template <class S>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<S>& store, int nin, int nout) : nin_(nin), nout_(nout) {
    w_off_ = store.allocate(nin * nout);
    b_off_ = store.allocate(nout);
  }

  void init_params(ParamStore<S>& store, Rng& rng, bool zero_init = false) const {
    S* w = store.values.data() + w_off_;
    if (zero_init) {
      std::fill_n(w, nin_ * nout_, S(0));
    } else {
      const double bound = std::sqrt(6.0 / (nin_ + nout_));
      for (int i = 0; i < nin_ * nout_; ++i)
        w[i] = static_cast<S>(rng.uniform(-bound, bound));
    }
    std::fill_n(store.values.data() + b_off_, nout_, S(0));
  }

  void forward(const ParamStore<S>& store, const std::vector<S>& in,
               std::vector<S>& out) const {
    if (static_cast<int>(in.size()) != nin_)
      throw std::runtime_error("linear: input size mismatch");
    out.assign(nout_, S(0));
    const S* w = store.values.data() + w_off_;  // row-major (nin x nout)
    const S* b = store.values.data() + b_off_;
    for (int i = 0; i < nin_; ++i)
      for (int j = 0; j < nout_; ++j) out[j] += in[i] * w[i * nout_ + j];
    for (int j = 0; j < nout_; ++j) out[j] += b[j];
  }

  void backward(ParamStore<S>& store, const std::vector<S>& in,
                const std::vector<S>& dout, std::vector<S>& din) const {
    din.assign(nin_, S(0));
    S* dw = store.grads.data() + w_off_;
    S* db = store.grads.data() + b_off_;
    const S* w = store.values.data() + w_off_;
    for (int i = 0; i < nin_; ++i)
      for (int j = 0; j < nout_; ++j) {
        dw[i * nout_ + j] += in[i] * dout[j];
        din[i] += w[i * nout_ + j] * dout[j];
      }
    for (int j = 0; j < nout_; ++j) db[j] += dout[j];
  }

  int nin() const { return nin_; }
  int nout() const { return nout_; }

 private:
  int nin_ = 0, nout_ = 0;
  int w_off_ = 0, b_off_ = 0;
};

// ----- Stateless spatial ops (valid region only; halos stay zero) -----

template <class S>
inline S silu_scalar(S x) {
  const S sig = S(1) / (S(1) + std::exp(-x));
  return x * sig;
}

template <class S>
void silu_forward(const FeatureMap<S>& in, FeatureMap<S>& out) {
  out.resize(in.h, in.w, in.c);
  for (int y = 0; y < in.h; ++y) {
    const S* src = in.at(y, 0);
    S* dst = out.at(y, 0);
    for (int i = 0; i < in.w * in.c; ++i) dst[i] = silu_scalar(src[i]);
  }
}

template <class S>
void silu_backward(const FeatureMap<S>& in, const FeatureMap<S>& dout,
                   FeatureMap<S>& din) {
  din.resize(in.h, in.w, in.c);
  for (int y = 0; y < in.h; ++y) {
    const S* x = in.at(y, 0);
    const S* dy = dout.at(y, 0);
    S* dx = din.at(y, 0);
    for (int i = 0; i < in.w * in.c; ++i) {
      const S sig = S(1) / (S(1) + std::exp(-x[i]));
      dx[i] = dy[i] * sig * (S(1) + x[i] * (S(1) - sig));
    }
  }
}

template <class S>
void avgpool2_forward(const FeatureMap<S>& in, FeatureMap<S>& out) {
  if (in.h % 2 || in.w % 2)
    throw std::runtime_error("avgpool2: spatial dims must be even");
  out.resize(in.h / 2, in.w / 2, in.c);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      S* dst = out.at(y, x);
      const S* a = in.at(2 * y, 2 * x);
      const S* b = in.at(2 * y, 2 * x + 1);
      const S* c2 = in.at(2 * y + 1, 2 * x);
      const S* d = in.at(2 * y + 1, 2 * x + 1);
      for (int ch = 0; ch < in.c; ++ch)
        dst[ch] = (a[ch] + b[ch] + c2[ch] + d[ch]) * S(0.25);
    }
}

template <class S>
void avgpool2_backward(const FeatureMap<S>& dout, FeatureMap<S>& din, int in_h,
                       int in_w) {
  din.resize(in_h, in_w, dout.c);
  for (int y = 0; y < dout.h; ++y)
    for (int x = 0; x < dout.w; ++x) {
      const S* g = dout.at(y, x);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          S* dst = din.at(2 * y + dy, 2 * x + dx);
          for (int ch = 0; ch < dout.c; ++ch) dst[ch] = g[ch] * S(0.25);
        }
    }
}

template <class S>
void upsample2_forward(const FeatureMap<S>& in, FeatureMap<S>& out) {
  out.resize(in.h * 2, in.w * 2, in.c);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      const S* src = in.at(y, x);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          S* dst = out.at(2 * y + dy, 2 * x + dx);
          for (int ch = 0; ch < in.c; ++ch) dst[ch] = src[ch];
        }
    }
}

template <class S>
void upsample2_backward(const FeatureMap<S>& dout, FeatureMap<S>& din,
                        int in_h, int in_w) {
  din.resize(in_h, in_w, dout.c);
  for (int y = 0; y < in_h; ++y)
    for (int x = 0; x < in_w; ++x) {
      S* dst = din.at(y, x);
      for (int ch = 0; ch < dout.c; ++ch) dst[ch] = S(0);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const S* g = dout.at(2 * y + dy, 2 * x + dx);
          for (int ch = 0; ch < dout.c; ++ch) dst[ch] += g[ch];
        }
    }
}

template <class S>
void add_inplace(FeatureMap<S>& a, const FeatureMap<S>& b) {
  if (!a.same_shape(b)) throw std::runtime_error("add: shape mismatch");
  for (int y = 0; y < a.h; ++y) {
    S* dst = a.at(y, 0);
    const S* src = b.at(y, 0);
    for (int i = 0; i < a.w * a.c; ++i) dst[i] += src[i];
  }
}

// ----------------------------------------------------------------------------
// Per-channel feature-wise scale-and-shift driven by the noise-level
// embedding: out = in * (1 + scale_c) + shift_c, where (scale, shift) come
// from a per-site Linear on the embedding vector. Zero-initialized so the
// modulation starts as the identity.
// ----------------------------------------------------------------------------
template <class S>
class FilmSite {
 public:
  FilmSite() = default;
  FilmSite(ParamStore<S>& store, int emb_dim, int channels)
      : channels_(channels), proj_(store, emb_dim, 2 * channels) {}

  void init_params(ParamStore<S>& store, Rng& rng) const {
    proj_.init_params(store, rng, /*zero_init=*/true);
  }

  void forward(const ParamStore<S>& store, const std::vector<S>& emb,
               const FeatureMap<S>& in, FeatureMap<S>& out,
               std::vector<S>& scale_shift) const {
    proj_.forward(store, emb, scale_shift);
    out.resize(in.h, in.w, in.c);
    const S* scale = scale_shift.data();
    const S* shift = scale_shift.data() + channels_;
    for (int y = 0; y < in.h; ++y) {
      const S* src = in.at(y, 0);
      S* dst = out.at(y, 0);
      for (int x = 0; x < in.w; ++x)
        for (int ch = 0; ch < channels_; ++ch)
          dst[x * channels_ + ch] =
              src[x * channels_ + ch] * (S(1) + scale[ch]) + shift[ch];
    }
  }

  // din is overwritten; d_emb_accum is accumulated (+=).
  void backward(ParamStore<S>& store, const std::vector<S>& emb,
                const FeatureMap<S>& in, const std::vector<S>& scale_shift,
                const FeatureMap<S>& dout, FeatureMap<S>& din,
                std::vector<S>& d_emb_accum) const {
    din.resize(in.h, in.w, in.c);
    std::vector<S> d_ss(2 * channels_, S(0));
    const S* scale = scale_shift.data();
    for (int y = 0; y < in.h; ++y) {
      const S* src = in.at(y, 0);
      const S* g = dout.at(y, 0);
      S* dst = din.at(y, 0);
      for (int x = 0; x < in.w; ++x)
        for (int ch = 0; ch < channels_; ++ch) {
          const S gv = g[x * channels_ + ch];
          dst[x * channels_ + ch] = gv * (S(1) + scale[ch]);
          d_ss[ch] += gv * src[x * channels_ + ch];
          d_ss[channels_ + ch] += gv;
        }
    }
    std::vector<S> d_emb_local;
    proj_.backward(store, emb, d_ss, d_emb_local);
    for (size_t i = 0; i < d_emb_local.size(); ++i)
      d_emb_accum[i] += d_emb_local[i];
  }

 private:
  int channels_ = 0;
  Linear<S> proj_;
};

// ----------------------------------------------------------------------------
// The network: a three-resolution convolutional encoder-decoder over stacked
// real/imaginary channels. Used both as the score estimator (FiLM noise
// conditioning enabled, input = state + conditioning planes) and as the
// initial predictor (conditioning pathway removed, residual output y + f(y)).
//
//   B0: conv0, [film], silu;  B1: conv1, [film], silu      -> skip s0
//   pool;  B2: conv2 ...;  B3: conv3 ...                   -> skip s1
//   pool;  B4: conv4 ...;  B5: conv5 ...
//   up;    B6: conv6 + s1, [film], silu;  B7: conv7 ...
//   up;    B8: conv8 + s0, [film], silu;  B9: conv9 ...
//   head:  conv10 (linear), optional + input residual
//
// Spatial dims must be divisible by 4 (two pooling levels).
// ----------------------------------------------------------------------------
struct UNetConfig {
  int in_channels = 2;
  int out_channels = 2;
  int base_channels = 8;
  int emb_dim = 16;
  bool use_film = true;        // noise-conditioning pathway
  bool residual_head = false;  // add first out_channels input channels to output
};

template <class S>
class UNet {
 public:
  explicit UNet(const UNetConfig& cfg) : cfg_(cfg) {
    const int c = cfg.base_channels;
    conv_.reserve(11);
    conv_.emplace_back(store_, cfg.in_channels, c);   // 0
    conv_.emplace_back(store_, c, c);                 // 1
    conv_.emplace_back(store_, c, 2 * c);             // 2
    conv_.emplace_back(store_, 2 * c, 2 * c);         // 3
    conv_.emplace_back(store_, 2 * c, 4 * c);         // 4
    conv_.emplace_back(store_, 4 * c, 4 * c);         // 5
    conv_.emplace_back(store_, 4 * c, 2 * c);         // 6
    conv_.emplace_back(store_, 2 * c, 2 * c);         // 7
    conv_.emplace_back(store_, 2 * c, c);             // 8
    conv_.emplace_back(store_, c, c);                 // 9
    conv_.emplace_back(store_, c, cfg.out_channels);  // 10 (head)
    if (cfg_.use_film) {
      emb1_ = Linear<S>(store_, 1, cfg.emb_dim);
      emb2_ = Linear<S>(store_, cfg.emb_dim, cfg.emb_dim);
      film_.reserve(10);
      for (int i = 0; i < 10; ++i)
        film_.emplace_back(store_, cfg.emb_dim, conv_[i].cout());
    }
    if (cfg_.residual_head && cfg_.out_channels > cfg_.in_channels)
      throw std::runtime_error("unet: residual head needs out <= in channels");
  }

  void init_params(Rng& rng) {
    for (const auto& c : conv_) c.init_params(store_, rng);
    if (cfg_.use_film) {
      emb1_.init_params(store_, rng);
      emb2_.init_params(store_, rng);
      for (const auto& f : film_) f.init_params(store_, rng);
    }
  }

  const UNetConfig& config() const { return cfg_; }
  ParamStore<S>& store() { return store_; }
  const ParamStore<S>& store() const { return store_; }
  int parameter_count() const { return store_.size(); }

  // film_input is log(sigma); ignored when the conditioning pathway is off.
  // The returned reference stays valid until the next forward call.
  const FeatureMap<S>& forward(const FeatureMap<S>& in, S film_input) {
    if (in.c != cfg_.in_channels)
      throw std::runtime_error("unet: wrong input channel count");
    if (in.h % 4 || in.w % 4)
      throw std::runtime_error("unet: spatial dims must be divisible by 4");
    ws_.in = in;

    if (cfg_.use_film) {
      ws_.emb_in = {film_input};
      emb1_.forward(store_, ws_.emb_in, ws_.emb_pre1);
      ws_.emb_mid.resize(ws_.emb_pre1.size());
      for (size_t i = 0; i < ws_.emb_pre1.size(); ++i)
        ws_.emb_mid[i] = silu_scalar(ws_.emb_pre1[i]);
      emb2_.forward(store_, ws_.emb_mid, ws_.emb_pre2);
      ws_.emb.resize(ws_.emb_pre2.size());
      for (size_t i = 0; i < ws_.emb_pre2.size(); ++i)
        ws_.emb[i] = silu_scalar(ws_.emb_pre2[i]);
    }

    run_block(0, ws_.in);
    run_block(1, silu_out(0));
    avgpool2_forward(silu_out(1), ws_.pool1);
    run_block(2, ws_.pool1);
    run_block(3, silu_out(2));
    avgpool2_forward(silu_out(3), ws_.pool2);
    run_block(4, ws_.pool2);
    run_block(5, silu_out(4));
    upsample2_forward(silu_out(5), ws_.up1);
    run_block(6, ws_.up1, /*skip=*/&silu_out(3));
    run_block(7, silu_out(6));
    upsample2_forward(silu_out(7), ws_.up0);
    run_block(8, ws_.up0, /*skip=*/&silu_out(1));
    run_block(9, silu_out(8));
    conv_[10].forward(store_, silu_out(9), ws_.head);

    if (cfg_.residual_head) {
      for (int y = 0; y < ws_.head.h; ++y) {
        S* dst = ws_.head.at(y, 0);
        const S* src = ws_.in.at(y, 0);
        for (int x = 0; x < ws_.head.w; ++x)
          for (int ch = 0; ch < cfg_.out_channels; ++ch)
            dst[x * cfg_.out_channels + ch] += src[x * cfg_.in_channels + ch];
      }
    }
    return ws_.head;
  }

  // Backpropagates dL/d(output); accumulates parameter gradients into the
  // store and returns dL/d(input) by reference (valid until next call).
  // *d_film_input (when film is on) accumulates dL/d(log sigma).
  const FeatureMap<S>& backward(const FeatureMap<S>& dout,
                                S* d_film_input = nullptr) {
    if (!dout.same_shape(ws_.head))
      throw std::runtime_error("unet backward: dout shape mismatch");
    if (cfg_.use_film) ws_.d_emb.assign(cfg_.emb_dim, S(0));

    FeatureMap<S>& g = ws_.g;
    conv_[10].backward(store_, silu_out(9), dout, g);
    back_block(9, g);  // g = d silu_out(8)
    back_block(8, g);  // g = d up0; dskip0 = d silu_out(1) via skip
    upsample2_backward(g, ws_.gb, silu_out(7).h, silu_out(7).w);
    back_block(7, ws_.gb);  // d silu_out(6)
    back_block(6, ws_.gb);  // d up1; dskip1 = d silu_out(3) via skip
    upsample2_backward(ws_.gb, ws_.gc, silu_out(5).h, silu_out(5).w);
    back_block(5, ws_.gc);  // d silu_out(4)
    back_block(4, ws_.gc);  // d pool2
    avgpool2_backward(ws_.gc, ws_.gd, silu_out(3).h, silu_out(3).w);
    add_inplace(ws_.gd, ws_.dskip1);  // total d silu_out(3)
    back_block(3, ws_.gd);            // d silu_out(2)
    back_block(2, ws_.gd);            // d pool1
    avgpool2_backward(ws_.gd, ws_.ge, silu_out(1).h, silu_out(1).w);
    add_inplace(ws_.ge, ws_.dskip0);  // total d silu_out(1)
    back_block(1, ws_.ge);            // d silu_out(0)
    back_block(0, ws_.ge);            // d input

    if (cfg_.residual_head) {
      for (int y = 0; y < dout.h; ++y) {
        const S* src = dout.at(y, 0);
        S* dst = ws_.ge.at(y, 0);
        for (int x = 0; x < dout.w; ++x)
          for (int ch = 0; ch < cfg_.out_channels; ++ch)
            dst[x * cfg_.in_channels + ch] += src[x * cfg_.out_channels + ch];
      }
    }

    if (cfg_.use_film) {
      std::vector<S> d_pre2(cfg_.emb_dim), d_mid, d_pre1, d_in;
      for (int i = 0; i < cfg_.emb_dim; ++i) {
        const S x = ws_.emb_pre2[i];
        const S sig = S(1) / (S(1) + std::exp(-x));
        d_pre2[i] = ws_.d_emb[i] * sig * (S(1) + x * (S(1) - sig));
      }
      emb2_.backward(store_, ws_.emb_mid, d_pre2, d_mid);
      d_pre1.resize(cfg_.emb_dim);
      for (int i = 0; i < cfg_.emb_dim; ++i) {
        const S x = ws_.emb_pre1[i];
        const S sig = S(1) / (S(1) + std::exp(-x));
        d_pre1[i] = d_mid[i] * sig * (S(1) + x * (S(1) - sig));
      }
      emb1_.backward(store_, ws_.emb_in, d_pre1, d_in);
      if (d_film_input) *d_film_input += d_in[0];
    }
    return ws_.ge;
  }

 private:
  // Activation bookkeeping for block i (conv index 0..9):
  //   act[3i]   = conv output (after optional skip add) — film/silu input
  //   act[3i+1] = film output (pre-silu; aliases act[3i]'s values if film off)
  //   act[3i+2] = silu output — input to the next layer
  struct Workspace {
    FeatureMap<S> in;
    FeatureMap<S> act[30];
    FeatureMap<S> pool1, pool2, up1, up0, head;
    FeatureMap<S> g, gb, gc, gd, ge;
    FeatureMap<S> dskip0, dskip1;
    FeatureMap<S> tmp1, tmp2;
    std::vector<S> emb_in, emb_pre1, emb_mid, emb_pre2, emb;
    std::vector<S> scale_shift[10];
    std::vector<S> d_emb;
  };

  FeatureMap<S>& silu_out(int i) { return ws_.act[3 * i + 2]; }

  void run_block(int i, const FeatureMap<S>& input,
                 const FeatureMap<S>* skip = nullptr) {
    conv_[i].forward(store_, input, ws_.act[3 * i]);
    if (skip) add_inplace(ws_.act[3 * i], *skip);
    if (cfg_.use_film) {
      film_[i].forward(store_, ws_.emb, ws_.act[3 * i], ws_.act[3 * i + 1],
                       ws_.scale_shift[i]);
    } else {
      ws_.act[3 * i + 1] = ws_.act[3 * i];
    }
    silu_forward(ws_.act[3 * i + 1], ws_.act[3 * i + 2]);
    block_input_[i] = tag_of(input);
  }

  int tag_of(const FeatureMap<S>& input) const {
    if (&input == &ws_.in) return -1;
    if (&input == &ws_.pool1) return -2;
    if (&input == &ws_.pool2) return -3;
    if (&input == &ws_.up1) return -4;
    if (&input == &ws_.up0) return -5;
    for (int j = 0; j < 30; ++j)
      if (&input == &ws_.act[j]) return j;
    throw std::runtime_error("unet: unknown block input");
  }

  const FeatureMap<S>& block_input(int i) const {
    switch (block_input_[i]) {
      case -1: return ws_.in;
      case -2: return ws_.pool1;
      case -3: return ws_.pool2;
      case -4: return ws_.up1;
      case -5: return ws_.up0;
      default: return ws_.act[block_input_[i]];
    }
  }

  // Replaces g = dL/d(block silu output) with dL/d(block input); accumulates
  // parameter grads. For the skip-add blocks the gradient w.r.t. the skip
  // tensor equals the post-conv gradient and is deposited in dskip0/dskip1.
  void back_block(int i, FeatureMap<S>& g) {
    silu_backward(ws_.act[3 * i + 1], g, ws_.tmp1);
    FeatureMap<S>* d_conv_out = &ws_.tmp1;
    if (cfg_.use_film) {
      film_[i].backward(store_, ws_.emb, ws_.act[3 * i], ws_.scale_shift[i],
                        ws_.tmp1, ws_.tmp2, ws_.d_emb);
      d_conv_out = &ws_.tmp2;
    }
    if (i == 6) ws_.dskip1 = *d_conv_out;
    if (i == 8) ws_.dskip0 = *d_conv_out;
    conv_[i].backward(store_, block_input(i), *d_conv_out, g);
  }

  UNetConfig cfg_;
  ParamStore<S> store_;
  std::vector<Conv3x3<S>> conv_;
  std::vector<FilmSite<S>> film_;
  Linear<S> emb1_, emb2_;
  Workspace ws_;
  int block_input_[10] = {0};
};

// ----- Optimizer and parameter averaging -----

// Adaptive-moment gradient descent with bias correction.
template <class S>
class Adam {
 public:
  explicit Adam(int n, double lr = 1e-4) : lr_(lr), m_(n, S(0)), v_(n, S(0)) {}

  void step(std::vector<S>& params, const std::vector<S>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::runtime_error("adam: dimension mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grads[i]);
      m_[i] = static_cast<S>(beta1_ * m_[i] + (1.0 - beta1_) * g);
      v_[i] = static_cast<S>(beta2_ * v_[i] + (1.0 - beta2_) * g * g);
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] -= static_cast<S>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long long step_count() const { return t_; }

  std::vector<S>& m() { return m_; }
  std::vector<S>& v() { return v_; }
  void set_step_count(long long t) { t_ = t; }

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long long t_ = 0;
  std::vector<S> m_, v_;
};

// shadow <- decay*shadow + (1-decay)*params
template <class S>
void ema_update(std::vector<S>& shadow, const std::vector<S>& params,
                double decay = 0.999) {
  if (shadow.size() != params.size())
    throw std::runtime_error("ema_update: dimension mismatch");
  for (size_t i = 0; i < shadow.size(); ++i)
    shadow[i] = static_cast<S>(decay * shadow[i] + (1.0 - decay) * params[i]);
}

}  // namespace nn
}  // namespace storm
