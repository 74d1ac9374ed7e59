// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "beamclean/autodiff.hpp"
#include "beamclean/rng.hpp"

namespace beamclean::nn {

using ad::Var;

/// Ordered (name, parameter) registry; ordering defines the checkpoint layout.
using ParamMap = std::vector<std::pair<std::string, Var>>;

inline int64_t param_count(const ParamMap& params) {
  int64_t n = 0;
  for (const auto& [name, p] : params) n += p->value.numel();
  return n;
}

inline void zero_grad(const ParamMap& params) {
  for (const auto& [name, p] : params) {
    p->has_grad = false;
    p->grad = Tensor();
  }
}

/// Rounds every parameter through float32 so a fresh model round-trips
/// bit-exactly through the float32 checkpoint encoding.
inline void canonicalize_f32(const ParamMap& params) {
  for (const auto& [name, p] : params) p->value.round_f32();
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

inline Tensor uniform_fan_in(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

/// Random orthogonal h x h matrix (QR of a Gaussian, sign-fixed).
inline Tensor orthogonal(int64_t h, Rng& rng) {
  Eigen::MatrixXd a(h, h);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < h; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(h, h);
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int64_t j = 0; j < h; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  Tensor out({h, h});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < h; ++j) out.at(i, j) = q(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct Linear {
  int64_t in = 0, out = 0;
  Var w;  // [in, out]
  Var b;  // [out]

  void init(int64_t in_dim, int64_t out_dim, Rng& rng) {
    in = in_dim;
    out = out_dim;
    w = ad::leaf(uniform_fan_in({in, out}, in, rng));
    b = ad::leaf(Tensor({out}));
  }

  /// x [R, in] -> [R, out]
  Var forward(const Var& x) const { return ad::add_last(ad::matmul(x, w), b); }

  void collect(const std::string& prefix, ParamMap& m) const {
    m.emplace_back(prefix + ".w", w);
    m.emplace_back(prefix + ".b", b);
  }
};

/// Single-direction LSTM, gate order (input, forget, cell, output).
/// Recurrent blocks are initialized orthogonally, forget bias at 1.
struct Lstm {
  int64_t in = 0, hidden = 0;
  Var w_ih;  // [in, 4h]
  Var w_hh;  // [h, 4h]
  Var b;     // [4h]

  void init(int64_t in_dim, int64_t hidden_dim, Rng& rng) {
    in = in_dim;
    hidden = hidden_dim;
    w_ih = ad::leaf(uniform_fan_in({in, 4 * hidden}, in, rng));
    Tensor whh({hidden, 4 * hidden});
    for (int g = 0; g < 4; ++g) {
      Tensor q = orthogonal(hidden, rng);
      for (int64_t i = 0; i < hidden; ++i)
        for (int64_t j = 0; j < hidden; ++j) whh.at(i, g * hidden + j) = q.at(i, j);
    }
    w_hh = ad::leaf(std::move(whh));
    Tensor bias({4 * hidden});
    for (int64_t j = hidden; j < 2 * hidden; ++j) bias[j] = 1.0;
    b = ad::leaf(std::move(bias));
  }

  /// x [B,T,in] -> hidden sequence [B,T,h].
  Var forward(const Var& x, bool reversed = false) const {
    check(x->value.ndim() == 3 && x->value.dim(2) == in, "Lstm: input ",
          shape_str(x->value.shape()), " incompatible with in=", in);
    const int64_t bsz = x->value.dim(0), t_len = x->value.dim(1);
    Var h = ad::constant(Tensor({bsz, hidden}));
    Var c = ad::constant(Tensor({bsz, hidden}));
    std::vector<Var> outs(static_cast<size_t>(t_len));
    for (int64_t step = 0; step < t_len; ++step) {
      const int64_t t = reversed ? t_len - 1 - step : step;
      Var xt = ad::reshape(ad::narrow(x, 1, t, 1), {bsz, in});
      Var pre = ad::add_last(ad::add(ad::matmul(xt, w_ih), ad::matmul(h, w_hh)), b);
      Var ig = ad::sigmoid(ad::narrow(pre, 1, 0, hidden));
      Var fg = ad::sigmoid(ad::narrow(pre, 1, hidden, hidden));
      Var gg = ad::tanh_op(ad::narrow(pre, 1, 2 * hidden, hidden));
      Var og = ad::sigmoid(ad::narrow(pre, 1, 3 * hidden, hidden));
      c = ad::add(ad::mul(fg, c), ad::mul(ig, gg));
      h = ad::mul(og, ad::tanh_op(c));
      outs[static_cast<size_t>(t)] = ad::reshape(h, {bsz, 1, hidden});
    }
    return ad::concat(outs, 1);
  }

  void collect(const std::string& prefix, ParamMap& m) const {
    m.emplace_back(prefix + ".w_ih", w_ih);
    m.emplace_back(prefix + ".w_hh", w_hh);
    m.emplace_back(prefix + ".b", b);
  }
};

struct BiLstm {
  Lstm fwd, bwd;

  void init(int64_t in_dim, int64_t hidden_dim, Rng& rng) {
    fwd.init(in_dim, hidden_dim, rng);
    bwd.init(in_dim, hidden_dim, rng);
  }

  /// x [B,T,in] -> [B,T,2h]
  Var forward(const Var& x) const {
    return ad::concat({fwd.forward(x, false), bwd.forward(x, true)}, 2);
  }

  void collect(const std::string& prefix, ParamMap& m) const {
    fwd.collect(prefix + ".fwd", m);
    bwd.collect(prefix + ".bwd", m);
  }
};

struct LayerNorm {
  int64_t dim = 0;
  Var gamma, beta;

  void init(int64_t d) {
    dim = d;
    gamma = ad::leaf(Tensor::full({d}, 1.0));
    beta = ad::leaf(Tensor({d}));
  }

  Var forward(const Var& x) const { return ad::layer_norm(x, gamma, beta); }

  void collect(const std::string& prefix, ParamMap& m) const {
    m.emplace_back(prefix + ".gamma", gamma);
    m.emplace_back(prefix + ".beta", beta);
  }
};

// ---------------------------------------------------------------------------
// 1-D convolutions built from framing + matmul (adjoints come for free)
// ---------------------------------------------------------------------------

/// Strided 1-D convolution applied independently to each row of x[B,T]:
/// one input channel, `features` output channels.
struct Conv1d {
  int64_t features = 0, kernel = 0, stride = 0, pad = 0;
  Var w;  // [kernel, features]
  Var b;  // [features]

  void init(int64_t features_, int64_t kernel_, int64_t stride_, int64_t pad_, Rng& rng) {
    features = features_;
    kernel = kernel_;
    stride = stride_;
    pad = pad_;
    w = ad::leaf(uniform_fan_in({kernel, features}, kernel, rng));
    b = ad::leaf(Tensor({features}));
  }

  /// x [B,T] -> [B,N,features]
  Var forward(const Var& x) const {
    Var frames = ad::segment_rows(x, kernel, stride, pad);
    const int64_t bsz = frames->value.dim(0), n = frames->value.dim(1);
    Var flat = ad::reshape(frames, {bsz * n, kernel});
    return ad::reshape(ad::add_last(ad::matmul(flat, w), b), {bsz, n, features});
  }

  void collect(const std::string& prefix, ParamMap& m) const {
    m.emplace_back(prefix + ".w", w);
    m.emplace_back(prefix + ".b", b);
  }
};

/// Transposed 1-D convolution collapsing `features` channels to one row.
struct ConvTranspose1d {
  int64_t features = 0, kernel = 0, stride = 0;
  Var w;  // [features, kernel]
  Var b;  // [1]

  void init(int64_t features_, int64_t kernel_, int64_t stride_, Rng& rng) {
    features = features_;
    kernel = kernel_;
    stride = stride_;
    w = ad::leaf(uniform_fan_in({features, kernel}, features, rng));
    b = ad::leaf(Tensor({1}));
  }

  /// latent [N,features] -> waveform [(N-1)*stride + kernel]
  Var forward(const Var& latent) const {
    const int64_t n = latent->value.dim(0);
    Var frames = ad::matmul(latent, w);                       // [N, kernel]
    Var stacked = ad::reshape(frames, {1, n, kernel});
    Var wave = ad::overlap_add_rows(stacked, stride);         // [1, T]
    const int64_t t = wave->value.dim(1);
    return ad::add_last(ad::reshape(wave, {t, 1}), b);        // bias on every sample
  }

  void collect(const std::string& prefix, ParamMap& m) const {
    m.emplace_back(prefix + ".w", w);
    m.emplace_back(prefix + ".b", b);
  }
};

// ---------------------------------------------------------------------------
// 2-D convolution, stride 1, odd kernels, zero 'same' padding
// ---------------------------------------------------------------------------

namespace detail {
// Row-tiled im2col keeps the working buffer at one output row.
inline void im2col_row(const Tensor& x, int64_t i, int64_t cin, int64_t h, int64_t w,
                       int64_t kh, int64_t kw, Tensor& col) {
  const int64_t ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const int64_t cols = cin * kh * kw;
  col.fill(0.0);
  for (int64_t c = 0; c < cin; ++c)
    for (int64_t u = 0; u < kh; ++u) {
      const int64_t ii = i + u - ph;
      if (ii < 0 || ii >= h) continue;
      for (int64_t v = 0; v < kw; ++v)
        for (int64_t j = 0; j < w; ++j) {
          const int64_t jj = j + v - pw;
          if (jj < 0 || jj >= w) continue;
          col[j * cols + (c * kh + u) * kw + v] = x.at(c, ii, jj);
        }
    }
}
}  // namespace detail

/// conv2d_same: x [Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] -> [Cout,H,W].
inline Var conv2d_same(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  check(xv.ndim() == 3 && wv.ndim() == 4, "conv2d_same: expected x[Cin,H,W], w[Cout,Cin,kh,kw]");
  const int64_t cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int64_t cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  check(wv.dim(1) == cin, "conv2d_same: channel mismatch ", wv.dim(1), " vs ", cin);
  check(kh % 2 == 1 && kw % 2 == 1, "conv2d_same: kernels must be odd for same padding");
  check(bias->value.numel() == cout, "conv2d_same: bias size");
  const int64_t cols = cin * kh * kw;

  Tensor out({cout, h, w});
  {
    Tensor col({w, cols});
    Tensor yrow({w, cout});
    for (int64_t i = 0; i < h; ++i) {
      detail::im2col_row(xv, i, cin, h, w, kh, kw, col);
      yrow.mat(w, cout).noalias() = col.mat(w, cols) * wv.mat(cout, cols).transpose();
      for (int64_t c = 0; c < cout; ++c)
        for (int64_t j = 0; j < w; ++j) out.at(c, i, j) = yrow.at(j, c) + bias->value[c];
    }
  }

  return ad::make_op(std::move(out), {x, weight, bias},
                     [x, weight, bias, cin, h, w, cout, kh, kw, cols](ad::Node& n) {
    const int64_t ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    Tensor gw(weight->value.shape());
    Tensor gb(bias->value.shape());
    Tensor gx(x->value.shape());
    Tensor col({w, cols});
    Tensor dyrow({w, cout});
    Tensor dcol({w, cols});
    for (int64_t i = 0; i < h; ++i) {
      for (int64_t c = 0; c < cout; ++c)
        for (int64_t j = 0; j < w; ++j) {
          dyrow.at(j, c) = n.grad.at(c, i, j);
          gb[c] += n.grad.at(c, i, j);
        }
      detail::im2col_row(x->value, i, cin, h, w, kh, kw, col);
      gw.mat(cout, cols).noalias() += dyrow.mat(w, cout).transpose() * col.mat(w, cols);
      if (x->requires_grad) {
        dcol.mat(w, cols).noalias() = dyrow.mat(w, cout) * weight->value.mat(cout, cols);
        for (int64_t c = 0; c < cin; ++c)
          for (int64_t u = 0; u < kh; ++u) {
            const int64_t ii = i + u - ph;
            if (ii < 0 || ii >= h) continue;
            for (int64_t v = 0; v < kw; ++v)
              for (int64_t j = 0; j < w; ++j) {
                const int64_t jj = j + v - pw;
                if (jj < 0 || jj >= w) continue;
                gx.at(c, ii, jj) += dcol[j * cols + (c * kh + u) * kw + v];
              }
          }
      }
    }
    if (x->requires_grad) x->accumulate(gx);
    weight->accumulate(gw);
    bias->accumulate(gb);
  });
}

struct Conv2d {
  int64_t cin = 0, cout = 0, kh = 0, kw = 0;
  Var w;  // [Cout,Cin,kh,kw]
  Var b;  // [Cout]

  void init(int64_t cin_, int64_t cout_, int64_t kh_, int64_t kw_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    kh = kh_;
    kw = kw_;
    w = ad::leaf(uniform_fan_in({cout, cin, kh, kw}, cin * kh * kw, rng));
    b = ad::leaf(Tensor({cout}));
  }

  Var forward(const Var& x) const { return conv2d_same(x, w, b); }

  void collect(const std::string& prefix, ParamMap& m) const {
    m.emplace_back(prefix + ".w", w);
    m.emplace_back(prefix + ".b", b);
  }
};

}  // namespace beamclean::nn
