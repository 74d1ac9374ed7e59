// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>
#include <vector>

#include "beamclean/nn.hpp"
#include "beamclean/simulate.hpp"

namespace beamclean::bf {

using ad::Var;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Full-scale defaults reproduce the published tensor shapes: 8 x 64000 input,
/// encoder kernel 256 / stride 128 / 64 features, context of 2 frames per
/// side (16 ms at the 8 ms hop), giving the 8 x 64 x 5 x 502 context tensor.
struct BeamformerConfig {
  int64_t n_channels = 8;
  int64_t encoder_kernel = 256;
  int64_t encoder_stride = 128;
  int64_t encoder_pad = 192;  // 64000 samples -> exactly 502 frames
  int64_t feature_dim = 64;
  int64_t context_per_side = 2;
  int64_t compress_hidden = 64;
  int64_t n_dprnn_blocks = 3;
  int64_t chunk_len = 50;  // frames per chunk, 50% overlap
  int64_t dprnn_hidden = 256;
  int64_t attn_heads = 2;
  int64_t attn_embed = 64;
  bool scale_attn_scores = false;  // the attention equations carry no 1/sqrt(E)
  int64_t decompress_hidden = 128;
  int64_t reference_channel = 0;

  int64_t context_width() const { return 2 * context_per_side + 1; }
  int64_t h_size() const { return compress_hidden + context_width(); }

  void validate() const {
    check(n_channels >= 1 && encoder_kernel > 0 && encoder_stride > 0 && encoder_pad >= 0 &&
              feature_dim > 0 && context_per_side >= 0 && compress_hidden > 0 &&
              n_dprnn_blocks >= 1 && chunk_len > 0 && dprnn_hidden > 0 && attn_heads >= 1 &&
              attn_embed >= 1 && decompress_hidden > 0,
          "BeamformerConfig: all sizes must be positive");
    check(reference_channel >= 0 && reference_channel < n_channels,
          "BeamformerConfig: reference channel out of range");
    check(chunk_len % 2 == 0, "BeamformerConfig: chunk_len must be even (50% overlap)");
    check(context_per_side * encoder_stride == 256,
          "BeamformerConfig: context must span 16 ms per side at 16 kHz (context_per_side * "
          "encoder_stride == 256), got ",
          context_per_side * encoder_stride);
  }

  /// Reduced widths for CPU-scale experiments; framing is unchanged.
  static BeamformerConfig desk() {
    BeamformerConfig c;
    c.n_channels = 2;
    c.feature_dim = 32;
    c.compress_hidden = 32;
    c.n_dprnn_blocks = 2;
    c.chunk_len = 24;
    c.dprnn_hidden = 64;
    c.attn_heads = 2;
    c.attn_embed = 32;
    c.decompress_hidden = 64;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Cross-channel self-attention
// ---------------------------------------------------------------------------

/// Per-head affine Q/K/V maps, softmax over channels, concatenated heads
/// through FC+ReLU, residual back onto the input states.
struct ChannelAttention {
  int64_t h = 0, embed = 0;
  bool scale_scores = false;
  struct Head {
    Var wq, wk, wv;  // [h, E]
    Var bq, bk, bv;  // [E]
  };
  std::vector<Head> heads;
  nn::Linear out;  // D*E -> h

  void init(int64_t h_size, int64_t e, int64_t n_heads, bool scale, Rng& rng) {
    h = h_size;
    embed = e;
    scale_scores = scale;
    heads.resize(static_cast<size_t>(n_heads));
    for (auto& head : heads) {
      head.wq = ad::leaf(nn::uniform_fan_in({h, e}, h, rng));
      head.bq = ad::leaf(Tensor({e}));
      head.wk = ad::leaf(nn::uniform_fan_in({h, e}, h, rng));
      head.bk = ad::leaf(Tensor({e}));
      head.wv = ad::leaf(nn::uniform_fan_in({h, e}, h, rng));
      head.bv = ad::leaf(Tensor({e}));
    }
    out.init(static_cast<int64_t>(heads.size()) * e, h, rng);
  }

  /// states [M, C, h] -> [M, C, h]; every row of each M x C x C attention
  /// matrix is a softmax over channels.
  Var forward(const Var& states) const {
    const Tensor& sv = states->value;
    check(sv.ndim() == 3 && sv.dim(2) == h, "channel_attention: expected [M,C,", h, "], got ",
          shape_str(sv.shape()));
    const int64_t m = sv.dim(0), c = sv.dim(1);
    Var flat = ad::reshape(states, {m * c, h});
    std::vector<Var> head_outs;
    head_outs.reserve(heads.size());
    for (const auto& head : heads) {
      Var q = ad::reshape(ad::add_last(ad::matmul(flat, head.wq), head.bq), {m, c, embed});
      Var k = ad::reshape(ad::add_last(ad::matmul(flat, head.wk), head.bk), {m, c, embed});
      Var v = ad::reshape(ad::add_last(ad::matmul(flat, head.wv), head.bv), {m, c, embed});
      Var scores = ad::bmm(q, k, /*trans_b=*/true);  // [M, C, C]
      if (scale_scores) scores = ad::scale(scores, 1.0 / std::sqrt(static_cast<double>(embed)));
      Var attn = ad::softmax_last(scores);
      head_outs.push_back(ad::bmm(attn, v));  // [M, C, E]
    }
    Var cat = head_outs.size() == 1 ? head_outs[0] : ad::concat(head_outs, 2);
    Var proj = ad::relu(out.forward(ad::reshape(cat, {m * c, static_cast<int64_t>(heads.size()) * embed})));
    return ad::add(states, ad::reshape(proj, {m, c, h}));
  }

  void collect(const std::string& prefix, nn::ParamMap& pm) const {
    for (size_t i = 0; i < heads.size(); ++i) {
      const std::string hp = prefix + ".head" + std::to_string(i);
      pm.emplace_back(hp + ".wq", heads[i].wq);
      pm.emplace_back(hp + ".bq", heads[i].bq);
      pm.emplace_back(hp + ".wk", heads[i].wk);
      pm.emplace_back(hp + ".bk", heads[i].bk);
      pm.emplace_back(hp + ".wv", heads[i].wv);
      pm.emplace_back(hp + ".bv", heads[i].bv);
    }
    out.collect(prefix + ".out", pm);
  }
};

/// Single-timestep form: states [C, h] across channels.
inline Var channel_attention(const Var& states, const ChannelAttention& params) {
  check(states->value.ndim() == 2, "channel_attention: expected [C,h]");
  check(states->value.all_finite(), "channel_attention: non-finite input states");
  const int64_t c = states->value.dim(0);
  Var batched = params.forward(ad::reshape(states, {1, c, params.h}));
  return ad::reshape(batched, {c, params.h});
}

// ---------------------------------------------------------------------------
// DPRNN block
// ---------------------------------------------------------------------------

/// Overlapping-chunk dual-path recurrence: bidirectional intra-chunk LSTM and
/// unidirectional inter-chunk LSTM, each wrapped in projection + layer norm +
/// residual, followed by cross-channel attention at every (chunk, position).
struct DprnnBlock {
  int64_t h = 0, hidden = 0, chunk_len = 0;
  nn::BiLstm intra;
  nn::Linear intra_proj;
  nn::LayerNorm intra_ln;
  nn::Lstm inter;
  nn::Linear inter_proj;
  nn::LayerNorm inter_ln;
  ChannelAttention attn;

  void init(const BeamformerConfig& cfg, Rng& rng) {
    h = cfg.h_size();
    hidden = cfg.dprnn_hidden;
    chunk_len = cfg.chunk_len;
    intra.init(h, hidden, rng);
    intra_proj.init(2 * hidden, h, rng);
    intra_ln.init(h);
    inter.init(h, hidden, rng);
    inter_proj.init(hidden, h, rng);
    inter_ln.init(h);
    attn.init(h, cfg.attn_embed, cfg.attn_heads, cfg.scale_attn_scores, rng);
  }

  /// z [C, N, h] -> [C, N, h]
  Var forward(const Var& z) const {
    const Tensor& zv = z->value;
    check(zv.ndim() == 3 && zv.dim(2) == h, "dprnn_block: expected [C,N,", h, "], got ",
          shape_str(zv.shape()));
    const int64_t c = zv.dim(0), n = zv.dim(1);

    int64_t p = chunk_len;
    if (n < chunk_len) {
      log_warn("dprnn_block: sequence of ", n, " frames shorter than chunk length ", chunk_len,
               ", falling back to a single chunk");
      p = n;
    }
    const int64_t hop = std::max<int64_t>(1, p / 2);
    const int64_t s = n <= p ? 1 : (n - p + hop - 1) / hop + 1;
    const int64_t n_pad = (s - 1) * hop + p;

    // [C,N,h] -> rows [C*h, N] -> chunks [C,h,S,P]
    Var rows = ad::reshape(ad::permute(z, {0, 2, 1}), {c * h, n});
    Var padded = ad::pad_dim(rows, 1, 0, n_pad - n);
    Var chunked = ad::reshape(ad::segment_rows(padded, p, hop, 0), {c, h, s, p});

    // intra-chunk: batch (C,S) over positions P
    Var intra_in = ad::reshape(ad::permute(chunked, {0, 2, 3, 1}), {c * s, p, h});
    Var intra_h = intra.forward(intra_in);  // [C*S, P, 2H]
    Var intra_o = intra_ln.forward(intra_proj.forward(ad::reshape(intra_h, {c * s * p, 2 * hidden})));
    Var after_intra = ad::add(intra_in, ad::reshape(intra_o, {c * s, p, h}));

    // inter-chunk: batch (C,P) over chunks S
    Var inter_in = ad::reshape(
        ad::permute(ad::reshape(after_intra, {c, s, p, h}), {0, 2, 1, 3}), {c * p, s, h});
    Var inter_h = inter.forward(inter_in);  // [C*P, S, H]
    Var inter_o = inter_ln.forward(inter_proj.forward(ad::reshape(inter_h, {c * p * s, hidden})));
    Var after_inter = ad::add(inter_in, ad::reshape(inter_o, {c * p, s, h}));

    // attention across channels at every (position, chunk) state
    Var states = ad::reshape(
        ad::permute(ad::reshape(after_inter, {c, p, s, h}), {1, 2, 0, 3}), {p * s, c, h});
    Var attended = attn.forward(states);  // [P*S, C, h]

    // merge chunks back: coverage-normalized overlap-add, so untouched
    // chunks reconstruct the input exactly
    Var back = ad::reshape(
        ad::permute(ad::reshape(attended, {p, s, c, h}), {2, 3, 1, 0}), {c * h, s, p});
    Var ola = ad::overlap_add_rows(back, hop);  // [C*h, n_pad]
    Tensor cov_inv({n});
    for (int64_t t = 0; t < n; ++t) {
      int64_t cnt = 0;
      for (int64_t i = 0; i < s; ++i)
        if (t >= i * hop && t < i * hop + p) ++cnt;
      cov_inv[t] = 1.0 / static_cast<double>(cnt);
    }
    Var merged = ad::mul_last(ad::narrow(ola, 1, 0, n), ad::constant(cov_inv));
    return ad::permute(ad::reshape(merged, {c, h, n}), {0, 2, 1});
  }

  void collect(const std::string& prefix, nn::ParamMap& pm) const {
    intra.collect(prefix + ".intra", pm);
    intra_proj.collect(prefix + ".intra_proj", pm);
    intra_ln.collect(prefix + ".intra_ln", pm);
    inter.collect(prefix + ".inter", pm);
    inter_proj.collect(prefix + ".inter_proj", pm);
    inter_ln.collect(prefix + ".inter_ln", pm);
    attn.collect(prefix + ".attn", pm);
  }
};

// ---------------------------------------------------------------------------
// Beamformer model
// ---------------------------------------------------------------------------

class Beamformer {
 public:
  BeamformerConfig cfg;
  nn::Conv1d encoder;
  nn::Lstm compress;
  std::vector<DprnnBlock> blocks;
  nn::Lstm decompress;
  nn::Linear filter_proj;  // pointwise 1-D convolution over frames
  nn::ConvTranspose1d decoder;

  Beamformer(const BeamformerConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    encoder.init(cfg.feature_dim, cfg.encoder_kernel, cfg.encoder_stride, cfg.encoder_pad, rng);
    compress.init(cfg.feature_dim * cfg.context_width(), cfg.compress_hidden, rng);
    blocks.resize(static_cast<size_t>(cfg.n_dprnn_blocks));
    for (auto& b : blocks) b.init(cfg, rng);
    decompress.init(cfg.h_size(), cfg.decompress_hidden, rng);
    filter_proj.init(cfg.decompress_hidden, cfg.feature_dim * cfg.context_width(), rng);
    decoder.init(cfg.feature_dim, cfg.encoder_kernel, cfg.encoder_stride, rng);
    nn::canonicalize_f32(params());
  }

  nn::ParamMap params() const {
    nn::ParamMap pm;
    encoder.collect("encoder", pm);
    compress.collect("compress", pm);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect("block" + std::to_string(i), pm);
    decompress.collect("decompress", pm);
    filter_proj.collect("filter_proj", pm);
    decoder.collect("decoder", pm);
    return pm;
  }

  int64_t parameter_count() const { return nn::param_count(params()); }

  /// x [C,T] -> context tensor [C, F, W, N]; the center context slice equals
  /// the plain encoding of the frame.
  Var context_encode(const Var& x) const {
    check(x->value.ndim() == 2, "context_encode: expected [C,T]");
    check(x->value.dim(0) == cfg.n_channels, "context_encode: got ", x->value.dim(0),
          " channels, config expects ", cfg.n_channels);
    Var enc = encoder.forward(x);  // [C, N, F]
    const int64_t c = enc->value.dim(0), n = enc->value.dim(1), f = enc->value.dim(2);
    const int64_t w = cfg.context_width();
    Var padded = ad::pad_dim(enc, 1, cfg.context_per_side, cfg.context_per_side);
    std::vector<Var> slices;
    slices.reserve(static_cast<size_t>(w));
    for (int64_t i = 0; i < w; ++i)
      slices.push_back(ad::reshape(ad::narrow(padded, 1, i, n), {c, n, 1, f}));
    Var cnwf = ad::concat(slices, 2);            // [C, N, W, F]
    return ad::permute(cnwf, {0, 3, 2, 1});      // [C, F, W, N]
  }

  /// NCC between the reference channel's center encoded frame and every
  /// channel's context frames: [C, F, W, N] -> [C, W, N].
  Var ncc_features(const Var& ctx, int64_t reference) const {
    const Tensor& cv = ctx->value;
    check(cv.ndim() == 4, "ncc_features: expected [C,F,W,N]");
    const int64_t c = cv.dim(0), f = cv.dim(1), w = cv.dim(2), n = cv.dim(3);
    check(reference >= 0 && reference < c, "ncc_features: reference ", reference, " out of ", c);
    Var cwnf = ad::permute(ctx, {0, 2, 3, 1});  // [C, W, N, F]
    Var ref_center = ad::reshape(
        ad::narrow(ad::narrow(cwnf, 0, reference, 1), 1, cfg.context_per_side, 1), {n, f});
    std::vector<Var> tiles(static_cast<size_t>(c * w), ref_center);
    Var ref_tiled = ad::concat(tiles, 0);                    // [C*W*N, F]
    Var rho = ad::ncc_rows(ad::reshape(cwnf, {c * w * n, f}), ref_tiled);
    return ad::reshape(rho, {c, w, n});
  }

  /// z [C, N, h] -> beamforming filters [C, F, W, N].
  Var estimate_filters(const Var& z) const {
    const Tensor& zv = z->value;
    check(zv.ndim() == 3 && zv.dim(2) == cfg.h_size(), "estimate_filters: expected [C,N,",
          cfg.h_size(), "], got ", shape_str(zv.shape()));
    const int64_t c = zv.dim(0), n = zv.dim(1);
    Var dec = decompress.forward(z);  // [C, N, Hd]
    Var proj = filter_proj.forward(ad::reshape(dec, {c * n, cfg.decompress_hidden}));
    Var cnwf = ad::reshape(proj, {c, n, cfg.context_width(), cfg.feature_dim});
    return ad::permute(cnwf, {0, 3, 2, 1});  // [C, F, W, N]
  }

  /// Elementwise filter * context summed over context and channels -> [1,F,N].
  static Var filter_and_sum(const Var& filters, const Var& ctx) {
    check(filters->value.same_shape(ctx->value), "filter_and_sum: filters ",
          shape_str(filters->value.shape()), " vs context ", shape_str(ctx->value.shape()));
    const int64_t c = ctx->value.dim(0), f = ctx->value.dim(1), w = ctx->value.dim(2),
                  n = ctx->value.dim(3);
    Var prod = ad::mul(filters, ctx);
    Var acc_w = ad::narrow(prod, 2, 0, 1);
    for (int64_t i = 1; i < w; ++i) acc_w = ad::add(acc_w, ad::narrow(prod, 2, i, 1));
    Var acc = ad::narrow(acc_w, 0, 0, 1);
    for (int64_t i = 1; i < c; ++i) acc = ad::add(acc, ad::narrow(acc_w, 0, i, 1));
    return ad::reshape(acc, {1, f, n});
  }

  /// latent [1,F,N] -> waveform [T] (transposed conv, encoder padding removed).
  Var decode_waveform(const Var& latent, int64_t t_out) const {
    const Tensor& lv = latent->value;
    check(lv.ndim() == 3 && lv.dim(0) == 1 && lv.dim(1) == cfg.feature_dim,
          "decode_waveform: expected [1,", cfg.feature_dim, ",N], got ", shape_str(lv.shape()));
    const int64_t n = lv.dim(2);
    Var nf = ad::permute(ad::reshape(latent, {cfg.feature_dim, n}), {1, 0});  // [N, F]
    Var wave = decoder.forward(nf);  // [(N-1)*stride + kernel, 1]
    const int64_t full = wave->value.dim(0);
    check(full >= cfg.encoder_pad + t_out, "decode_waveform: decoded ", full,
          " samples cannot cover ", t_out, " after removing pad ", cfg.encoder_pad);
    return ad::reshape(ad::narrow(wave, 0, cfg.encoder_pad, t_out), {t_out});
  }

  /// Full graph: x [C,T] -> beamformed waveform [T].
  Var forward(const Var& x) const {
    const int64_t t = x->value.dim(1);
    Var ctx = context_encode(x);
    Var nccf = ncc_features(ctx, cfg.reference_channel);
    Var cnwf = ad::permute(ctx, {0, 3, 2, 1});  // [C, N, W, F]
    const int64_t c = cnwf->value.dim(0), n = cnwf->value.dim(1);
    Var emb = compress.forward(
        ad::reshape(cnwf, {c, n, cfg.context_width() * cfg.feature_dim}));
    Var z = ad::concat({emb, ad::permute(nccf, {0, 2, 1})}, 2);  // [C, N, h]
    for (const auto& block : blocks) z = block.forward(z);
    Var filters = estimate_filters(z);
    Var latent = filter_and_sum(filters, ctx);
    return decode_waveform(latent, t);
  }

  /// Inference entry point; no graph is recorded.
  dsp::Waveform beamform(const sim::MultichannelWaveform& x) const {
    check(x.n_channels() == cfg.n_channels, "beamform: input has ", x.n_channels(),
          " channels, model expects ", cfg.n_channels);
    ad::NoGradGuard ng;
    Var out = forward(ad::constant(x.channels));
    dsp::Waveform w;
    w.sample_rate = x.sample_rate;
    w.samples = out->value.vec();
    return w;
  }
};

}  // namespace beamclean::bf
