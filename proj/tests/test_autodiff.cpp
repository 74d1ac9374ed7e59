// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include "beamclean/nn.hpp"
#include "testutil.hpp"

using namespace beamclean;
using Catch::Approx;

namespace {

// weighted-sum readout so every output coordinate affects the scalar loss
ad::Var readout(const ad::Var& y, Rng& rng) {
  Tensor w(y->value.shape());
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal();
  return ad::sum_all(ad::mul(y, ad::constant(w)));
}

}  // namespace

TEST_CASE("elementwise and broadcast op gradients (coordinate FD)") {
  Rng rng(1);
  ad::Var x = ad::leaf(Tensor::normal({3, 5}, rng));
  Rng wrng(2);

  auto check_op = [&](const std::function<ad::Var(const ad::Var&)>& op) {
    // fresh (identical) readout weight stream per invocation
    auto make = [&]() {
      Rng r(3);
      return readout(op(x), r);
    };
    CHECK(testutil::gradcheck_coords(make, x) < 1e-5);
  };

  check_op([](const ad::Var& v) { return ad::relu(ad::add_scalar(v, 0.05)); });
  check_op([](const ad::Var& v) { return ad::sigmoid(v); });
  check_op([](const ad::Var& v) { return ad::tanh_op(v); });
  check_op([](const ad::Var& v) { return ad::exp_op(ad::scale(v, 0.3)); });
  check_op([](const ad::Var& v) { return ad::log_op(ad::add_scalar(ad::mul(v, v), 0.5)); });
  check_op([](const ad::Var& v) { return ad::reciprocal(ad::add_scalar(ad::mul(v, v), 1.0)); });
  check_op([](const ad::Var& v) { return ad::softmax_last(v); });
  check_op([](const ad::Var& v) { return ad::clamp(v, -0.5, 0.5); });
  check_op([](const ad::Var& v) { return ad::avg_pool_last(v, 2); });
}

TEST_CASE("binary op gradients") {
  Rng rng(4);
  ad::Var a = ad::leaf(Tensor::normal({4, 3}, rng));
  ad::Var b = ad::leaf(Tensor::normal({4, 3}, rng));
  for (int64_t i = 0; i < b->value.numel(); ++i) b->value[i] += (b->value[i] >= 0 ? 1.5 : -1.5);

  auto make_mul = [&]() {
    Rng r(5);
    return readout(ad::mul(a, b), r);
  };
  CHECK(testutil::gradcheck_coords(make_mul, a) < 1e-5);
  CHECK(testutil::gradcheck_coords(make_mul, b) < 1e-5);

  auto make_div = [&]() {
    Rng r(6);
    return readout(ad::div(a, b), r);
  };
  CHECK(testutil::gradcheck_coords(make_div, a) < 1e-5);
  CHECK(testutil::gradcheck_coords(make_div, b) < 1e-5);

  auto make_sub = [&]() {
    Rng r(7);
    return readout(ad::sub(a, b), r);
  };
  CHECK(testutil::gradcheck_coords(make_sub, a) < 1e-5);
}

TEST_CASE("matmul and bmm gradients") {
  Rng rng(8);
  ad::Var a = ad::leaf(Tensor::normal({3, 4}, rng));
  ad::Var b = ad::leaf(Tensor::normal({4, 2}, rng));
  auto make = [&]() {
    Rng r(9);
    return readout(ad::matmul(a, b), r);
  };
  CHECK(testutil::gradcheck_coords(make, a) < 1e-5);
  CHECK(testutil::gradcheck_coords(make, b) < 1e-5);

  ad::Var p = ad::leaf(Tensor::normal({2, 3, 4}, rng));
  ad::Var q = ad::leaf(Tensor::normal({2, 4, 5}, rng));
  auto make_bmm = [&]() {
    Rng r(10);
    return readout(ad::bmm(p, q), r);
  };
  CHECK(testutil::gradcheck_coords(make_bmm, p) < 1e-5);
  CHECK(testutil::gradcheck_coords(make_bmm, q) < 1e-5);

  ad::Var qt = ad::leaf(Tensor::normal({2, 5, 4}, rng));
  auto make_bmmt = [&]() {
    Rng r(11);
    return readout(ad::bmm(p, qt, true), r);
  };
  CHECK(testutil::gradcheck_coords(make_bmmt, p) < 1e-5);
  CHECK(testutil::gradcheck_coords(make_bmmt, qt) < 1e-5);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(12);
  ad::Var x = ad::constant(Tensor::normal({10, 6, 6}, rng, 3.0));
  ad::Var y = ad::softmax_last(x);
  for (int64_t r = 0; r < 60; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < 6; ++j) s += y->value[r * 6 + j];
    CHECK(s == Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("layer_norm gradients and normalization") {
  Rng rng(13);
  ad::Var x = ad::leaf(Tensor::normal({6, 5}, rng, 2.0));
  ad::Var gamma = ad::leaf(Tensor::uniform({5}, rng, 0.5, 1.5));
  ad::Var beta = ad::leaf(Tensor::normal({5}, rng, 0.1));
  ad::Var y = ad::layer_norm(x, gamma, beta);
  // rows are standardized before the affine map
  for (int64_t r = 0; r < 6; ++r) {
    double mean = 0.0;
    for (int64_t j = 0; j < 5; ++j)
      mean += (y->value.at(r, j) - beta->value[j]) / gamma->value[j];
    CHECK(mean / 5.0 == Approx(0.0).margin(1e-9));
  }
  auto make = [&]() {
    Rng r(14);
    return readout(ad::layer_norm(x, gamma, beta), r);
  };
  CHECK(testutil::gradcheck_coords(make, x) < 1e-4);
  CHECK(testutil::gradcheck_coords(make, gamma) < 1e-5);
  CHECK(testutil::gradcheck_coords(make, beta) < 1e-5);
}

TEST_CASE("segment/overlap-add are exact adjoints") {
  Rng rng(15);
  const int64_t bsz = 2, t = 37, len = 8, hop = 3, pad = 2;
  Tensor x = Tensor::normal({bsz, t}, rng);
  ad::Var xv = ad::constant(x);
  ad::Var fx = ad::segment_rows(xv, len, hop, pad);
  Tensor y = Tensor::normal(fx->value.shape(), rng);
  // <Ax, y> == <x, A^T y> where A^T is overlap-add with the pad trimmed
  const double lhs = fx->value.dot(y);
  ad::Var ola = ad::overlap_add_rows(ad::constant(y), hop);
  ad::Var aty = ad::narrow(ola, 1, pad, t);
  const double rhs = x.dot(aty->value);
  CHECK(lhs == Approx(rhs).epsilon(1e-12));
}

TEST_CASE("segmentation then coverage-normalized overlap-add is identity") {
  Rng rng(16);
  const int64_t bsz = 3, p = 10, hop = 5;
  for (int64_t t : {20, 25, 37, 10}) {
    Tensor x = Tensor::normal({bsz, t}, rng);
    const int64_t s = t <= p ? 1 : (t - p + hop - 1) / hop + 1;
    const int64_t t_pad = (s - 1) * hop + p;
    ad::Var padded = ad::pad_dim(ad::constant(x), 1, 0, t_pad - t);
    ad::Var seg = ad::segment_rows(padded, p, hop, 0);
    ad::Var back = ad::overlap_add_rows(seg, hop);
    Tensor cov_inv({t});
    for (int64_t i = 0; i < t; ++i) {
      int64_t cnt = 0;
      for (int64_t c = 0; c < s; ++c)
        if (i >= c * hop && i < c * hop + p) ++cnt;
      cov_inv[i] = 1.0 / static_cast<double>(cnt);
    }
    ad::Var merged = ad::mul_last(ad::narrow(back, 1, 0, t), ad::constant(cov_inv));
    for (int64_t i = 0; i < x.numel(); ++i)
      CHECK(merged->value[i] == Approx(x[i]).margin(1e-12));
  }
}

TEST_CASE("framing op gradients") {
  Rng rng(17);
  ad::Var x = ad::leaf(Tensor::normal({2, 23}, rng));
  auto make_seg = [&]() {
    Rng r(18);
    return readout(ad::segment_rows(x, 6, 2, 1), r);
  };
  CHECK(testutil::gradcheck_coords(make_seg, x) < 1e-5);

  ad::Var f = ad::leaf(Tensor::normal({2, 5, 6}, rng));
  auto make_ola = [&]() {
    Rng r(19);
    return readout(ad::overlap_add_rows(f, 3), r);
  };
  CHECK(testutil::gradcheck_coords(make_ola, f) < 1e-5);
}

TEST_CASE("shape op gradients") {
  Rng rng(20);
  ad::Var x = ad::leaf(Tensor::normal({2, 3, 4}, rng));
  auto make_perm = [&]() {
    Rng r(21);
    return readout(ad::permute(x, {2, 0, 1}), r);
  };
  CHECK(testutil::gradcheck_coords(make_perm, x) < 1e-5);

  auto make_slice = [&]() {
    Rng r(22);
    return readout(ad::concat({ad::narrow(x, 1, 1, 2), ad::narrow(x, 1, 0, 2)}, 1), r);
  };
  CHECK(testutil::gradcheck_coords(make_slice, x) < 1e-5);

  auto make_pad = [&]() {
    Rng r(23);
    return readout(ad::pad_dim(x, 2, 1, 2), r);
  };
  CHECK(testutil::gradcheck_coords(make_pad, x) < 1e-5);
}

TEST_CASE("broadcast helper gradients") {
  Rng rng(24);
  ad::Var x = ad::leaf(Tensor::normal({4, 3}, rng));
  ad::Var v = ad::leaf(Tensor::normal({3}, rng));
  ad::Var s = ad::leaf(Tensor::scalar(0.7));

  auto make_add_last = [&]() {
    Rng r(25);
    return readout(ad::add_last(x, v), r);
  };
  CHECK(testutil::gradcheck_coords(make_add_last, x) < 1e-5);
  CHECK(testutil::gradcheck_coords(make_add_last, v) < 1e-5);

  auto make_mul_last = [&]() {
    Rng r(26);
    return readout(ad::mul_last(x, v), r);
  };
  CHECK(testutil::gradcheck_coords(make_mul_last, x) < 1e-5);
  CHECK(testutil::gradcheck_coords(make_mul_last, v) < 1e-5);

  auto make_scalar = [&]() {
    Rng r(27);
    return readout(ad::sub_scalar_var(ad::mul_scalar_var(x, s), s), r);
  };
  CHECK(testutil::gradcheck_coords(make_scalar, x) < 1e-5);
  CHECK(testutil::gradcheck_coords(make_scalar, s) < 1e-5);
}

TEST_CASE("ncc_rows matches dsp::ncc and differentiates") {
  Rng rng(28);
  Tensor a = Tensor::normal({6, 5}, rng);
  Tensor b = Tensor::normal({6, 5}, rng);
  // one zero row exercises the convention
  for (int64_t j = 0; j < 5; ++j) a.at(4, j) = 0.0;
  ad::Var av = ad::leaf(a);
  ad::Var bv = ad::leaf(b);
  ad::Var rho = ad::ncc_rows(av, bv);
  for (int64_t r = 0; r < 6; ++r) {
    std::vector<double> ar(5), br(5);
    for (int64_t j = 0; j < 5; ++j) {
      ar[static_cast<size_t>(j)] = a.at(r, j);
      br[static_cast<size_t>(j)] = b.at(r, j);
    }
    if (r == 4) {
      CHECK(rho->value[r] == 0.0);
    } else {
      CHECK(rho->value[r] == Approx(dsp::ncc(ar, br)).margin(1e-12));
    }
  }
  // zero-norm rows carry zero gradient by convention
  ad::Var back = ad::sum_all(ad::ncc_rows(av, bv));
  ad::backward(back);
  for (int64_t j = 0; j < 5; ++j) {
    CHECK(av->grad.at(4, j) == 0.0);
    CHECK(bv->grad.at(4, j) == 0.0);
  }

  // FD check away from the non-differentiable zero-norm point
  ad::Var a2 = ad::leaf(Tensor::normal({6, 5}, rng));
  ad::Var b2 = ad::leaf(Tensor::normal({6, 5}, rng));
  auto make = [&]() {
    Rng r(29);
    return readout(ad::ncc_rows(a2, b2), r);
  };
  CHECK(testutil::gradcheck_coords(make, a2) < 1e-4);
  CHECK(testutil::gradcheck_coords(make, b2) < 1e-4);
}

TEST_CASE("lstm layer gradients (directional, per parameter group)") {
  Rng rng(30);
  nn::Lstm lstm;
  lstm.init(3, 4, rng);
  ad::Var x = ad::constant(Tensor::normal({2, 6, 3}, rng));
  nn::ParamMap pm;
  lstm.collect("lstm", pm);
  auto make = [&]() {
    Rng r(31);
    return readout(lstm.forward(x), r);
  };
  auto res = testutil::gradcheck_groups(make, pm);
  INFO("worst group: " << res.worst_group);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv2d_same matches a naive convolution oracle") {
  Rng rng(32);
  const int64_t cin = 2, h = 6, w = 7, cout = 3, kh = 3, kw = 5;
  Tensor x = Tensor::normal({cin, h, w}, rng);
  Tensor wt = Tensor::normal({cout, cin, kh, kw}, rng);
  Tensor bias = Tensor::normal({cout}, rng);
  ad::Var y = nn::conv2d_same(ad::constant(x), ad::constant(wt), ad::constant(bias));
  REQUIRE(y->value.shape() == Shape{cout, h, w});
  for (int64_t co = 0; co < cout; ++co)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        double acc = bias[co];
        for (int64_t ci = 0; ci < cin; ++ci)
          for (int64_t u = 0; u < kh; ++u)
            for (int64_t v = 0; v < kw; ++v) {
              const int64_t ii = i + u - (kh - 1) / 2;
              const int64_t jj = j + v - (kw - 1) / 2;
              if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
              acc += x.at(ci, ii, jj) * wt.at(co, ci, u, v);
            }
        CHECK(y->value.at(co, i, j) == Approx(acc).margin(1e-10));
      }
}

TEST_CASE("conv2d_same gradients") {
  Rng rng(33);
  ad::Var x = ad::leaf(Tensor::normal({2, 5, 6}, rng));
  ad::Var wt = ad::leaf(Tensor::normal({3, 2, 3, 5}, rng));
  ad::Var bias = ad::leaf(Tensor::normal({3}, rng));
  auto make = [&]() {
    Rng r(34);
    return readout(nn::conv2d_same(x, wt, bias), r);
  };
  CHECK(testutil::gradcheck_coords(make, x) < 1e-5);
  CHECK(testutil::gradcheck_coords(make, wt) < 1e-5);
  CHECK(testutil::gradcheck_coords(make, bias) < 1e-5);
}

TEST_CASE("conv1d and transposed conv1d layers differentiate") {
  Rng rng(35);
  nn::Conv1d conv;
  conv.init(4, 8, 4, 2, rng);
  ad::Var x = ad::constant(Tensor::normal({2, 32}, rng));
  nn::ParamMap pm;
  conv.collect("conv", pm);
  auto make = [&]() {
    Rng r(36);
    return readout(conv.forward(x), r);
  };
  CHECK(testutil::gradcheck_groups(make, pm).max_rel_err < 1e-6);

  nn::ConvTranspose1d tconv;
  tconv.init(4, 8, 4, rng);
  ad::Var latent = ad::constant(Tensor::normal({5, 4}, rng));
  nn::ParamMap pm2;
  tconv.collect("tconv", pm2);
  auto make2 = [&]() {
    Rng r(37);
    return readout(tconv.forward(latent), r);
  };
  CHECK(testutil::gradcheck_groups(make2, pm2).max_rel_err < 1e-6);
}

TEST_CASE("no-grad mode records nothing; values are identical") {
  Rng rng(38);
  nn::Lstm lstm;
  lstm.init(3, 4, rng);
  Tensor xin = Tensor::normal({1, 5, 3}, rng);
  ad::Var with_grad = lstm.forward(ad::constant(xin));
  ad::NoGradGuard ng;
  ad::Var without = lstm.forward(ad::constant(xin));
  CHECK_FALSE(without->requires_grad);
  for (int64_t i = 0; i < with_grad->value.numel(); ++i)
    CHECK(with_grad->value[i] == without->value[i]);
}
