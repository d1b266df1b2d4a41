#include <algorithm>
#include <chrono>
#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "quadscan/ops.hpp"
#include "quadscan/ssm.hpp"

using namespace quadscan;
using namespace quadscan::ssm;
using quadscan::testing::gradcheck;
using quadscan::testing::random_tensor;

namespace {

SelectiveScanParams random_params(ParamStore& store, std::size_t D, std::size_t S, std::size_t W,
                                  std::uint64_t seed) {
  Rng rng(seed);
  auto p = SelectiveScanParams::create(store, "p", {D, S, W}, rng);
  // Perturb the structured initial values so every parameter matters.
  for (auto& e : store.entries()) {
    for (auto& v : e.value.mutable_data()) v += rng.uniform(-0.3, 0.3);
  }
  return p;
}

double softplus_ref(double v) { return std::log1p(std::exp(v)); }

// Per-timestep loop written directly from the recurrence definition.
std::vector<double> naive_scan(const Tensor& x, const SelectiveScanParams& p) {
  const std::size_t L = x.dim(0), D = p.d_model(), S = p.d_state();
  std::vector<double> h(D * S, 0.0), y(L * D, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    std::vector<double> delta(D), b(S, 0.0), c(S, 0.0);
    for (std::size_t j = 0; j < D; ++j) {
      double a = p.dt_bias.at(j);
      for (std::size_t i = 0; i < D; ++i) a += x.at(t * D + i) * p.dt_weight.at(i * D + j);
      delta[j] = softplus_ref(a);
    }
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t i = 0; i < D; ++i) {
        b[s] += x.at(t * D + i) * p.b_weight.at(i * S + s);
        c[s] += x.at(t * D + i) * p.c_weight.at(i * S + s);
      }
    }
    for (std::size_t d = 0; d < D; ++d) {
      double out = p.d_skip.at(d) * x.at(t * D + d);
      for (std::size_t s = 0; s < S; ++s) {
        const double A = -std::exp(p.a_log.at(d * S + s));
        h[d * S + s] = std::exp(delta[d] * A) * h[d * S + s] + delta[d] * b[s] * x.at(t * D + d);
        out += c[s] * h[d * S + s];
      }
      y[t * D + d] = out;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("zero input gives zero output") {
  ParamStore store;
  auto p = random_params(store, 4, 3, 2, 1);
  auto r = selective_scan(Tensor::zeros({7, 4}), p);
  for (double v : r.y.data()) CHECK(v == 0.0);
}

TEST_CASE("scalar recurrence matches the hand computation") {
  const double ln2 = std::log(2.0);
  auto y = scan_core(Tensor::from({2, 1}, {1, 1}), Tensor::from({2, 1}, {ln2, ln2}),
                     Tensor::from({1, 1}, {0.0}), Tensor::from({2, 1}, {1, 1}),
                     Tensor::from({2, 1}, {1, 1}), Tensor::from({1}, {0.0}));
  CHECK(y.at(0) == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(y.at(1) == doctest::Approx(1.0397).epsilon(1e-4));
  CHECK(y.at(1) == doctest::Approx(1.5 * ln2).epsilon(1e-14));
}

TEST_CASE("selective scan matches the naive loop oracle") {
  ParamStore store;
  auto p = random_params(store, 6, 4, 3, 2);
  Rng rng(3);
  auto x = random_tensor({20, 6}, rng);
  auto r = selective_scan(x, p);
  auto ref = naive_scan(x, p);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(r.y.at(i) - ref[i]) < 1e-6);
}

TEST_CASE("selective scan gradients match finite differences") {
  ParamStore store;
  auto p = random_params(store, 8, 4, 4, 4);
  Rng rng(5);
  auto x = random_tensor({16, 8}, rng);
  auto w = random_tensor({16, 8}, rng);
  std::vector<Tensor> inputs{x};
  for (auto& e : store.entries()) inputs.push_back(e.value);
  auto r = gradcheck([&] { return ops::sum(ops::mul(scan_path(x, p), w)); }, inputs);
  CAPTURE(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("segmented scan gradients match finite differences") {
  ParamStore store;
  auto p = random_params(store, 3, 2, 2, 6);
  Rng rng(7);
  auto x = random_tensor({12, 3}, rng);
  auto w = random_tensor({12, 3}, rng);
  std::vector<Tensor> inputs{x};
  for (auto& e : store.entries()) inputs.push_back(e.value);
  auto r = gradcheck([&] { return ops::sum(ops::mul(scan_path(x, p, 4), w)); }, inputs);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("explicit backward: zero upstream, skip gain and missing state") {
  Rng rng(9);
  const std::size_t L = 5, D = 3, S = 2;
  auto x = random_tensor({L, D}, rng);
  auto delta = random_tensor({L, D}, rng, 0.01, 0.5);
  auto a_log = random_tensor({D, S}, rng);
  auto b = random_tensor({L, S}, rng);
  auto c = random_tensor({L, S}, rng);
  auto d = random_tensor({D}, rng);
  ScanCoreInputs in{x.data(), delta.data(), a_log.data(), b.data(), c.data(), d.data(), L, D, S};
  ScanCoreCache cache;
  scan_core_forward(in, &cache, nullptr);

  auto zero = scan_core_backward(in, cache, std::vector<double>(L * D, 0.0));
  for (const auto* g : {&zero.x, &zero.delta, &zero.a_log, &zero.b, &zero.c, &zero.d_skip}) {
    for (double v : *g) CHECK(v == 0.0);
  }

  auto up = random_tensor({L, D}, rng);
  auto g = scan_core_backward(in, cache, up.data());
  for (std::size_t ch = 0; ch < D; ++ch) {
    double dot = 0.0;
    for (std::size_t t = 0; t < L; ++t) dot += up.at(t * D + ch) * x.at(t * D + ch);
    CHECK(g.d_skip[ch] == doctest::Approx(dot).epsilon(1e-12));
  }

  CHECK_THROWS_AS(scan_core_backward(in, ScanCoreCache{}, up.data()), ContractError);
}

TEST_CASE("non-finite input reports its position") {
  ParamStore store;
  auto p = random_params(store, 2, 2, 1, 10);
  auto x = Tensor::zeros({4, 2});
  x.mutable_data()[5] = std::nan("");
  try {
    selective_scan(x, p);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("row 2, channel 1") != std::string::npos);
  }
}

TEST_CASE("state carry: scanning [a; b] equals scanning a then b") {
  ParamStore store;
  auto p = random_params(store, 4, 3, 1, 12);
  Rng rng(13);
  auto x = random_tensor({30, 4}, rng);
  auto whole = selective_scan(x, p);
  auto first = selective_scan(ops::slice_rows(x, 0, 12), p);
  auto second = selective_scan(ops::slice_rows(x, 12, 18), p, 0, first.last_state);
  for (std::size_t i = 0; i < 12 * 4; ++i) CHECK(std::fabs(whole.y.at(i) - first.y.at(i)) < 1e-10);
  for (std::size_t i = 0; i < 18 * 4; ++i) CHECK(std::fabs(whole.y.at(48 + i) - second.y.at(i)) < 1e-10);
  for (std::size_t i = 0; i < whole.last_state.size(); ++i) {
    CHECK(std::fabs(whole.last_state[i] - second.last_state[i]) < 1e-10);
  }
}

TEST_CASE("causality: perturbing x_t leaves earlier outputs unchanged") {
  ParamStore store;
  auto p = random_params(store, 3, 2, 4, 14);
  Rng rng(15);
  auto x = random_tensor({10, 3}, rng);
  auto base = scan_path(x, p);
  for (std::size_t t = 0; t < 10; ++t) {
    auto xp = x.clone();
    xp.mutable_data()[t * 3 + 1] += 0.5;
    auto moved = scan_path(xp, p);
    for (std::size_t i = 0; i < t * 3; ++i) CHECK(moved.at(i) == base.at(i));
    bool changed = false;
    for (std::size_t i = t * 3; i < 30; ++i) changed = changed || moved.at(i) != base.at(i);
    CHECK(changed);
  }
}

TEST_CASE("decay: state norm is non-increasing once the input stops") {
  Rng rng(16);
  const std::size_t L = 40, D = 3, S = 4, k = 10;
  auto x = random_tensor({L, D}, rng);
  for (std::size_t t = k; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) x.mutable_data()[t * D + d] = 0.0;
  auto delta = random_tensor({L, D}, rng, 0.01, 0.3);
  auto a_log = random_tensor({D, S}, rng, -1, 1);
  auto b = random_tensor({L, S}, rng);
  auto c = random_tensor({L, S}, rng);
  auto dd = random_tensor({D}, rng);
  ScanCoreInputs in{x.data(), delta.data(), a_log.data(), b.data(), c.data(), dd.data(), L, D, S};
  ScanCoreCache cache;
  scan_core_forward(in, &cache, nullptr);
  double prev = INFINITY;
  for (std::size_t t = k; t < L; ++t) {
    double n = 0.0;
    for (std::size_t i = 0; i < D * S; ++i) n += cache.states[t * D * S + i] * cache.states[t * D * S + i];
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("causal depthwise conv") {
  Rng rng(17);
  auto x = random_tensor({6, 2}, rng);
  auto id = causal_depthwise_conv(x, Tensor::from({1, 2}, {1, 1}));
  for (std::size_t i = 0; i < 12; ++i) CHECK(id.at(i) == x.at(i));

  auto delay = causal_depthwise_conv(x, Tensor::from({2, 2}, {0, 0, 1, 1}));
  CHECK(delay.at(0) == 0.0);
  CHECK(delay.at(1) == 0.0);
  for (std::size_t i = 2; i < 12; ++i) CHECK(delay.at(i) == x.at(i - 2));

  auto k = random_tensor({3, 2}, rng);
  auto bias = random_tensor({2}, rng);
  auto y = causal_depthwise_conv(x, k, bias);
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t d = 0; d < 2; ++d) {
      double s = bias.at(d);
      for (std::size_t j = 0; j < 3; ++j) {
        if (t >= j) s += k.at(j * 2 + d) * x.at((t - j) * 2 + d);
      }
      CHECK(y.at(t * 2 + d) == doctest::Approx(s).epsilon(1e-14));
    }
  }
  auto w = random_tensor({6, 2}, rng);
  auto r = gradcheck([&] { return ops::sum(ops::mul(causal_depthwise_conv(x, k, bias, 3), w)); }, {x, k, bias});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("scan cost is linear in sequence length") {
  ParamStore store;
  auto p = random_params(store, 32, 8, 4, 18);
  Rng rng(19);
  // Each sample repeats the call for at least 20 ms. Samples for L and 2L are
  // interleaved so load drift hits both; the minimum per length is kept.
  auto sample = [&](const Tensor& x) {
    std::size_t calls = 0;
    double elapsed = 0.0;
    auto t0 = std::chrono::steady_clock::now();
    do {
      auto r = scan_path(x, p);
      CHECK(r.dim(0) == x.dim(0));
      ++calls;
      elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } while (elapsed < 0.02);
    return elapsed / static_cast<double>(calls);
  };
  for (std::size_t L = 256; L <= 2048; L *= 2) {  // 2L reaches 4096
    auto x1 = random_tensor({L, 32}, rng), x2 = random_tensor({2 * L, 32}, rng);
    double t1 = INFINITY, t2 = INFINITY;
    for (int rep = 0; rep < 7; ++rep) {
      t1 = std::min(t1, sample(x1));
      t2 = std::min(t2, sample(x2));
    }
    const double ratio = t2 / t1;
    CAPTURE(L);
    CAPTURE(ratio);
    CHECK(ratio > 1.5);
    CHECK(ratio < 2.5);
  }
}
