#include "quadscan/ssm.hpp"

#include <cmath>
#include <memory>

#include "quadscan/flop_counter.hpp"
#include "quadscan/ops.hpp"

namespace quadscan::ssm {

namespace {

using detail::finalize;
using detail::grad_buffer;
using detail::wants_grad;

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v));
}

void validate(const ScanCoreInputs& in) {
  const std::size_t L = in.length, D = in.d_model, S = in.d_state;
  if (L == 0) throw ShapeError("selective_scan: empty sequence");
  if (in.x.size() != L * D || in.delta.size() != L * D || in.b.size() != L * S ||
      in.c.size() != L * S || in.a_log.size() != D * S || in.d_skip.size() != D) {
    throw ShapeError("selective_scan: operand sizes do not match L=" + std::to_string(L) +
                     ", D=" + std::to_string(D) + ", S=" + std::to_string(S));
  }
  if (in.segment_len != 0 && L % in.segment_len != 0) {
    throw ShapeError("selective_scan: length " + std::to_string(L) +
                     " is not a multiple of the segment length " + std::to_string(in.segment_len));
  }
  if (!in.h0.empty() && in.h0.size() != D * S) {
    throw ShapeError("selective_scan: initial state must have D*S entries");
  }
  auto check_finite = [&](std::span<const double> v, std::size_t cols, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) {
        throw NumericError(std::string("selective_scan: non-finite ") + what + " at row " +
                           std::to_string(i / cols) + ", channel " + std::to_string(i % cols));
      }
    }
  };
  check_finite(in.x, D, "input");
  check_finite(in.delta, D, "step size");
  check_finite(in.b, S, "input projection");
  check_finite(in.c, S, "output projection");
}

std::vector<double> decay_rates(std::span<const double> a_log) {
  std::vector<double> a(a_log.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log[i]);
  return a;
}

}  // namespace

std::size_t SelectiveScanParams::parameter_count() const {
  return dt_weight.numel() + dt_bias.numel() + b_weight.numel() + c_weight.numel() +
         a_log.numel() + d_skip.numel() + conv_weight.numel() + conv_bias.numel();
}

SelectiveScanParams SelectiveScanParams::create(ParamStore& store, const std::string& prefix,
                                                const SsmConfig& config, Rng& rng) {
  const std::size_t D = config.d_model, S = config.d_state, W = config.conv_width;
  if (D == 0 || S == 0 || W == 0) throw ShapeError("SsmConfig: sizes must be positive");
  const double proj_bound = 1.0 / std::sqrt(static_cast<double>(D));

  // softplus(dt_bias) spread uniformly over [1e-3, 1e-1].
  std::vector<double> dt_bias(D);
  for (std::size_t d = 0; d < D; ++d) {
    const double dt = 1e-3 + (1e-1 - 1e-3) * (D == 1 ? 0.5 : static_cast<double>(d) / (D - 1));
    dt_bias[d] = dt + std::log(-std::expm1(-dt));
  }
  // A = -(s + 1): timescales 1..S.
  std::vector<double> a_log(D * S);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t s = 0; s < S; ++s) a_log[d * S + s] = std::log(static_cast<double>(s + 1));
  }

  store.add(prefix + ".dt_weight", uniform_tensor({D, D}, 0.1 * proj_bound, rng));
  store.add(prefix + ".dt_bias", Tensor::from({D}, std::move(dt_bias)));
  store.add(prefix + ".b_weight", uniform_tensor({D, S}, proj_bound, rng));
  store.add(prefix + ".c_weight", uniform_tensor({D, S}, proj_bound, rng));
  store.add(prefix + ".a_log", Tensor::from({D, S}, std::move(a_log)));
  store.add(prefix + ".d_skip", Tensor::full({D}, 1.0));
  store.add(prefix + ".conv_weight", uniform_tensor({W, D}, 1.0 / std::sqrt(static_cast<double>(W)), rng));
  store.add(prefix + ".conv_bias", Tensor::zeros({D}));
  return bind(store, prefix);
}

SelectiveScanParams SelectiveScanParams::bind(ParamStore& store, const std::string& prefix) {
  SelectiveScanParams p;
  p.dt_weight = store.get(prefix + ".dt_weight");
  p.dt_bias = store.get(prefix + ".dt_bias");
  p.b_weight = store.get(prefix + ".b_weight");
  p.c_weight = store.get(prefix + ".c_weight");
  p.a_log = store.get(prefix + ".a_log");
  p.d_skip = store.get(prefix + ".d_skip");
  p.conv_weight = store.get(prefix + ".conv_weight");
  p.conv_bias = store.get(prefix + ".conv_bias");
  return p;
}

std::vector<double> scan_core_forward(const ScanCoreInputs& in, ScanCoreCache* cache,
                                      std::vector<double>* last_state) {
  validate(in);
  const std::size_t L = in.length, D = in.d_model, S = in.d_state;
  const std::size_t seg = in.segment_len == 0 ? L : in.segment_len;
  const auto A = decay_rates(in.a_log);
  std::vector<double> y(L * D);
  std::vector<double> h(D * S, 0.0);
  if (cache != nullptr) {
    cache->states.assign(L * D * S, 0.0);
    cache->retained = true;
  }
  for (std::size_t t = 0; t < L; ++t) {
    if (t % seg == 0) {
      if (t == 0 && !in.h0.empty()) {
        h.assign(in.h0.begin(), in.h0.end());
      } else {
        std::fill(h.begin(), h.end(), 0.0);
      }
    }
    const double* bt = in.b.data() + t * S;
    const double* ct = in.c.data() + t * S;
    for (std::size_t d = 0; d < D; ++d) {
      const double dlt = in.delta[t * D + d];
      const double xv = in.x[t * D + d];
      double* hd = h.data() + d * S;
      const double* ad = A.data() + d * S;
      double acc = 0.0;
      for (std::size_t s = 0; s < S; ++s) {
        hd[s] = std::exp(dlt * ad[s]) * hd[s] + dlt * bt[s] * xv;
        acc += ct[s] * hd[s];
      }
      y[t * D + d] = acc + in.d_skip[d] * xv;
    }
    if (cache != nullptr) std::copy(h.begin(), h.end(), cache->states.begin() + t * D * S);
  }
  FlopCounter::add(static_cast<std::uint64_t>(L) * D * (3 * S + 1));
  if (last_state != nullptr) *last_state = h;
  return y;
}

ScanCoreGrads scan_core_backward(const ScanCoreInputs& in, const ScanCoreCache& cache,
                                 std::span<const double> grad_y) {
  const std::size_t L = in.length, D = in.d_model, S = in.d_state;
  if (!cache.retained || cache.states.size() != L * D * S) {
    throw ContractError("selective_scan_backward: forward states were not retained");
  }
  if (grad_y.size() != L * D) throw ShapeError("selective_scan_backward: upstream gradient size");
  const std::size_t seg = in.segment_len == 0 ? L : in.segment_len;
  const auto A = decay_rates(in.a_log);

  ScanCoreGrads g;
  g.x.assign(L * D, 0.0);
  g.delta.assign(L * D, 0.0);
  g.a_log.assign(D * S, 0.0);
  g.b.assign(L * S, 0.0);
  g.c.assign(L * S, 0.0);
  g.d_skip.assign(D, 0.0);
  g.h0.assign(D * S, 0.0);
  std::vector<double> ga(D * S, 0.0);
  std::vector<double> gh(D * S, 0.0);  // dL/dh_t arriving from step t+1
  const std::vector<double> zeros(D * S, 0.0);

  for (std::size_t t = L; t-- > 0;) {
    if ((t + 1) % seg == 0) std::fill(gh.begin(), gh.end(), 0.0);
    const bool seg_start = t % seg == 0;
    const double* h_prev = seg_start ? ((t == 0 && !in.h0.empty()) ? in.h0.data() : zeros.data())
                                     : cache.states.data() + (t - 1) * D * S;
    const double* h_cur = cache.states.data() + t * D * S;
    const double* bt = in.b.data() + t * S;
    const double* ct = in.c.data() + t * S;
    double* gbt = g.b.data() + t * S;
    double* gct = g.c.data() + t * S;
    for (std::size_t d = 0; d < D; ++d) {
      const double gy = grad_y[t * D + d];
      const double xv = in.x[t * D + d];
      const double dlt = in.delta[t * D + d];
      double gx = gy * in.d_skip[d];
      g.d_skip[d] += gy * xv;
      double gdelta = 0.0;
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = d * S + s;
        const double abar = std::exp(dlt * A[i]);
        gct[s] += gy * h_cur[i];
        const double ghs = gh[i] + gy * ct[s];
        gdelta += ghs * (A[i] * abar * h_prev[i] + bt[s] * xv);
        gbt[s] += ghs * dlt * xv;
        gx += ghs * dlt * bt[s];
        ga[i] += ghs * dlt * abar * h_prev[i];
        gh[i] = ghs * abar;
      }
      g.x[t * D + d] += gx;
      g.delta[t * D + d] += gdelta;
    }
    if (t == 0) g.h0 = gh;
  }
  for (std::size_t i = 0; i < D * S; ++i) g.a_log[i] = ga[i] * A[i];
  return g;
}

Tensor scan_core(const Tensor& x, const Tensor& delta, const Tensor& a_log, const Tensor& b,
                 const Tensor& c, const Tensor& d_skip, std::size_t segment_len,
                 std::span<const double> h0, std::vector<double>* last_state) {
  if (x.ndim() != 2 || a_log.ndim() != 2) throw ShapeError("selective_scan: expected 2-d operands");
  ScanCoreInputs in{x.data(),     delta.data(), a_log.data(), b.data(),   c.data(),
                    d_skip.data(), x.dim(0),    x.dim(1),     a_log.dim(1), segment_len, h0};
  const bool grad = wants_grad({&x, &delta, &a_log, &b, &c, &d_skip});
  auto cache = grad ? std::make_shared<ScanCoreCache>() : nullptr;
  Tensor out = Tensor::from({in.length, in.d_model}, scan_core_forward(in, cache.get(), last_state));
  finalize(out);
  if (grad) {
    std::vector<double> h0_copy(h0.begin(), h0.end());
    GradTape::active()->record(
        {x, delta, a_log, b, c, d_skip}, out,
        [x, delta, a_log, b, c, d_skip, out, segment_len, cache, h0_copy = std::move(h0_copy)] {
          ScanCoreInputs in{x.data(),     delta.data(), a_log.data(), b.data(),     c.data(),
                            d_skip.data(), x.dim(0),    x.dim(1),     a_log.dim(1), segment_len,
                            h0_copy};
          auto g = scan_core_backward(in, *cache, out.impl()->grad);
          auto accumulate = [](const Tensor& t, const std::vector<double>& src) {
            if (!t.requires_grad()) return;
            auto& dst = grad_buffer(t);
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
          };
          accumulate(x, g.x);
          accumulate(delta, g.delta);
          accumulate(a_log, g.a_log);
          accumulate(b, g.b);
          accumulate(c, g.c);
          accumulate(d_skip, g.d_skip);
        });
  }
  return out;
}

ScanResult selective_scan(const Tensor& x, const SelectiveScanParams& p, std::size_t segment_len,
                          std::span<const double> h0) {
  if (x.ndim() != 2 || x.dim(1) != p.d_model()) {
    throw ShapeError("selective_scan: input " + shape_str(x.shape()) + " does not match d_model " +
                     std::to_string(p.d_model()));
  }
  Tensor delta = ops::softplus(ops::linear(x, p.dt_weight, p.dt_bias));
  Tensor b = ops::matmul(x, p.b_weight);
  Tensor c = ops::matmul(x, p.c_weight);
  ScanResult r;
  r.y = scan_core(x, delta, p.a_log, b, c, p.d_skip, segment_len, h0, &r.last_state);
  return r;
}

Tensor causal_depthwise_conv(const Tensor& x, const Tensor& weight, const Tensor& bias,
                             std::size_t segment_len) {
  if (x.ndim() != 2 || weight.ndim() != 2 || weight.dim(1) != x.dim(1) || weight.dim(0) == 0) {
    throw ShapeError("causal_depthwise_conv: kernel " + shape_str(weight.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != x.dim(1)) throw ShapeError("causal_depthwise_conv: bias size");
  const std::size_t L = x.dim(0), D = x.dim(1), W = weight.dim(0);
  const std::size_t seg = segment_len == 0 ? L : segment_len;
  if (L % seg != 0) throw ShapeError("causal_depthwise_conv: length not a multiple of segment");
  Tensor out = Tensor::zeros({L, D});
  auto in = x.data();
  auto k = weight.data();
  auto y = out.mutable_data();
  for (std::size_t t = 0; t < L; ++t) {
    const std::size_t reach = std::min(W, t % seg + 1);
    for (std::size_t d = 0; d < D; ++d) {
      double acc = bias.defined() ? bias.at(d) : 0.0;
      for (std::size_t j = 0; j < reach; ++j) acc += k[j * D + d] * in[(t - j) * D + d];
      y[t * D + d] = acc;
    }
  }
  FlopCounter::add(static_cast<std::uint64_t>(L) * D * W);
  finalize(out);
  if (wants_grad({&x, &weight, &bias})) {
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    GradTape::active()->record(inputs, out, [x, weight, bias, out, L, D, W, seg] {
      const auto& go = out.impl()->grad;
      auto in = x.data();
      auto k = weight.data();
      auto& gx = grad_buffer(x);
      auto& gw = grad_buffer(weight);
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t reach = std::min(W, t % seg + 1);
        for (std::size_t d = 0; d < D; ++d) {
          const double g = go[t * D + d];
          for (std::size_t j = 0; j < reach; ++j) {
            gx[(t - j) * D + d] += g * k[j * D + d];
            gw[j * D + d] += g * in[(t - j) * D + d];
          }
        }
      }
      if (bias.defined() && bias.requires_grad()) {
        auto& gb = grad_buffer(bias);
        for (std::size_t t = 0; t < L; ++t) {
          for (std::size_t d = 0; d < D; ++d) gb[d] += go[t * D + d];
        }
      }
    });
  }
  return out;
}

Tensor scan_path(const Tensor& x, const SelectiveScanParams& p, std::size_t segment_len) {
  Tensor conv = causal_depthwise_conv(x, p.conv_weight, p.conv_bias, segment_len);
  return selective_scan(conv, p, segment_len).y;
}

}  // namespace quadscan::ssm
