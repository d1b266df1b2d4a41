#include "quadscan/ops.hpp"

#include <algorithm>
#include <cmath>

#include "quadscan/flop_counter.hpp"

namespace quadscan {

namespace {

thread_local FlopCounter* t_counter = nullptr;

}  // namespace

FlopCounter::FlopCounter() : previous_(t_counter) { t_counter = this; }
FlopCounter::~FlopCounter() { t_counter = previous_; }

void FlopCounter::add(std::uint64_t macs) {
  if (t_counter != nullptr) t_counter->macs_ += macs;
}

namespace ops {

namespace {

using detail::finalize;
using detail::grad_buffer;
using detail::wants_grad;

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(t.shape()));
  }
}

// b broadcasts over a when its shape is a trailing suffix of a's shape.
void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool ok = bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin());
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(bs) + " onto " +
                     shape_str(as));
  }
}

template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  finalize(out);
  if (wants_grad({&a})) {
    GradTape::active()->record({a}, out, [a, out, df] {
      const auto& go = out.impl()->grad;
      auto& ga = grad_buffer(a);
      auto x = a.data();
      auto y = out.data();
      for (std::size_t i = 0; i < x.size(); ++i) ga[i] += go[i] * df(x[i], y[i]);
    });
  }
  return out;
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.mutable_data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  FlopCounter::add(static_cast<std::uint64_t>(m) * k * n);
  finalize(out);
  if (wants_grad({&a, &b})) {
    GradTape::active()->record({a, b}, out, [a, b, out, m, k, n] {
      const double* G = out.impl()->grad.data();
      const double* A = a.data().data();
      const double* B = b.data().data();
      if (a.requires_grad()) {
        double* GA = grad_buffer(a).data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
            GA[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        double* GB = grad_buffer(b).data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            double* gb = GB + p * n;
            const double* g = G + i * n;
            for (std::size_t j = 0; j < n; ++j) gb[j] += av * g[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tensor y = matmul(x, w);
  return bias.defined() ? add(y, bias) : y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data();
  auto z = b.data();
  auto y = out.mutable_data();
  const std::size_t nb = z.size();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + z[i % nb];
  finalize(out);
  if (wants_grad({&a, &b})) {
    GradTape::active()->record({a, b}, out, [a, b, out, nb] {
      const auto& go = out.impl()->grad;
      if (a.requires_grad()) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i % nb] += go[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data();
  auto z = b.data();
  auto y = out.mutable_data();
  const std::size_t nb = z.size();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * z[i % nb];
  finalize(out);
  if (wants_grad({&a, &b})) {
    GradTape::active()->record({a, b}, out, [a, b, out, nb] {
      const auto& go = out.impl()->grad;
      auto x = a.data();
      auto z = b.data();
      if (a.requires_grad()) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * z[i % nb];
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i % nb] += go[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor softplus(const Tensor& a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double x) { return x * stable_sigmoid(x); },
      [](double x, double) {
        const double s = stable_sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.ndim() == 0) throw ShapeError("layernorm: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  if (gamma.numel() != n || beta.numel() != n) {
    throw ShapeError("layernorm: affine parameters must have " + std::to_string(n) + " entries");
  }
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  auto in = x.data();
  auto g = gamma.data();
  auto b = beta.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * rs;
      xhat[r * n + j] = h;
      y[r * n + j] = h * g[j] + b[j];
    }
  }
  finalize(out);
  if (wants_grad({&x, &gamma, &beta})) {
    GradTape::active()->record(
        {x, gamma, beta}, out,
        [x, gamma, beta, out, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)] {
          const auto& go = out.impl()->grad;
          auto g = gamma.data();
          if (gamma.requires_grad() || beta.requires_grad()) {
            auto& gg = grad_buffer(gamma);
            auto& gb = grad_buffer(beta);
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < n; ++j) {
                gg[j] += go[r * n + j] * xhat[r * n + j];
                gb[j] += go[r * n + j];
              }
            }
          }
          if (x.requires_grad()) {
            auto& gx = grad_buffer(x);
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t r = 0; r < rows; ++r) {
              double sum_d = 0.0, sum_dx = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                const double d = go[r * n + j] * g[j];
                sum_d += d;
                sum_dx += d * xhat[r * n + j];
              }
              for (std::size_t j = 0; j < n; ++j) {
                const double d = go[r * n + j] * g[j];
                gx[r * n + j] += rstd[r] * (d - inv_n * sum_d - xhat[r * n + j] * inv_n * sum_dx);
              }
            }
          }
        });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.ndim() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape());
  auto in = x.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[r * n + j] = std::exp(row[j] - mx);
      s += y[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] /= s;
  }
  finalize(out);
  if (wants_grad({&x})) {
    GradTape::active()->record({x}, out, [x, out, n, rows] {
      const auto& go = out.impl()->grad;
      auto y = out.data();
      auto& gx = grad_buffer(x);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += go[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (go[r * n + j] - dot);
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  finalize(out);
  if (wants_grad({&a})) {
    GradTape::active()->record({a}, out, [a, out] {
      const double g = out.impl()->grad[0];
      auto& ga = grad_buffer(a);
      for (auto& v : ga) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor out = Tensor::from(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (wants_grad({&a})) {
    GradTape::active()->record({a}, out, [a, out] {
      const auto& go = out.impl()->grad;
      auto& ga = grad_buffer(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> index) {
  if (x.ndim() == 0) throw ShapeError("gather_rows: scalar input");
  const std::size_t rows = x.rows();
  const std::size_t c = x.cols();
  for (auto i : index) {
    if (i < -1 || i >= static_cast<std::int64_t>(rows)) {
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       std::to_string(rows) + " rows");
    }
  }
  Shape shape = x.shape();
  shape[0] = index.size();
  Tensor out = Tensor::zeros(shape);
  auto in = x.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0) continue;
    std::copy_n(in.data() + static_cast<std::size_t>(index[r]) * c, c, y.data() + r * c);
  }
  if (wants_grad({&x})) {
    std::vector<std::int64_t> idx(index.begin(), index.end());
    GradTape::active()->record({x}, out, [x, out, c, idx = std::move(idx)] {
      const auto& go = out.impl()->grad;
      auto& gx = grad_buffer(x);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0) continue;
        double* dst = gx.data() + static_cast<std::size_t>(idx[r]) * c;
        const double* src = go.data() + r * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  Shape shape = parts[0].shape();
  if (shape.empty()) throw ShapeError("concat_rows: scalar input");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != shape.size() || p.cols() != c) {
      throw ShapeError("concat_rows: trailing shapes differ: " + shape_str(p.shape()) + " vs " +
                       shape_str(shape));
    }
    total += p.rows();
  }
  shape[0] = total;
  std::vector<double> values;
  values.reserve(total * c);
  for (const auto& p : parts) values.insert(values.end(), p.data().begin(), p.data().end());
  Tensor out = Tensor::from(shape, std::move(values));
  if (wants_grad(parts)) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    GradTape::active()->record(inputs, out, [inputs, out] {
      const auto& go = out.impl()->grad;
      std::size_t offset = 0;
      for (const auto& p : inputs) {
        if (p.requires_grad()) {
          auto& gp = grad_buffer(p);
          for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += go[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.ndim() == 0 || begin + count > x.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + shape_str(x.shape()));
  }
  std::vector<std::int64_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = static_cast<std::int64_t>(begin + i);
  return gather_rows(x, idx);
}

Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         std::size_t group_len, std::size_t heads) {
  require_2d(q, "grouped_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("grouped_attention: q, k, v shapes differ");
  }
  const std::size_t rows = q.dim(0), c = q.dim(1);
  if (group_len == 0 || rows % group_len != 0) {
    throw ShapeError("grouped_attention: " + std::to_string(rows) +
                     " rows do not split into groups of " + std::to_string(group_len));
  }
  if (heads == 0 || c % heads != 0) {
    throw ShapeError("grouped_attention: " + std::to_string(c) + " channels do not split into " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t groups = rows / group_len;
  const std::size_t dh = c / heads;
  const std::size_t L = group_len;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out = Tensor::zeros({rows, c});
  // probs[(g * heads + h) * L * L + i * L + j]
  std::vector<double> probs(groups * heads * L * L);
  const double* Q = q.data().data();
  const double* K = k.data().data();
  const double* V = v.data().data();
  double* O = out.mutable_data().data();
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + (g * heads + h) * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        const double* qi = Q + (g * L + i) * c + h * dh;
        double* pi = P + i * L;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < L; ++j) {
          const double* kj = K + (g * L + j) * c + h * dh;
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
          pi[j] = s * inv_sqrt;
          mx = std::max(mx, pi[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          pi[j] = std::exp(pi[j] - mx);
          z += pi[j];
        }
        double* oi = O + (g * L + i) * c + h * dh;
        for (std::size_t j = 0; j < L; ++j) {
          pi[j] /= z;
          const double* vj = V + (g * L + j) * c + h * dh;
          for (std::size_t d = 0; d < dh; ++d) oi[d] += pi[j] * vj[d];
        }
      }
    }
  }
  FlopCounter::add(static_cast<std::uint64_t>(groups) * heads * L * L * dh * 2);
  finalize(out);
  if (wants_grad({&q, &k, &v})) {
    GradTape::active()->record(
        {q, k, v}, out,
        [q, k, v, out, groups, heads, L, c, dh, inv_sqrt, probs = std::move(probs)] {
          const double* G = out.impl()->grad.data();
          const double* Q = q.data().data();
          const double* K = k.data().data();
          const double* V = v.data().data();
          double* GQ = grad_buffer(q).data();
          double* GK = grad_buffer(k).data();
          double* GV = grad_buffer(v).data();
          std::vector<double> dp(L);
          for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t h = 0; h < heads; ++h) {
              const double* P = probs.data() + (g * heads + h) * L * L;
              for (std::size_t i = 0; i < L; ++i) {
                const double* gi = G + (g * L + i) * c + h * dh;
                const double* pi = P + i * L;
                double dot = 0.0;
                for (std::size_t j = 0; j < L; ++j) {
                  const double* vj = V + (g * L + j) * c + h * dh;
                  double* gvj = GV + (g * L + j) * c + h * dh;
                  double s = 0.0;
                  for (std::size_t d = 0; d < dh; ++d) {
                    s += gi[d] * vj[d];
                    gvj[d] += pi[j] * gi[d];
                  }
                  dp[j] = s;
                  dot += s * pi[j];
                }
                const double* qi = Q + (g * L + i) * c + h * dh;
                double* gqi = GQ + (g * L + i) * c + h * dh;
                for (std::size_t j = 0; j < L; ++j) {
                  const double ds = pi[j] * (dp[j] - dot) * inv_sqrt;
                  const double* kj = K + (g * L + j) * c + h * dh;
                  double* gkj = GK + (g * L + j) * c + h * dh;
                  for (std::size_t d = 0; d < dh; ++d) {
                    gqi[d] += ds * kj[d];
                    gkj[d] += ds * qi[d];
                  }
                }
              }
            }
          }
        });
  }
  return out;
}

}  // namespace ops

}  // namespace quadscan
