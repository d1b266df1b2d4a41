#include "quadscan/scan_order.hpp"

#include <cmath>
#include <string>

#include "quadscan/ops.hpp"

namespace quadscan {

TokenGeometry TokenGeometry::standard(std::size_t modalities, std::size_t template_tokens) {
  TokenGeometry g{modalities, template_tokens, 4 * template_tokens};
  g.validate_grid();
  return g;
}

std::size_t TokenGeometry::template_side() const {
  return static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(template_tokens))));
}

std::size_t TokenGeometry::search_side() const { return 2 * template_side(); }

void TokenGeometry::validate() const {
  if (modalities == 0) throw GeometryError("geometry: modality count must be positive");
  if (tokens_per_modality() == 0) throw GeometryError("geometry: no tokens per modality");
}

void TokenGeometry::validate_grid() const {
  validate();
  const auto s = template_side();
  if (template_tokens == 0 || s * s != template_tokens) {
    throw GeometryError("geometry: template token count " + std::to_string(template_tokens) +
                        " is not a perfect square");
  }
  if (search_tokens != 4 * template_tokens) {
    throw GeometryError("geometry: search token count " + std::to_string(search_tokens) +
                        " must be 4x the template count " + std::to_string(template_tokens));
  }
}

std::string_view scale_name(ScanScale s) {
  switch (s) {
    case ScanScale::forward: return "forward";
    case ScanScale::backward: return "backward";
    case ScanScale::region: return "region";
    case ScanScale::token: return "token";
  }
  return "?";
}

ScanScale parse_scale(std::string_view name) {
  for (auto s : kAllScales) {
    if (scale_name(s) == name) return s;
  }
  throw std::invalid_argument("unknown scan path '" + std::string(name) + "'");
}

ScanOrder order_from_perm(ScanScale scale, std::vector<std::int64_t> perm) {
  const auto n = static_cast<std::int64_t>(perm.size());
  std::vector<std::int64_t> inv(perm.size(), -1);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= n || inv[static_cast<std::size_t>(p)] != -1) {
      throw ContractError("scan order: permutation is not a bijection");
    }
    inv[static_cast<std::size_t>(p)] = i;
  }
  return {scale, std::move(perm), std::move(inv)};
}

ScanOrder forward_order(const TokenGeometry& geo) {
  geo.validate();
  const std::size_t M = geo.modalities, N = geo.tokens_per_modality();
  std::vector<std::int64_t> perm;
  perm.reserve(M * N);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t n = 0; n < N; ++n) perm.push_back(static_cast<std::int64_t>(m * N + n));
  }
  return order_from_perm(ScanScale::forward, std::move(perm));
}

ScanOrder backward_order(const TokenGeometry& geo) {
  geo.validate();
  const std::size_t M = geo.modalities, N = geo.tokens_per_modality();
  std::vector<std::int64_t> perm;
  perm.reserve(M * N);
  for (std::size_t m = M; m-- > 0;) {
    for (std::size_t n = N; n-- > 0;) perm.push_back(static_cast<std::int64_t>(m * N + n));
  }
  return order_from_perm(ScanScale::backward, std::move(perm));
}

ScanOrder region_order(const TokenGeometry& geo) {
  geo.validate_grid();
  const std::size_t M = geo.modalities, N = geo.tokens_per_modality();
  const std::size_t Nz = geo.template_tokens;
  const std::size_t sz = geo.template_side(), sx = geo.search_side();
  std::vector<std::int64_t> perm;
  perm.reserve(M * N);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t n = 0; n < Nz; ++n) perm.push_back(static_cast<std::int64_t>(m * N + n));
  }
  // Quadrants TL, TR (first pair) then BL, BR (second pair); modalities cycle
  // within each quadrant.
  for (std::size_t q = 0; q < 4; ++q) {
    const std::size_t row0 = (q / 2) * sz, col0 = (q % 2) * sz;
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t k = 0; k < sz; ++k) {
        for (std::size_t n = 0; n < sz; ++n) {
          const std::size_t cell = (row0 + k) * sx + col0 + n;
          perm.push_back(static_cast<std::int64_t>(m * N + Nz + cell));
        }
      }
    }
  }
  return order_from_perm(ScanScale::region, std::move(perm));
}

ScanOrder token_order(const TokenGeometry& geo) {
  geo.validate();
  const std::size_t M = geo.modalities, N = geo.tokens_per_modality();
  std::vector<std::int64_t> perm;
  perm.reserve(M * N);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t m = 0; m < M; ++m) perm.push_back(static_cast<std::int64_t>(m * N + n));
  }
  return order_from_perm(ScanScale::token, std::move(perm));
}

ScanOrder make_order(ScanScale scale, const TokenGeometry& geo) {
  switch (scale) {
    case ScanScale::forward: return forward_order(geo);
    case ScanScale::backward: return backward_order(geo);
    case ScanScale::region: return region_order(geo);
    case ScanScale::token: return token_order(geo);
  }
  throw std::invalid_argument("make_order: bad scale");
}

std::vector<std::int64_t> batched_index(std::span<const std::int64_t> perm, std::size_t batch) {
  const auto len = static_cast<std::int64_t>(perm.size());
  std::vector<std::int64_t> idx;
  idx.reserve(perm.size() * batch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (auto p : perm) idx.push_back(static_cast<std::int64_t>(b) * len + p);
  }
  return idx;
}

namespace {

Tensor reorder(std::span<const std::int64_t> index, const Tensor& seq, const char* op) {
  if (seq.ndim() == 0 || seq.rows() % index.size() != 0 || seq.rows() == 0) {
    throw ShapeError(std::string(op) + ": sequence of " + std::to_string(seq.ndim() ? seq.rows() : 0) +
                     " rows does not match order length " + std::to_string(index.size()));
  }
  if (seq.rows() == index.size()) return ops::gather_rows(seq, index);
  return ops::gather_rows(seq, batched_index(index, seq.rows() / index.size()));
}

}  // namespace

Tensor apply(const ScanOrder& order, const Tensor& seq) { return reorder(order.perm, seq, "apply"); }

Tensor unapply(const ScanOrder& order, const Tensor& seq) {
  return reorder(order.inv, seq, "unapply");
}

}  // namespace quadscan
