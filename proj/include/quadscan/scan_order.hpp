#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "quadscan/tensor.hpp"

namespace quadscan {

struct GeometryError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Token layout of the concatenated multimodal sequence. The canonical layout
/// is modality-major; within a modality the template tokens come first, then
/// the search tokens, each in raster order.
struct TokenGeometry {
  std::size_t modalities = 4;
  std::size_t template_tokens = 1;
  std::size_t search_tokens = 4;

  /// Standard tracker layout: search grid is twice the template side.
  static TokenGeometry standard(std::size_t modalities, std::size_t template_tokens);

  std::size_t tokens_per_modality() const { return template_tokens + search_tokens; }
  std::size_t total_tokens() const { return modalities * tokens_per_modality(); }
  std::size_t template_side() const;
  std::size_t search_side() const;

  /// Throws GeometryError unless modalities and tokens are positive.
  void validate() const;
  /// Additionally requires a square template grid and search_tokens == 4 * template_tokens.
  void validate_grid() const;
};

enum class ScanScale { forward, backward, region, token };

inline constexpr std::array<ScanScale, 4> kAllScales = {ScanScale::forward, ScanScale::backward,
                                                        ScanScale::region, ScanScale::token};

std::string_view scale_name(ScanScale s);
/// Parses "forward", "backward", "region" or "token".
ScanScale parse_scale(std::string_view name);

/// perm[i] is the canonical index visited at step i; inv is its inverse.
struct ScanOrder {
  ScanScale scale;
  std::vector<std::int64_t> perm;
  std::vector<std::int64_t> inv;
};

ScanOrder forward_order(const TokenGeometry& geo);
ScanOrder backward_order(const TokenGeometry& geo);
ScanOrder region_order(const TokenGeometry& geo);
ScanOrder token_order(const TokenGeometry& geo);
ScanOrder make_order(ScanScale scale, const TokenGeometry& geo);

/// Builds a ScanOrder from an arbitrary permutation; throws if not a bijection.
ScanOrder order_from_perm(ScanScale scale, std::vector<std::int64_t> perm);

/// Reorders the rows of seq[(M*N) x C] into visit order, and back.
Tensor apply(const ScanOrder& order, const Tensor& seq);
Tensor unapply(const ScanOrder& order, const Tensor& seq);

/// Row indices for `batch` consecutive sequences, each permuted by `perm`.
std::vector<std::int64_t> batched_index(std::span<const std::int64_t> perm, std::size_t batch);

}  // namespace quadscan
