#pragma once

// Brute-force scan-order oracles built from explicit (modality, row, col)
// coordinates rather than index arithmetic on the flattened sequence.

#include <cstdint>
#include <tuple>
#include <vector>

#include "quadscan/scan_order.hpp"

namespace quadscan::oracle {

struct Token {
  std::size_t modality;
  bool is_template;
  std::size_t row, col;
};

inline std::vector<Token> canonical_tokens(const TokenGeometry& geo) {
  std::vector<Token> tokens;
  const std::size_t sz = geo.template_side(), sx = geo.search_side();
  for (std::size_t m = 0; m < geo.modalities; ++m) {
    for (std::size_t r = 0; r < sz; ++r)
      for (std::size_t c = 0; c < sz; ++c) tokens.push_back({m, true, r, c});
    for (std::size_t r = 0; r < sx; ++r)
      for (std::size_t c = 0; c < sx; ++c) tokens.push_back({m, false, r, c});
  }
  return tokens;
}

inline std::int64_t find_token(const std::vector<Token>& tokens, const Token& t) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& u = tokens[i];
    if (u.modality == t.modality && u.is_template == t.is_template && u.row == t.row && u.col == t.col) {
      return static_cast<std::int64_t>(i);
    }
  }
  return -1;
}

/// Templates of every modality, then each search grid cut into four
/// template-sized blocks (TL, TR, BL, BR); every block visits all modalities.
inline std::vector<std::int64_t> region_by_blocks(const TokenGeometry& geo) {
  const auto tokens = canonical_tokens(geo);
  const std::size_t sz = geo.template_side();
  std::vector<std::int64_t> perm;
  for (std::size_t m = 0; m < geo.modalities; ++m)
    for (std::size_t r = 0; r < sz; ++r)
      for (std::size_t c = 0; c < sz; ++c) perm.push_back(find_token(tokens, {m, true, r, c}));
  const std::size_t block_origin[4][2] = {{0, 0}, {0, sz}, {sz, 0}, {sz, sz}};
  for (const auto& origin : block_origin) {
    for (std::size_t m = 0; m < geo.modalities; ++m)
      for (std::size_t r = 0; r < sz; ++r)
        for (std::size_t c = 0; c < sz; ++c)
          perm.push_back(find_token(tokens, {m, false, origin[0] + r, origin[1] + c}));
  }
  return perm;
}

/// Outer loop over token position, inner loop over modality.
inline std::vector<std::int64_t> token_by_loops(const TokenGeometry& geo) {
  const auto tokens = canonical_tokens(geo);
  std::vector<std::int64_t> perm;
  const std::size_t N = geo.tokens_per_modality();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t m = 0; m < geo.modalities; ++m) {
      Token t = tokens[n];  // position n of modality 0
      t.modality = m;
      perm.push_back(find_token(tokens, t));
    }
  }
  return perm;
}

}  // namespace quadscan::oracle
