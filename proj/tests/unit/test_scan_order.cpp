#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "quadscan/scan_order.hpp"
#include "scan_oracles.hpp"

using namespace quadscan;
using Perm = std::vector<std::int64_t>;

TEST_CASE("forward order is the canonical layout") {
  CHECK(forward_order({2, 1, 2}).perm == Perm{0, 1, 2, 3, 4, 5});
  Perm ramp(20);
  std::iota(ramp.begin(), ramp.end(), 0);
  CHECK(forward_order(TokenGeometry::standard(4, 1)).perm == ramp);
}

TEST_CASE("backward order reverses the forward order") {
  CHECK(backward_order({2, 1, 2}).perm == Perm{5, 4, 3, 2, 1, 0});
  auto geo = TokenGeometry::standard(3, 4);
  auto fwd = forward_order(geo), bwd = backward_order(geo);
  const auto n = static_cast<std::int64_t>(geo.total_tokens());
  for (std::size_t i = 0; i < fwd.perm.size(); ++i) CHECK(bwd.perm[i] == n - 1 - fwd.perm[i]);
  // fwd composed with bwd^-1 is the reversal.
  for (std::size_t i = 0; i < fwd.perm.size(); ++i) {
    CHECK(bwd.inv[static_cast<std::size_t>(fwd.perm[i])] == n - 1 - static_cast<std::int64_t>(i));
  }
}

TEST_CASE("region order: two modalities with single-cell quadrants") {
  CHECK(region_order(TokenGeometry::standard(2, 1)).perm == Perm{0, 5, 1, 6, 2, 7, 3, 8, 4, 9});
  Perm ramp(5);
  std::iota(ramp.begin(), ramp.end(), 0);
  CHECK(region_order(TokenGeometry::standard(1, 1)).perm == ramp);
}

TEST_CASE("region order matches the block-slicing oracle") {
  for (std::size_t m = 1; m <= 4; ++m) {
    for (std::size_t nz : {1, 4, 16}) {
      auto geo = TokenGeometry::standard(m, nz);
      CHECK(region_order(geo).perm == oracle::region_by_blocks(geo));
    }
  }
}

TEST_CASE("region order visits template tokens first and cycles modalities per quadrant") {
  auto geo = TokenGeometry::standard(3, 4);
  auto perm = region_order(geo).perm;
  const std::size_t N = geo.tokens_per_modality(), Nz = geo.template_tokens;
  for (std::size_t i = 0; i < geo.modalities * Nz; ++i) {
    CHECK(static_cast<std::size_t>(perm[i]) % N < Nz);
  }
  const std::size_t start = geo.modalities * Nz;
  for (std::size_t i = start; i < perm.size(); ++i) {
    const std::size_t step = (i - start) / Nz;  // one quadrant of one modality per Nz steps
    CHECK(static_cast<std::size_t>(perm[i]) / N == step % geo.modalities);
  }
}

TEST_CASE("region order rejects non-square templates") {
  CHECK_THROWS_AS(region_order({2, 3, 12}), GeometryError);
  CHECK_THROWS_AS(region_order({2, 4, 12}), GeometryError);
  CHECK_THROWS_AS(TokenGeometry::standard(2, 2), GeometryError);
}

TEST_CASE("token order interleaves modalities") {
  CHECK(token_order({2, 1, 2}).perm == Perm{0, 3, 1, 4, 2, 5});
  Perm ramp(5);
  std::iota(ramp.begin(), ramp.end(), 0);
  CHECK(token_order(TokenGeometry::standard(1, 1)).perm == ramp);
  auto geo = TokenGeometry::standard(4, 4);
  auto perm = token_order(geo).perm;
  CHECK(perm == oracle::token_by_loops(geo));
  const std::size_t M = geo.modalities, N = geo.tokens_per_modality();
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t m = 0; m < M; ++m) CHECK(perm[i * M + m] == static_cast<std::int64_t>(m * N + i));
  }
  // Grouping the token-order sequence by modality restores the forward order.
  Perm grouped;
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t i = 0; i < N; ++i) grouped.push_back(perm[i * M + m]);
  }
  CHECK(grouped == forward_order(geo).perm);
}

TEST_CASE("every order is a bijection with an exact inverse") {
  for (std::size_t m = 1; m <= 4; ++m) {
    for (std::size_t nz : {1, 4, 16, 64}) {
      auto geo = TokenGeometry::standard(m, nz);
      for (auto s : kAllScales) {
        auto o = make_order(s, geo);
        auto sorted = o.perm;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == static_cast<std::int64_t>(i));
        for (std::size_t i = 0; i < o.perm.size(); ++i) {
          CHECK(o.inv[static_cast<std::size_t>(o.perm[i])] == static_cast<std::int64_t>(i));
        }
      }
    }
  }
}

TEST_CASE("apply and unapply round trip") {
  Rng rng(21);
  auto geo = TokenGeometry::standard(4, 4);
  auto seq = testing::random_tensor({geo.total_tokens(), 3}, rng);
  for (auto s : kAllScales) {
    auto o = make_order(s, geo);
    auto back = unapply(o, apply(o, seq));
    for (std::size_t i = 0; i < seq.numel(); ++i) CHECK(back.at(i) == seq.at(i));
  }
  auto fwd = apply(forward_order(geo), seq);
  for (std::size_t i = 0; i < seq.numel(); ++i) CHECK(fwd.at(i) == seq.at(i));
  CHECK_THROWS_AS(apply(forward_order(geo), Tensor::zeros({geo.total_tokens() + 1, 3})), ShapeError);
}

TEST_CASE("random permutation fuzz round trip") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(1, 40));
    Perm perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i - 1)))]);
    }
    auto o = order_from_perm(ScanScale::forward, perm);
    auto seq = testing::random_tensor({n, 2}, rng);
    auto back = unapply(o, apply(o, seq));
    bool same = true;
    for (std::size_t i = 0; i < seq.numel(); ++i) same = same && back.at(i) == seq.at(i);
    CHECK(same);
  }
  CHECK_THROWS_AS(order_from_perm(ScanScale::forward, Perm{0, 0, 1}), ContractError);
}

TEST_CASE("orders depend only on geometry") {
  auto geo = TokenGeometry::standard(3, 4);
  for (auto s : kAllScales) CHECK(make_order(s, geo).perm == make_order(s, geo).perm);
}
