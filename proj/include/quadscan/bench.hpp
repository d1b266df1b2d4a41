#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "quadscan/mfm.hpp"

namespace quadscan::bench {

/// Forward cost of one attention block (q, k, v, o projections plus scores
/// and weighted sum) over L tokens of width C, in multiply-accumulates.
std::uint64_t attention_block_flops(std::size_t L, std::size_t C);
/// Attention-A: RGB paired with each other modality, M - 1 blocks over 2N.
std::uint64_t attention_a_flops(std::size_t N, std::size_t C, std::size_t M = 4);
/// Attention-B: one block over all M * N tokens.
std::uint64_t attention_b_flops(std::size_t N, std::size_t C, std::size_t M = 4);
/// MFM over M streams of N tokens.
std::uint64_t mfm_flops(const mfm::MfmConfig& config, std::size_t N, std::size_t M = 4);

/// Scan orders for M streams of N tokens. Uses the standard geometry when N
/// splits into a square template grid plus a 4x search grid; otherwise the
/// region path visits four equal bands of the search tokens instead of
/// quadrants, which has the same cost.
std::array<ScanOrder, 4> bench_orders(std::size_t M, std::size_t N);

/// Median over `repeats` runs after `warmups`; each run times enough calls
/// to span at least `min_run_ms` and reports the mean per call.
double median_time_ms(const std::function<void()>& fn, std::size_t warmups = 2, std::size_t repeats = 5,
                      double min_run_ms = 10.0);

struct FusionBenchConfig {
  std::vector<std::size_t> lengths{80, 160, 320, 640};  // tokens per modality
  std::size_t modalities = 4;
  std::size_t heads = 2;
  mfm::MfmConfig mfm;
  std::size_t warmups = 2;
  std::size_t repeats = 5;
  double min_run_ms = 10.0;
  std::uint64_t seed = 1;
  bool measure = true;  // false skips wall time
};

struct BenchRow {
  std::string module;  // mfm, attention-a, attention-b
  std::size_t tokens = 0;
  std::uint64_t flops = 0;
  std::uint64_t counted = 0;  // instrumented count of one forward, 0 when not measured
  double wall_ms = 0.0;          // median of runs_ms
  std::vector<double> runs_ms;  // per-run times; run r of every row shares one interleaved round
};

std::vector<BenchRow> run_fusion_bench(const FusionBenchConfig& config);
void write_csv(std::ostream& os, const std::vector<BenchRow>& rows);

/// Coefficient of determination of the least-squares line through (x, y).
double affine_r2(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace quadscan::bench
