#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "quadscan/optim.hpp"
#include "quadscan/rng.hpp"
#include "quadscan/scan_order.hpp"
#include "quadscan/ssm.hpp"

namespace quadscan::mfm {

/// Which of the four scan paths are active.
struct PathSet {
  std::array<bool, 4> on{true, true, true, true};  // indexed like kAllScales

  static PathSet all() { return {}; }
  static PathSet none() { return {{false, false, false, false}}; }
  /// Comma-separated subset of {forward, backward, region, token}.
  static PathSet parse(std::string_view list);

  bool has(ScanScale s) const { return on[static_cast<std::size_t>(s)]; }
  void set(ScanScale s, bool v) { on[static_cast<std::size_t>(s)] = v; }
  std::size_t count() const;
  std::string to_string() const;
  bool operator==(const PathSet&) const = default;
};

/// Ablation variants: modal-level scanning only, plus region, plus token, all.
enum class Variant { mamba, mamba_v2, mamba_v3, full };

PathSet variant_paths(Variant v);
std::string_view variant_name(Variant v);

struct MfmConfig {
  std::size_t dim = 16;        // C
  std::size_t expand = 2;      // C_inner = expand * C
  std::size_t d_state = 8;
  std::size_t conv_width = 4;
  PathSet paths = PathSet::all();

  std::size_t inner() const { return expand * dim; }
};

/// Multiscale fusion block: shared input/gate/output projections and one
/// conv + selective-scan parameter set per enabled path.
struct MfmBlock {
  MfmConfig config;
  Tensor in_x;   // [C x Ci]
  Tensor in_z;   // [C x Ci]
  Tensor out;    // [Ci x C]
  std::array<std::optional<ssm::SelectiveScanParams>, 4> path_params;

  static MfmBlock create(ParamStore& store, const std::string& prefix, const MfmConfig& config,
                         Rng& rng);
  static MfmBlock bind(ParamStore& store, const std::string& prefix, const MfmConfig& config);

  const PathSet& enabled() const { return config.paths; }
  std::size_t parameter_count() const;
};

/// Same weights with only `flags` enabled. Throws ConfigError when no path is
/// enabled or a requested path has no parameters.
MfmBlock variant(const MfmBlock& block, const PathSet& flags);
MfmBlock variant(const MfmBlock& block, Variant v);

/// Records, per path, the largest deviation of unapply(apply(x)) from x seen
/// inside mfm_forward.
struct MfmProbe {
  std::array<double, 4> roundtrip_error{0, 0, 0, 0};
  std::array<bool, 4> visited{false, false, false, false};
};

/// H is [(batch * M * N) x C] in canonical layout; returns the same shape:
/// H + Out(mean_p(unapply_p(path_p(apply_p(H In_x)))) * silu(H In_z)).
Tensor mfm_forward(const Tensor& H, const TokenGeometry& geo, const MfmBlock& block,
                   MfmProbe* probe = nullptr);

/// Same computation with caller-supplied orders, indexed like kAllScales; only
/// the enabled paths' entries are read.
Tensor mfm_forward(const Tensor& H, const std::array<ScanOrder, 4>& orders, const MfmBlock& block);

/// The single-path gated SSM block applied in canonical order (no permutation).
Tensor gated_ssm(const Tensor& H, const MfmBlock& block, ScanScale path, std::size_t segment_len);

/// Analytic multiply-accumulate count of one mfm_forward on one sequence.
std::uint64_t count_flops(const MfmConfig& config, const TokenGeometry& geo);
/// The scan-path part of count_flops (per enabled path, excluding projections).
std::uint64_t path_flops(const MfmConfig& config, std::size_t total_tokens);

}  // namespace quadscan::mfm
