#pragma once

#include <span>
#include <string>
#include <vector>

#include "quadscan/optim.hpp"
#include "quadscan/rng.hpp"
#include "quadscan/tensor.hpp"

namespace quadscan::ssm {

struct SsmConfig {
  std::size_t d_model = 16;
  std::size_t d_state = 8;
  std::size_t conv_width = 4;
};

/// Parameters of one selective-scan path. A = -exp(a_log) is the
/// continuous-time decay; delta = softplus(x * dt_weight + dt_bias).
struct SelectiveScanParams {
  Tensor dt_weight;    // [D x D]
  Tensor dt_bias;      // [D]
  Tensor b_weight;     // [D x S]
  Tensor c_weight;     // [D x S]
  Tensor a_log;        // [D x S]
  Tensor d_skip;       // [D]
  Tensor conv_weight;  // [w x D], tap j multiplies x[t - j]
  Tensor conv_bias;    // [D]

  std::size_t d_model() const { return a_log.dim(0); }
  std::size_t d_state() const { return a_log.dim(1); }
  std::size_t conv_width() const { return conv_weight.dim(0); }
  std::size_t parameter_count() const;

  /// Registers freshly initialized parameters under `prefix.` in the store.
  static SelectiveScanParams create(ParamStore& store, const std::string& prefix,
                                    const SsmConfig& config, Rng& rng);
  /// Looks up parameters previously registered under `prefix.`.
  static SelectiveScanParams bind(ParamStore& store, const std::string& prefix);
};

/// Raw views for the scan recurrence over rows [0, length) of a sequence made
/// of independent segments of segment_len rows each.
struct ScanCoreInputs {
  std::span<const double> x;       // [L x D]
  std::span<const double> delta;   // [L x D], positive
  std::span<const double> a_log;   // [D x S]
  std::span<const double> b;       // [L x S]
  std::span<const double> c;       // [L x S]
  std::span<const double> d_skip;  // [D]
  std::size_t length = 0;
  std::size_t d_model = 0;
  std::size_t d_state = 0;
  std::size_t segment_len = 0;     // 0 means one segment
  std::span<const double> h0;      // [D x S] initial state of the first segment, empty = zeros
};

/// States retained by the forward pass for the reverse recurrence.
struct ScanCoreCache {
  std::vector<double> states;  // h_t for every row, [L x D x S]
  bool retained = false;
};

struct ScanCoreGrads {
  std::vector<double> x, delta, a_log, b, c, d_skip, h0;
};

/// h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * x_t,
/// y_t = <C_t, h_t> + D * x_t. Returns y [L x D]; fills the cache when given
/// and the state after the last row when last_state is given.
std::vector<double> scan_core_forward(const ScanCoreInputs& in, ScanCoreCache* cache,
                                      std::vector<double>* last_state);

/// Reverse recurrence over t = L..1. Throws ContractError if the cache does
/// not hold the forward states.
ScanCoreGrads scan_core_backward(const ScanCoreInputs& in, const ScanCoreCache& cache,
                                 std::span<const double> grad_y);

/// Differentiable wrapper of the scan recurrence.
Tensor scan_core(const Tensor& x, const Tensor& delta, const Tensor& a_log, const Tensor& b,
                 const Tensor& c, const Tensor& d_skip, std::size_t segment_len = 0,
                 std::span<const double> h0 = {}, std::vector<double>* last_state = nullptr);

struct ScanResult {
  Tensor y;
  std::vector<double> last_state;  // [D x S]
};

/// Input-dependent discretization followed by the scan recurrence.
ScanResult selective_scan(const Tensor& x, const SelectiveScanParams& p,
                          std::size_t segment_len = 0, std::span<const double> h0 = {});

/// y[t] = bias + sum_j weight[j] * x[t - j], zero before each segment start.
Tensor causal_depthwise_conv(const Tensor& x, const Tensor& weight, const Tensor& bias = {},
                             std::size_t segment_len = 0);

/// One path: causal conv then selective scan.
Tensor scan_path(const Tensor& x, const SelectiveScanParams& p, std::size_t segment_len = 0);

}  // namespace quadscan::ssm
