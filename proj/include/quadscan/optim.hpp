#pragma once

#include <string>
#include <vector>

#include "quadscan/tensor.hpp"

namespace quadscan {

/// Named, ordered collection of trainable leaves.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  /// Registers a leaf and marks it requires_grad. Names must be unique.
  Tensor& add(std::string name, Tensor value);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t parameter_count() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

struct AdamWConfig {
  double lr = 1e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled-weight-decay Adam with bias-corrected moments.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Applies one update from the accumulated gradients of every entry.
  /// Returns false, leaving parameters and moments untouched, if any gradient
  /// is non-finite.
  bool step(ParamStore& params);

  void set_lr(double lr) { config_.lr = lr; }
  const AdamWConfig& config() const { return config_; }
  long steps_taken() const { return step_; }
  long steps_skipped() const { return skipped_; }

 private:
  AdamWConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long step_ = 0;
  long skipped_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);

}  // namespace quadscan
