#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace quadscan {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Storage is always double; in f32 mode every op output is rounded to the
/// nearest float so values stay representable in the checkpoint format.
enum class Precision { f64, f32 };

Precision current_precision();

/// Sets the thread's precision for the lifetime of the guard.
class PrecisionGuard {
 public:
  explicit PrecisionGuard(Precision p);
  ~PrecisionGuard();
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision saved_;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
};

/// Shared handle to a dense row-major array. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const;
  /// Leading dimension (1 for scalars).
  std::size_t rows() const;
  /// Product of the trailing dimensions.
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double at(std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer, zeros if nothing has been accumulated.
  std::vector<double> grad() const;
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy without gradient history.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of differentiable operations. Constructing a tape makes it
/// the active tape on the calling thread until it is destroyed; ops executed
/// while a tape is active and touching a requires_grad input are recorded.
/// Single-threaded: one tape per worker.
class GradTape {
 public:
  explicit GradTape(Precision precision = Precision::f64);
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  void record(std::vector<Tensor> inputs, const Tensor& output, std::function<void()> backward_fn);

  /// Seeds dloss/dloss = 1 and replays the tape in reverse creation order,
  /// which is a reverse topological order. Leaf gradients accumulate.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  Precision precision() const { return precision_; }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward_fn;
  };

  std::vector<Entry> entries_;
  Precision precision_;
  PrecisionGuard guard_;
  GradTape* previous_;
};

namespace detail {

/// True when a tape is active and any input requires grad.
bool wants_grad(std::initializer_list<const Tensor*> inputs);
bool wants_grad(std::span<const Tensor> inputs);

/// Gradient buffer of t, allocated (zero-filled) on first use.
std::vector<double>& grad_buffer(const Tensor& t);

/// Applies the thread's precision rounding to a freshly computed output.
void finalize(Tensor& out);

}  // namespace detail

}  // namespace quadscan
