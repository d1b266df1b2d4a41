#include "quadscan/tensor.hpp"

#include <sstream>

namespace quadscan {

namespace {

thread_local Precision t_precision = Precision::f64;
thread_local GradTape* t_active_tape = nullptr;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Precision current_precision() { return t_precision; }

PrecisionGuard::PrecisionGuard(Precision p) : saved_(t_precision) { t_precision = p; }
PrecisionGuard::~PrecisionGuard() { t_precision = saved_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= ndim()) throw ShapeError("Tensor::dim: axis out of range");
  return impl_->shape[i];
}

std::size_t Tensor::rows() const { return ndim() == 0 ? 1 : impl_->shape[0]; }

std::size_t Tensor::cols() const {
  const auto r = rows();
  return r == 0 ? 0 : numel() / r;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
  return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

Tensor Tensor::clone() const {
  return from(impl_->shape, impl_->data, impl_->requires_grad);
}

GradTape::GradTape(Precision precision)
    : precision_(precision), guard_(precision), previous_(t_active_tape) {
  t_active_tape = this;
}

GradTape::~GradTape() { t_active_tape = previous_; }

GradTape* GradTape::active() { return t_active_tape; }

void GradTape::record(std::vector<Tensor> inputs, const Tensor& output,
                      std::function<void()> backward_fn) {
  output.impl()->requires_grad = true;
  entries_.push_back({std::move(inputs), output, std::move(backward_fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to the tape");
  }
  auto& seed = detail::grad_buffer(loss);
  seed[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.impl()->grad.empty()) continue;
    it->backward_fn();
  }
}

namespace detail {

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (t_active_tape == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool wants_grad(std::span<const Tensor> inputs) {
  if (t_active_tape == nullptr) return false;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

std::vector<double>& grad_buffer(const Tensor& t) {
  auto& g = t.impl()->grad;
  if (g.empty()) g.assign(t.numel(), 0.0);
  return g;
}

void finalize(Tensor& out) {
  if (t_precision == Precision::f32) {
    for (auto& v : out.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace detail

}  // namespace quadscan
