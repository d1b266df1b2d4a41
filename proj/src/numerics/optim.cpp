#include "quadscan/optim.hpp"

#include <cmath>

namespace quadscan {

Tensor& ParamStore::add(std::string name, Tensor value) {
  if (contains(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
  value.set_requires_grad(true);
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.back().value;
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw ContractError("ParamStore: no parameter '" + name + "'");
}

const Tensor& ParamStore::get(const std::string& name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

bool AdamW::step(ParamStore& params) {
  auto& entries = params.entries();
  for (const auto& e : entries) {
    for (double g : e.value.impl()->grad) {
      if (!std::isfinite(g)) {
        ++skipped_;
        return false;
      }
    }
  }
  if (m_.size() != entries.size()) {
    m_.resize(entries.size());
    v_.resize(entries.size());
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto p = entries[i].value.mutable_data();
    const auto& g = entries[i].value.impl()->grad;
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != p.size()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      p[j] -= config_.lr * config_.weight_decay * p[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
  return true;
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& e : params.entries()) {
    for (double g : e.value.impl()->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& e : params.entries()) {
      for (double& g : e.value.impl()->grad) g *= s;
    }
  }
  return norm;
}

}  // namespace quadscan
