#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cornerformer/tensor.hpp"

namespace cornerformer {

class MissingGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Named, ordered store of trainable leaves plus Adam moment buffers.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    std::vector<T> m, v;
  };

  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    auto t = Tensor<T>::from_data(std::move(shape), std::move(init), true);
    index_[name] = entries_.size();
    entries_.push_back({name, t, {}, {}});
    return t;
  }

  Tensor<T> zeros(const std::string& name, Shape shape) {
    const auto n = shape_numel(shape);
    return add(name, std::move(shape), std::vector<T>(n, T(0)));
  }

  Tensor<T> constant(const std::string& name, Shape shape, T value) {
    const auto n = shape_numel(shape);
    return add(name, std::move(shape), std::vector<T>(n, value));
  }

  // Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
  Tensor<T> xavier(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out,
                   std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    std::vector<T> w(shape_numel(shape));
    for (auto& x : w) x = static_cast<T>(u(rng));
    return add(name, std::move(shape), std::move(w));
  }

  // He-uniform for ReLU convolutions.
  Tensor<T> kaiming(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-a, a);
    std::vector<T> w(shape_numel(shape));
    for (auto& x : w) x = static_cast<T>(u(rng));
    return add(name, std::move(shape), std::move(w));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return entries_[it->second].value;
  }

  Entry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }

  long long adam_steps = 0;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update over every parameter in the store.
template <class T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg) {
  for (auto& e : store.entries())
    if (!e.value.has_grad())
      throw MissingGradientError("adam_step: parameter '" + e.name + "' has no gradient");
  const long long t = ++store.adam_steps;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& e : store.entries()) {
    auto w = e.value.mutable_data();
    auto g = e.value.grad();
    if (e.m.size() != w.size()) e.m.assign(w.size(), T(0));
    if (e.v.size() != w.size()) e.v.assign(w.size(), T(0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      e.m[i] = static_cast<T>(cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * gi);
      e.v[i] = static_cast<T>(cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * gi * gi);
      const double mhat = e.m[i] / c1, vhat = e.v[i] / c2;
      w[i] = static_cast<T>(w[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace cornerformer
