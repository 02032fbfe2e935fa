#pragma once

#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "emanet/autodiff.hpp"

namespace emanet {

/// Named, ordered collection of trainable tensors. Names are dotted paths
/// such as "ctal.fuse.task0.weight".
template <typename Scalar>
class ParamStore {
 public:
  Tensor<Scalar>& add(const std::string& name, Tensor<Scalar> init) {
    if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    index_.emplace(name, values_.size());
    names_.push_back(name);
    values_.push_back(std::move(init));
    return values_.back();
  }

  /// Uniform(-bound, bound) initialization.
  Tensor<Scalar>& add_uniform(const std::string& name, Shape shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    return add(name, Tensor<Scalar>::generate(std::move(shape), [&] { return dist(rng); }));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor<Scalar>& at(const std::string& name) { return values_[index_of(name)]; }
  const Tensor<Scalar>& at(const std::string& name) const { return values_[index_of(name)]; }

  std::span<Tensor<Scalar>> values() { return values_; }
  std::span<const Tensor<Scalar>> values() const { return values_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t count() const { return values_.size(); }

  /// Number of scalar parameters actually allocated.
  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (std::size_t i = 0; i < values_.size(); ++i) out.add(names_[i], values_[i].template cast<Other>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<Scalar>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape as gradient-tracked leaves.
template <typename Scalar>
class BoundParams {
 public:
  BoundParams(Tape<Scalar>& tape, const ParamStore<Scalar>& store, bool requires_grad = true) : store_(&store) {
    for (const auto& v : store.values()) vars_.push_back(tape.leaf(v, requires_grad));
  }

  /// Names `store`'s entries with already-placed vars (same order and shapes).
  BoundParams(const ParamStore<Scalar>& store, std::vector<Var<Scalar>> vars) : store_(&store), vars_(std::move(vars)) {
    if (vars_.size() != store.count()) throw ContractError("bound var count does not match the parameter store");
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (vars_[i].shape() != store.values()[i].shape()) {
        throw ContractError("bound var for '" + store.names()[i] + "' has the wrong shape");
      }
    }
  }

  Var<Scalar> operator[](const std::string& name) const { return vars_[store_->index_of(name)]; }
  bool contains(const std::string& name) const { return store_->contains(name); }

  /// Gradients in store order, after `Tape::backward`.
  std::vector<Tensor<Scalar>> grads() const {
    std::vector<Tensor<Scalar>> out;
    out.reserve(vars_.size());
    for (const auto& v : vars_) out.push_back(v.grad());
    return out;
  }

  const std::vector<Var<Scalar>>& vars() const { return vars_; }

 private:
  const ParamStore<Scalar>* store_;
  std::vector<Var<Scalar>> vars_;
};

}  // namespace emanet
