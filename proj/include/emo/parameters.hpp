#pragma once

// Named weight matrices. A ParameterSet owns the values between steps; a
// BoundParameters view records them on a tape for one forward pass.

#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "emo/autodiff.hpp"
#include "emo/errors.hpp"
#include "emo/f32.hpp"

namespace emo {

using Matrix = ad::Matrix;

class ParameterSet {
 public:
  void add(std::string name, Matrix value) {
    if (index_.contains(name)) throw ContractError("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  Matrix& operator[](std::string_view name) { return entries_[index_of(name)].second; }
  const Matrix& operator[](std::string_view name) const { return entries_[index_of(name)].second; }

  std::size_t index_of(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError("unknown parameter " + std::string(name));
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Matrix& value(std::size_t i) { return entries_[i].second; }
  const Matrix& value(std::size_t i) const { return entries_[i].second; }

  /// Rounds every entry to float precision (the on-disk representation).
  void quantize_to_float() {
    for (auto& [name, m] : entries_) round_f32_inplace(m);
  }

 private:
  std::vector<std::pair<std::string, Matrix>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

class BoundParameters {
 public:
  /// Names for which `trainable` returns true become tape variables; the rest
  /// are constants.
  BoundParameters(ad::Tape& tape, const ParameterSet& params, const std::function<bool(std::string_view)>& trainable)
      : params_(&params) {
    tensors_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      tensors_.push_back(trainable(params.name(i)) ? tape.variable(params.value(i)) : tape.constant(params.value(i)));
    }
  }

  const ad::Tensor& operator[](std::string_view name) const { return tensors_[params_->index_of(name)]; }
  std::size_t size() const { return tensors_.size(); }
  const ad::Tensor& at(std::size_t i) const { return tensors_[i]; }
  /// Substitutes another tensor for one parameter (gradient checks).
  void replace(std::string_view name, const ad::Tensor& t) { tensors_[params_->index_of(name)] = t; }

 private:
  const ParameterSet* params_;
  std::vector<ad::Tensor> tensors_;
};

inline bool all_trainable(std::string_view) { return true; }
inline bool none_trainable(std::string_view) { return false; }

}  // namespace emo
