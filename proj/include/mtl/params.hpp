#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mtl/autodiff.hpp"

namespace mtl {

/// Named, insertion-ordered collection of tensors (model parameters θ or
/// gradients). The version counter moves forward on every update.
template <typename Scalar>
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor<Scalar>>;

  void add(std::string name, Tensor<Scalar> value) {
    if (index_.contains(name)) throw StructureError("param set: duplicate entry '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const Tensor<Scalar>& at(const std::string& name) const { return entries_[lookup(name)].second; }
  Tensor<Scalar>& at(const std::string& name) { return entries_[lookup(name)].second; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  Tensor<Scalar>& tensor(std::size_t i) { return entries_[i].second; }
  const Tensor<Scalar>& tensor(std::size_t i) const { return entries_[i].second; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::uint64_t version() const { return version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  Index element_count() const {
    Index n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  /// Same names, order and shapes.
  template <typename Other>
  bool compatible(const ParamSet<Other>& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (entry(i).first != other.entry(i).first) return false;
      if (entry(i).second.shape() != other.entry(i).second.shape()) return false;
    }
    return true;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StructureError("param set: no entry '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t version_ = 0;
};

using Params = ParamSet<double>;
using GradMap = ParamSet<double>;

void require_compatible(const Params& a, const Params& b, std::string_view what);

Params zeros_like(const Params& p);
/// a + factor * b, entry by entry.
Params add_scaled(const Params& a, const Params& b, double factor);
Params scaled(const Params& a, double factor);
double dot(const Params& a, const Params& b);
double global_norm(const Params& p);
VectorX<double> flatten(const Params& p);
Params unflatten(const Params& like, const VectorX<double>& flat);

/// Tape variables for each entry of a parameter set, in the same order.
template <typename Scalar>
class ParamVars {
 public:
  void add(const std::string& name, Var<Scalar> v) {
    index_.emplace(name, vars_.size());
    names_.push_back(name);
    vars_.push_back(v);
  }
  const Var<Scalar>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StructureError("param vars: no entry '" + name + "'");
    return vars_[it->second];
  }
  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t size() const { return vars_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Var<Scalar>& var(std::size_t i) const { return vars_[i]; }

 private:
  std::vector<std::string> names_;
  std::vector<Var<Scalar>> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Registers every entry as a differentiable leaf on `tape`.
ParamVars<double> bind(Tape<double>& tape, const Params& params);
/// Dual leaves carrying `tangent` as the forward direction.
ParamVars<Dual> bind(Tape<Dual>& tape, const Params& params, const Params& tangent);

/// Gradient for every bound entry after tape.backward(root); untouched
/// entries receive zero tensors.
template <typename Scalar>
ParamSet<Scalar> collect_gradients(const Tape<Scalar>& tape, const ParamVars<Scalar>& vars) {
  ParamSet<Scalar> out;
  for (std::size_t i = 0; i < vars.size(); ++i) out.add(vars.name(i), tape.grad(vars.var(i)));
  return out;
}

/// Runs backward from `root` and collects gradients for `vars`.
template <typename Scalar>
ParamSet<Scalar> backward(Tape<Scalar>& tape, const Var<Scalar>& root,
                          const ParamVars<Scalar>& vars) {
  tape.backward(root);
  return collect_gradients(tape, vars);
}

/// θ' = θ − lr·g as a new set; the inputs are left untouched.
Params sgd_step(const Params& params, const GradMap& grads, double lr);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  Params m;
  Params v;

  static AdamState for_params(const Params& params);
};

/// Bias-corrected Adam update. Returns the new parameters and moments.
std::pair<Params, AdamState> adam_step(const AdamState& state, const Params& params,
                                       const GradMap& grads, double lr);

// Checkpoint layout (all integers little-endian):
//   magic "MTLC" | u32 version | u64 entry count
//   per entry: u32 name length | name bytes | u32 rank | u64 dims[rank] |
//              f64 values[prod(dims)] row-major
//   u64 FNV-1a of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Params& params);
Params read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Params& params);
Params load_checkpoint(const std::filesystem::path& path);

}  // namespace mtl
