#include "pyrpoint/parameters.hpp"

#include <cmath>

#include "pyrpoint/errors.hpp"
#include "pyrpoint/rng.hpp"

namespace pyrpoint {

Parameter& ParameterStore::create(const std::string& name, ad::Shape shape, std::vector<double> init,
                                  bool trainable) {
  if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->trainable = trainable;
  p->value = trainable ? ad::Value::variable(std::move(shape), std::move(init))
                       : ad::Value::constant(std::move(shape), std::move(init));
  by_name_.emplace(name, entries_.size());
  entries_.push_back(std::move(p));
  return *entries_.back();
}

Parameter& ParameterStore::create_uniform(const std::string& name, ad::Shape shape, std::size_t fan_in,
                                          std::uint64_t seed) {
  Rng rng(derive_seed(seed, name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  std::vector<double> init(ad::numel(shape));
  for (double& v : init) v = rng.uniform(-bound, bound);
  return create(name, std::move(shape), std::move(init), true);
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : entries_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : entries_[it->second].get();
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_)
    if (p->trainable) n += p->value.numel();
  return n;
}

std::size_t ParameterStore::total_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_) n += p->value.numel();
  return n;
}

std::vector<ad::Value> ParameterStore::trainable_values() const {
  std::vector<ad::Value> out;
  for (const auto& p : entries_)
    if (p->trainable) out.push_back(p->value);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : entries_) p->value.zero_grad();
}

}  // namespace pyrpoint
