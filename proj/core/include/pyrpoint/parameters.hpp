#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pyrpoint/autodiff.hpp"

namespace pyrpoint {

/// Named learned tensor. Non-trainable entries (batch-norm running
/// statistics) live in the same registry so they persist in checkpoints.
struct Parameter {
  std::string name;
  ad::Value value;
  bool trainable = true;
  std::vector<double> momentum;  // optimizer state, empty until first step
};

/// Ordered registry with unique hierarchical names. Entries are heap-stable:
/// blocks keep raw pointers into the store for its lifetime.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  /// Registers a parameter; throws ConfigError on a duplicate name.
  Parameter& create(const std::string& name, ad::Shape shape, std::vector<double> init, bool trainable = true);

  /// Zero-mean uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], seeded from
  /// (seed, name) so the draw does not depend on registration order.
  Parameter& create_uniform(const std::string& name, ad::Shape shape, std::size_t fan_in, std::uint64_t seed);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  Parameter& operator[](std::size_t i) { return *entries_[i]; }
  const Parameter& operator[](std::size_t i) const { return *entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Scalar count of trainable entries.
  std::size_t trainable_count() const;
  /// Scalar count of every entry, buffers included.
  std::size_t total_count() const;

  std::vector<ad::Value> trainable_values() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

}  // namespace pyrpoint
