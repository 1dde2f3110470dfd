#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "zigma/diffkit/tensor.hpp"

namespace zigma::diffkit {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Ordered registry of trainable leaves. Order is registration order, which
// keeps optimizer state and checkpoints aligned across runs.
class ParameterStore {
 public:
  Tensor& add(std::string name, Tensor tensor);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<NamedParameter>& entries() { return entries_; }
  const std::vector<NamedParameter>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<NamedParameter> entries_;
};

}  // namespace zigma::diffkit
