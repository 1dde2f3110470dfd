#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace zigma::diffkit {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

// Process-wide accounting of bytes held by tensor buffers. The peak is a
// high-water mark since the last reset_peak().
struct AllocStats {
  std::int64_t current_bytes;
  std::int64_t peak_bytes;
};
AllocStats alloc_stats();
void reset_alloc_peak();

namespace detail {
void note_alloc(std::size_t bytes);
void note_free(std::size_t bytes);
}  // namespace detail

// Buffers start on a 64-byte boundary. Vectorised loops then split every
// buffer the same way, so a reduction's summation order never depends on
// where malloc happened to place the data.
inline constexpr std::size_t kBufferAlign = 64;

template <class T>
struct CountingAllocator {
  using value_type = T;
  CountingAllocator() = default;
  template <class U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    detail::note_alloc(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlign}));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    detail::note_free(n * sizeof(T));
    ::operator delete(p, n * sizeof(T), std::align_val_t{kBufferAlign});
  }
  template <class U>
  bool operator==(const CountingAllocator<U>&) const noexcept {
    return true;
  }
};

using Storage = std::vector<double, CountingAllocator<double>>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One record on the tape. `backward` reads this node's grad and accumulates
// into the parents' grads. Nodes are ordered by `seq` (creation order).
struct Node {
  Shape shape;
  Storage data;
  Storage grad;
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t seq = 0;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;

  Storage& ensure_grad();
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Reference-semantics handle to a tape node, like a framework tensor. Copies
// share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), 1.0, requires_grad); }
  static Tensor scalar(double value, bool requires_grad = false) { return full({}, value, requires_grad); }
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return node().data.size(); }

  std::span<double> data() { return node().data; }
  std::span<const double> data() const { return node().data; }
  std::vector<double> values() const { return {node().data.begin(), node().data.end()}; }
  double item() const;
  double at(std::size_t flat) const { return node().data.at(flat); }

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return !node().grad.empty(); }
  std::span<const double> grad() const { return node().grad; }
  std::span<double> mutable_grad() { return node().ensure_grad(); }
  void zero_grad();

  // Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  Node& node() const;
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

// Builds an op result. When grad is enabled and any input requires grad the
// node records `inputs` as parents and keeps `backward`; otherwise the result
// is a constant.
Tensor make_result(Shape shape, Storage data, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward);
Tensor make_result(Shape shape, Storage data, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward);

// Reverse sweep from a scalar loss. Visits every reachable node once in
// reverse creation order and releases the intermediate records, so a second
// call on the same graph throws GraphError.
void backward(const Tensor& loss);

}  // namespace zigma::diffkit
