#include "zigma/diffkit/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace zigma::diffkit {

namespace {

std::atomic<std::int64_t> g_current_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};
std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

std::uint64_t next_seq() { return g_next_seq.fetch_add(1, std::memory_order_relaxed); }

NodePtr new_node(Shape shape, Storage data, bool requires_grad) {
  if (numel_of(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->seq = next_seq();
  return node;
}

}  // namespace

namespace detail {

void note_alloc(std::size_t bytes) {
  const auto now = g_current_bytes.fetch_add(static_cast<std::int64_t>(bytes)) + static_cast<std::int64_t>(bytes);
  auto peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

void note_free(std::size_t bytes) { g_current_bytes.fetch_sub(static_cast<std::int64_t>(bytes)); }

}  // namespace detail

AllocStats alloc_stats() { return {g_current_bytes.load(), g_peak_bytes.load()}; }

void reset_alloc_peak() { g_peak_bytes.store(g_current_bytes.load()); }

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Storage& Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Storage data(numel_of(shape), value);
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  Storage data(values.begin(), values.end());
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  Storage data(numel_of(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Storage data(numel_of(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Node& Tensor::node() const {
  if (!node_) throw GraphError("use of an undefined tensor");
  return *node_;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  return s[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node().data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node().requires_grad = on;
  return *this;
}

void Tensor::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(new_node(shape(), node().data, false)); }

Tensor Tensor::clone() const {
  auto copy = new_node(shape(), node().data, requires_grad());
  copy->grad = node().grad;
  return Tensor(std::move(copy));
}

Tensor make_result(Shape shape, Storage data, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  return make_result(std::move(shape), std::move(data), std::vector<Tensor>(inputs), std::move(backward));
}

Tensor make_result(Shape shape, Storage data, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward) {
  bool track = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        if (in.node().consumed) throw GraphError("op input belongs to a graph that was already back-propagated");
        track = true;
      }
    }
  }
  auto node = new_node(std::move(shape), std::move(data), track);
  if (track) {
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  Node& root = loss.node();
  if (root.data.size() != 1) throw ShapeError("backward() needs a scalar loss, got shape " + to_string(root.shape));
  if (root.consumed) throw GraphError("graph already consumed; run the forward pass again before backward()");
  if (!root.requires_grad) throw GraphError("loss does not depend on any tensor that requires grad");

  // Owning references: clearing a node's parents below may otherwise free an
  // intermediate that is still queued.
  std::vector<std::shared_ptr<Node>> keep;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{&root};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->consumed) throw GraphError("graph already consumed; run the forward pass again before backward()");
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad) {
        keep.push_back(p);
        stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  root.ensure_grad()[0] += 1.0;
  for (Node* n : order) {
    if (!n->backward) continue;  // leaf
    if (!n->grad.empty()) {
      for (const auto& p : n->parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      n->backward(*n);
    }
    n->backward = nullptr;
    n->parents.clear();
    n->consumed = true;
    Storage().swap(n->grad);
  }
}

}  // namespace zigma::diffkit
