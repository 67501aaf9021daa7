#include "agile/tensor.hpp"

#include <atomic>
#include <sstream>

#include "agile/error.hpp"

namespace agile {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

// Active tape stack; a nullptr entry means recording is suspended.
thread_local std::vector<Tape*> tape_stack;

}  // namespace

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>()) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  for (auto d : shape_) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
  if (numel_of(shape_) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("shape " + shape_str(shape_) + " holds " + std::to_string(numel_of(shape_)) +
                         " values but " + std::to_string(data.size()) + " were given");
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = static_cast<std::size_t>(numel_of(shape));
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::with_grad() const {
  Tensor t = detach();
  t.requires_grad_ = true;
  return t;
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

Tensor Tensor::reshaped_const(Shape shape) const {
  if (numel_of(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor t = detach();
  t.shape_ = std::move(shape);
  return t;
}

// --- Tape ------------------------------------------------------------------

Tape::Tape() : id_(next_tape_id.fetch_add(1)) { tape_stack.push_back(this); }

Tape::~Tape() {
  if (!tape_stack.empty() && tape_stack.back() == this) tape_stack.pop_back();
}

Tape* Tape::active() { return tape_stack.empty() ? nullptr : tape_stack.back(); }

bool Tape::tracks(const Tensor& t) const {
  return t.requires_grad_ || (t.tape_id_ == id_ && t.node_ >= 0);
}

int Tape::node_for(const Tensor& t) {
  if (t.tape_id_ == id_ && t.node_ >= 0) return t.node_;
  if (!t.requires_grad_) return -1;
  auto it = leaves_.find(t.storage_key());
  if (it != leaves_.end()) return it->second;
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{{}, nullptr, t.numel(), t.shape()});
  leaves_.emplace(t.storage_key(), id);
  return id;
}

Tensor Tape::record(Tensor out, std::span<const Tensor> inputs, BackwardFn backward) {
  Node node;
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(node_for(in));
  node.backward = std::move(backward);
  node.size = out.numel();
  node.shape = out.shape();
  out.tape_id_ = id_;
  out.node_ = static_cast<int>(nodes_.size());
  out.requires_grad_ = false;
  nodes_.push_back(std::move(node));
  return out;
}

Gradients Tape::backward(const Tensor& seed) {
  if (seed.numel() != 1) {
    throw ContractError("backward seed must be a scalar, got shape " + shape_str(seed.shape()));
  }
  int root = -1;
  if (seed.tape_id_ == id_ && seed.node_ >= 0) {
    root = seed.node_;
  } else if (seed.requires_grad_) {
    root = node_for(seed);
  } else {
    throw ContractError("backward seed is not recorded on this tape");
  }

  Gradients g;
  g.tape_id_ = id_;
  g.leaves_ = leaves_;
  g.grads_.resize(nodes_.size());
  g.shapes_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) g.shapes_[i] = nodes_[i].shape;
  g.grads_[static_cast<std::size_t>(root)].assign(1, 1.0);

  std::vector<std::vector<double>*> slots;
  for (int i = root; i >= 0; --i) {
    auto& gi = g.grads_[static_cast<std::size_t>(i)];
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    if (gi.empty() || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      int in = node.inputs[k];
      if (in < 0) continue;
      auto& buf = g.grads_[static_cast<std::size_t>(in)];
      if (buf.empty()) buf.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(in)].size), 0.0);
      slots[k] = &buf;
    }
    node.backward(gi, GradSlots(slots.data(), slots.size()));
  }
  return g;
}

// --- Gradients -------------------------------------------------------------

int Gradients::lookup(const Tensor& t) const {
  if (t.tape_id() == tape_id_ && t.node() >= 0) return t.node();
  if (t.requires_grad()) {
    auto it = leaves_.find(t.storage_key());
    if (it != leaves_.end()) return it->second;
  }
  return -1;
}

bool Gradients::reached(const Tensor& t) const {
  int id = lookup(t);
  return id >= 0 && !grads_[static_cast<std::size_t>(id)].empty();
}

bool Gradients::node_reached(int node) const {
  return node >= 0 && static_cast<std::size_t>(node) < grads_.size() &&
         !grads_[static_cast<std::size_t>(node)].empty();
}

std::optional<Tensor> Gradients::find(const Tensor& t) const {
  int id = lookup(t);
  if (id < 0 || grads_[static_cast<std::size_t>(id)].empty()) return std::nullopt;
  return Tensor(t.shape(), grads_[static_cast<std::size_t>(id)]);
}

Tensor Gradients::of(const Tensor& t) const {
  auto g = find(t);
  return g ? *g : Tensor::zeros(t.shape());
}

std::size_t Gradients::reached_count() const {
  std::size_t n = 0;
  for (const auto& gi : grads_) n += gi.empty() ? 0 : 1;
  return n;
}

NoGradGuard::NoGradGuard() { tape_stack.push_back(nullptr); }
NoGradGuard::~NoGradGuard() {
  if (!tape_stack.empty() && tape_stack.back() == nullptr) tape_stack.pop_back();
}

namespace detail {

bool any_tracked(std::initializer_list<Tensor> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return false;
  for (const auto& in : inputs) {
    if (tape->tracks(in)) return true;
  }
  return false;
}

Tensor record(Tensor out, std::initializer_list<Tensor> inputs, BackwardFn backward) {
  if (!any_tracked(inputs)) return out;
  return Tape::active()->record(std::move(out), std::span<const Tensor>(inputs.begin(), inputs.size()),
                                std::move(backward));
}

}  // namespace detail

}  // namespace agile
