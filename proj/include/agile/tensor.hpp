#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace agile {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major double tensor.
///
/// Values are immutable once constructed; copies share storage. A tensor is
/// "tracked" when it either requires a gradient (a leaf, e.g. a parameter) or
/// was produced by an op recorded on the currently active Tape.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_->size()); }

  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  const double* ptr() const { return data_->data(); }
  double operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  // Leaf copy that participates in autodiff, sharing storage.
  Tensor with_grad() const;
  // Constant view of the same values, cut from any tape.
  Tensor detach() const;
  // Same values under a new shape of equal element count; no tape record.
  Tensor reshaped_const(Shape shape) const;

  // Identity of the value buffer; used to key leaves on a tape.
  const void* storage_key() const { return data_.get(); }

  std::uint64_t tape_id() const { return tape_id_; }
  int node() const { return node_; }

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  bool requires_grad_ = false;
  std::uint64_t tape_id_ = 0;
  int node_ = -1;
};

/// Gradient buffers handed to a backward rule, one per op input. A slot is
/// null when that input does not need a gradient.
using GradSlots = std::span<std::vector<double>* const>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSlots grad_in)>;

class Gradients;

/// Append-only record of differentiable ops (define-by-run).
///
/// Constructing a Tape makes it the active tape of the calling thread until
/// it is destroyed; tapes nest LIFO. Ops executed while a tape is active and
/// with at least one tracked input are recorded on it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  // Inputs of a recorded node; leaves have none.
  const std::vector<int>& inputs_of(int node) const { return nodes_.at(static_cast<std::size_t>(node)).inputs; }

  bool tracks(const Tensor& t) const;
  // Node id for a tracked tensor, registering a leaf node if needed.
  int node_for(const Tensor& t);

  Tensor record(Tensor out, std::span<const Tensor> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar seed. Throws ContractError if the seed is
  /// not a one-element tensor recorded on this tape.
  Gradients backward(const Tensor& seed);

 private:
  struct Node {
    std::vector<int> inputs;
    BackwardFn backward;
    std::int64_t size = 0;
    Shape shape;
  };
  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> leaves_;
};

/// Result of a backward sweep; keeps one buffer per reached node.
class Gradients {
 public:
  bool reached(const Tensor& t) const;
  std::optional<Tensor> find(const Tensor& t) const;
  // Gradient of t, or zeros of t's shape when t was not reached.
  Tensor of(const Tensor& t) const;
  std::size_t reached_count() const;
  bool node_reached(int node) const;

 private:
  friend class Tape;
  int lookup(const Tensor& t) const;
  std::uint64_t tape_id_ = 0;
  std::vector<std::vector<double>> grads_;
  std::vector<Shape> shapes_;
  std::unordered_map<const void*, int> leaves_;
};

/// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {
// Records `out` on the active tape if any input is tracked there; otherwise
// returns `out` unchanged.
Tensor record(Tensor out, std::initializer_list<Tensor> inputs, BackwardFn backward);
bool any_tracked(std::initializer_list<Tensor> inputs);
}  // namespace detail

}  // namespace agile
