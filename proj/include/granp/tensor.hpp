#pragma once

// Dense row-major tensors with a dynamic reverse-mode tape.
//
// A Tensor is a shared handle to a graph node. Primitives (see ops.hpp)
// record their output on the active Tape whenever any input requires a
// gradient; with no active tape they run in inference mode and record
// nothing. Storage precision is a process-wide setting: 32-bit for training,
// 64-bit for gradient checks.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "granp/error.hpp"

namespace granp::ad {

enum class Precision { f32, f64 };

Precision precision();
void set_precision(Precision p);
const char* to_string(Precision p);
// Reads GRANP_PRECISION ("f32" or "f64"); unset means f32.
Precision precision_from_env();

// Restores the previous global precision on destruction.
class PrecisionGuard {
 public:
  explicit PrecisionGuard(Precision p) : previous_(precision()) { set_precision(p); }
  ~PrecisionGuard() { set_precision(previous_); }
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision previous_;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

namespace detail {

struct Node {
  const char* kind = "leaf";
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until backward touches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor from_values(Shape shape, std::span<const double> values, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);
  // Wraps an already computed node; used by the primitive implementations.
  static Tensor from_node(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape_numel(shape()); }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  Precision precision() const;
  bool requires_grad() const;
  const char* kind() const;

  double item() const;
  double at(std::size_t flat) const;
  // Mutates a value in place. Only legal on leaves (parameters, inputs).
  void set(std::size_t flat, double value);
  std::vector<double> to_vector() const;

  bool has_grad() const;
  // Gradient left by the last backward pass; zeros if none reached this node.
  std::vector<double> grad_vector() const;

  template <typename T>
  std::span<T> data();
  template <typename T>
  std::span<const T> data() const;

  // A fresh leaf holding a copy of the values.
  Tensor detach(bool requires_grad = false) const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

extern template std::span<float> Tensor::data<float>();
extern template std::span<double> Tensor::data<double>();
extern template std::span<const float> Tensor::data<float>() const;
extern template std::span<const double> Tensor::data<double>() const;

// Ordered record of primitive applications. Nodes are appended in creation
// order, which is a topological order of the computation.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<detail::Node> node);
  const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool contains(const detail::Node* node) const;
  void clear() { nodes_.clear(); }

  static Tape* active();

  // Makes `tape` the active tape for the current thread; nullptr disables
  // recording (inference mode).
  class Scope {
   public:
    explicit Scope(Tape* tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

struct Parameter {
  std::string name;
  Tensor value;  // leaf with requires_grad
  Tensor grad;   // same shape as value, filled by backward
};

class ParameterSet {
 public:
  // Registers a parameter; names must be unique. Returns the leaf handle.
  Tensor add(const std::string& name, Tensor init);

  bool contains(const std::string& name) const;
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t total_values() const;

 private:
  std::vector<Parameter> items_;
  std::map<std::string, std::size_t> index_;
};

using GradientMap = std::map<std::string, Tensor>;

// Reverse sweep from a scalar root over the nodes recorded on `tape`.
// Gradients are reset at the start, so repeated calls are idempotent.
void backward(Tape& tape, const Tensor& root);

// As above, and collects parameter gradients by name. Parameters the root
// does not depend on receive zeros. Also stores each gradient in
// Parameter::grad.
GradientMap backward(Tape& tape, const Tensor& root, ParameterSet& params);

}  // namespace granp::ad
