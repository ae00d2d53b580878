#include "granp/tensor.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <string_view>
#include <unordered_set>

namespace granp::ad {

namespace {

Precision g_precision = Precision::f32;
thread_local Tape* t_active_tape = nullptr;

Buffer make_buffer(std::size_t n) {
  if (g_precision == Precision::f32) return std::vector<float>(n, 0.0f);
  return std::vector<double>(n, 0.0);
}

std::size_t buffer_size(const Buffer& b) {
  return std::visit([](const auto& v) { return v.size(); }, b);
}

void clear_grad(detail::Node& node) {
  std::visit([](auto& v) { v.clear(); }, node.grad);
}

}  // namespace

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision precision_from_env() {
  const char* env = std::getenv("GRANP_PRECISION");
  if (env == nullptr || std::string_view(env).empty()) return Precision::f32;
  std::string_view v(env);
  if (v == "f32") return Precision::f32;
  if (v == "f64") return Precision::f64;
  throw UsageError("GRANP_PRECISION must be f32 or f64, got '" + std::string(v) + "'");
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->value = make_buffer(shape_numel(shape));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::visit([&](auto& v) {
    using T = typename std::decay_t<decltype(v)>::value_type;
    std::fill(v.begin(), v.end(), static_cast<T>(value));
  }, t.node_->value);
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("from_values: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  std::visit([&](auto& v) {
    using T = typename std::decay_t<decltype(v)>::value_type;
    std::transform(values.begin(), values.end(), v.begin(),
                   [](double x) { return static_cast<T>(x); });
  }, t.node_->value);
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, bool requires_grad) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                     requires_grad);
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

const Shape& Tensor::shape() const {
  if (!node_) throw StateError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

Precision Tensor::precision() const {
  if (!node_) throw StateError("use of undefined tensor");
  return std::holds_alternative<std::vector<float>>(node_->value) ? Precision::f32
                                                                 : Precision::f64;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const char* Tensor::kind() const { return node_ ? node_->kind : "undefined"; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return at(0);
}

double Tensor::at(std::size_t flat) const {
  return std::visit([&](const auto& v) -> double { return static_cast<double>(v.at(flat)); },
                    node_->value);
}

void Tensor::set(std::size_t flat, double value) {
  if (node_->inputs.size() != 0) throw StateError("set() on a non-leaf tensor");
  std::visit([&](auto& v) {
    using T = typename std::decay_t<decltype(v)>::value_type;
    v.at(flat) = static_cast<T>(value);
  }, node_->value);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                    node_->value);
}

bool Tensor::has_grad() const { return node_ && buffer_size(node_->grad) == numel(); }

std::vector<double> Tensor::grad_vector() const {
  if (!has_grad()) return std::vector<double>(numel(), 0.0);
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                    node_->grad);
}

template <typename T>
std::span<T> Tensor::data() {
  auto* v = std::get_if<std::vector<T>>(&node_->value);
  if (v == nullptr) throw StateError("tensor precision does not match requested element type");
  return std::span<T>(*v);
}

template <typename T>
std::span<const T> Tensor::data() const {
  const auto* v = std::get_if<std::vector<T>>(&node_->value);
  if (v == nullptr) throw StateError("tensor precision does not match requested element type");
  return std::span<const T>(*v);
}

template std::span<float> Tensor::data<float>();
template std::span<double> Tensor::data<double>();
template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;

Tensor Tensor::detach(bool requires_grad) const {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape();
  node->value = node_->value;
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Tape

void Tape::record(std::shared_ptr<detail::Node> node) { nodes_.push_back(std::move(node)); }

bool Tape::contains(const detail::Node* node) const {
  return std::any_of(nodes_.begin(), nodes_.end(),
                     [&](const auto& n) { return n.get() == node; });
}

Tape* Tape::active() { return t_active_tape; }

Tape::Scope::Scope(Tape* tape) : previous_(t_active_tape) { t_active_tape = tape; }
Tape::Scope::~Scope() { t_active_tape = previous_; }

// ---------------------------------------------------------------------------
// Parameters

Tensor ParameterSet::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ValueError("duplicate parameter name '" + name + "'");
  Tensor leaf = init.detach(/*requires_grad=*/true);
  index_[name] = items_.size();
  items_.push_back(Parameter{name, leaf, Tensor::zeros(leaf.shape())});
  return leaf;
}

bool ParameterSet::contains(const std::string& name) const { return index_.count(name) != 0; }

Parameter& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter '" + name + "'");
  return items_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter '" + name + "'");
  return items_[it->second];
}

std::size_t ParameterSet::total_values() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Backward

void backward(Tape& tape, const Tensor& root) {
  if (!root.defined()) throw StateError("backward from undefined root");
  if (root.numel() != 1) {
    throw ShapeError("backward root must be scalar, got " + shape_str(root.shape()));
  }
  const auto& nodes = tape.nodes();

  std::unordered_set<detail::Node*> touched;
  for (const auto& n : nodes) {
    touched.insert(n.get());
    for (const auto& in : n->inputs) touched.insert(in.get());
  }
  touched.insert(root.node());
  for (auto* n : touched) clear_grad(*n);

  if (!root.requires_grad()) return;

  if (root.precision() == Precision::f32) {
    root.node()->grad = std::vector<float>{1.0f};
  } else {
    root.node()->grad = std::vector<double>{1.0};
  }

  auto it = std::find_if(nodes.rbegin(), nodes.rend(),
                         [&](const auto& n) { return n.get() == root.node(); });
  if (it == nodes.rend()) {
    if (root.node()->inputs.empty()) return;  // root is a leaf
    throw StateError("backward root is not recorded on the tape");
  }
  for (; it != nodes.rend(); ++it) {
    detail::Node& n = **it;
    if (buffer_size(n.grad) == 0 || !n.backward) continue;
    n.backward(n);
  }
}

GradientMap backward(Tape& tape, const Tensor& root, ParameterSet& params) {
  for (auto& p : params.items()) clear_grad(*p.value.node());
  backward(tape, root);
  GradientMap grads;
  for (auto& p : params.items()) {
    Tensor g = p.value.detach();
    if (p.value.has_grad()) {
      g.node()->value = p.value.node()->grad;
    } else {
      std::visit([](auto& v) { std::fill(v.begin(), v.end(), 0); }, g.node()->value);
    }
    p.grad = g;
    grads.emplace(p.name, g);
  }
  return grads;
}

}  // namespace granp::ad
