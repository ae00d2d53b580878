#pragma once

// Differentiable primitives. Every trainable computation in the project is
// built from this set.
//
// Shape rules:
//   add/sub/mul/div  numpy-style broadcasting (right-aligned, extents equal or 1)
//   matmul           [a,b]x[b,c] -> [a,c];  [n,a,b]x[n,b,c] -> [n,a,c]
//   conv1d           x[n,cin,t] * w[cout,cin,k] -> [n,cout,t]; stride 1, zero
//                    "same" padding, k odd
//   concat           extents agree except along `axis`
//   slice            [start, start+length) along `axis`
//   reshape          equal element count
//   transpose        any permutation of the axes
//   sum/mean         over one axis (axis removed; rank-1 input gives [1]) or
//                    over everything ([1])
//   softmax_rows     over the last axis, shape preserved

#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "granp/tensor.hpp"

namespace granp::ad {

inline constexpr double kLeakyReluSlope = 0.2;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv1d(const Tensor& x, const Tensor& kernel);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::vector<std::size_t> perm);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = kLeakyReluSlope);
Tensor softplus(const Tensor& x);
Tensor softmax_rows(const Tensor& x);

// Generic entry point keyed by primitive name. Attributes:
//   conv1d: none;  concat: axis;  slice: axis, start, length;
//   reshape: shape;  transpose: perm;  sum/mean: axis (optional);
//   leaky_relu: slope (optional).
using AttrValue = std::variant<std::int64_t, double, std::vector<std::int64_t>>;
using Attrs = std::map<std::string, AttrValue>;

Tensor forward_op(std::string_view kind, std::span<const Tensor> inputs, const Attrs& attrs = {});
const std::vector<std::string>& primitive_kinds();

// Composites of the primitives above.
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);

}  // namespace granp::ad
