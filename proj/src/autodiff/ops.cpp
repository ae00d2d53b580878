#include "granp/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace granp::ad {

namespace {

using detail::Node;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

template <typename T>
const std::vector<T>& vals(const Node& n) {
  return std::get<std::vector<T>>(n.value);
}
template <typename T>
const std::vector<T>& vals(const Tensor& t) {
  return vals<T>(*t.node());
}
template <typename T>
const std::vector<T>& grad_of(const Node& n) {
  return std::get<std::vector<T>>(n.grad);
}

// Gradient accumulator for an input node, allocated to zeros on first use.
template <typename T>
std::vector<T>* grad_acc(Node& n) {
  if (!n.requires_grad) return nullptr;
  const std::size_t count = shape_numel(n.shape);
  auto* g = std::get_if<std::vector<T>>(&n.grad);
  if (g == nullptr || g->size() != count) {
    n.grad = std::vector<T>(count, T(0));
    g = std::get_if<std::vector<T>>(&n.grad);
  }
  return g;
}

template <typename F>
decltype(auto) dispatch(Precision p, F&& f) {
  if (p == Precision::f32) return f(float{});
  return f(double{});
}

template <typename F>
decltype(auto) dispatch(const Node& n, F&& f) {
  if (std::holds_alternative<std::vector<float>>(n.value)) return f(float{});
  return f(double{});
}

Precision common_precision(const char* kind, std::span<const Tensor> inputs) {
  if (inputs.empty()) throw ValueError(std::string(kind) + ": no inputs");
  Precision p = inputs[0].precision();
  for (const auto& t : inputs) {
    if (t.precision() != p) {
      throw ValueError(std::string(kind) + ": mixed tensor precisions");
    }
  }
  return p;
}

Precision common_precision(const char* kind, std::initializer_list<Tensor> inputs) {
  return common_precision(kind, std::span<const Tensor>(inputs.begin(), inputs.size()));
}

void require_defined(const char* kind, const Tensor& t) {
  if (!t.defined()) throw ValueError(std::string(kind) + ": undefined input tensor");
}

Tensor finish(const char* kind, Shape shape, Buffer value, std::span<const Tensor> inputs,
              std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->kind = kind;
  node->shape = std::move(shape);
  node->value = std::move(value);
  Tape* tape = Tape::active();
  const bool track = tape != nullptr &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(bw);
    tape->record(node);
  }
  return Tensor::from_node(std::move(node));
}

Tensor finish(const char* kind, Shape shape, Buffer value, std::initializer_list<Tensor> inputs,
              std::function<void(Node&)> bw) {
  return finish(kind, std::move(shape), std::move(value),
                std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(bw));
}

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  Shape out;
  std::vector<std::size_t> sa, sb;  // strides in operand storage, per output axis
};

Broadcast plan_broadcast(const char* kind, const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = {shape_numel(a)};
    p.sa = {1};
    p.sb = {1};
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  const auto st_a = contiguous_strides(a);
  const auto st_b = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::ptrdiff_t ai = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - a.size());
    const std::ptrdiff_t bi = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - b.size());
    const std::size_t da = ai >= 0 ? a[ai] : 1;
    const std::size_t db = bi >= 0 ? b[bi] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(kind) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    p.out[i] = std::max(da, db);
    p.sa[i] = (ai >= 0 && da != 1) ? st_a[ai] : 0;
    p.sb[i] = (bi >= 0 && db != 1) ? st_b[bi] : 0;
  }
  return p;
}

template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t r = p.out.size();
  const std::size_t inner = p.out[r - 1];
  const std::size_t sa_in = p.sa[r - 1];
  const std::size_t sb_in = p.sb[r - 1];
  const std::size_t outer = shape_numel(p.out) / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0, io = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) f(io + j, oa + j * sa_in, ob + j * sb_in);
    io += inner;
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      oa += p.sa[ax];
      ob += p.sb[ax];
      if (idx[ax] < p.out[ax]) break;
      oa -= p.sa[ax] * p.out[ax];
      ob -= p.sb[ax] * p.out[ax];
      idx[ax] = 0;
    }
  }
}

Shape broadcast_result_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::ptrdiff_t ai = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - a.size());
    const std::ptrdiff_t bi = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - b.size());
    out[i] = std::max<std::size_t>(ai >= 0 ? a[ai] : 1, bi >= 0 ? b[bi] : 1);
  }
  return out;
}

// fwd(a, b) -> y;  bwd(a, b, g) -> pair(da, db)
template <typename Fwd, typename Bwd>
Tensor binary(const char* kind, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  require_defined(kind, a);
  require_defined(kind, b);
  const Precision prec = common_precision(kind, {a, b});
  Broadcast plan = plan_broadcast(kind, a.shape(), b.shape());
  Shape out_shape = broadcast_result_shape(a.shape(), b.shape());
  Buffer out = dispatch(prec, [&](auto tag) -> Buffer {
    using T = decltype(tag);
    const auto& av = vals<T>(a);
    const auto& bv = vals<T>(b);
    std::vector<T> y(shape_numel(out_shape));
    for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
      y[io] = fwd(av[ia], bv[ib]);
    });
    return y;
  });
  return finish(kind, out_shape, std::move(out), {a, b}, [plan, bwd](Node& self) {
    dispatch(self, [&](auto tag) {
      using T = decltype(tag);
      const auto& g = grad_of<T>(self);
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      const auto& av = vals<T>(na);
      const auto& bv = vals<T>(nb);
      auto* ga = grad_acc<T>(na);
      auto* gb = grad_acc<T>(nb);
      for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
        const auto [da, db] = bwd(av[ia], bv[ib], g[io]);
        if (ga) (*ga)[ia] += da;
        if (gb) (*gb)[ib] += db;
      });
    });
  });
}

// fwd(x) -> y;  bwd(x, y, g) -> dx
template <typename Fwd, typename Bwd>
Tensor unary(const char* kind, const Tensor& x, Fwd fwd, Bwd bwd) {
  require_defined(kind, x);
  Buffer out = dispatch(x.precision(), [&](auto tag) -> Buffer {
    using T = decltype(tag);
    const auto& xv = vals<T>(x);
    std::vector<T> y(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = fwd(xv[i]);
    return y;
  });
  return finish(kind, x.shape(), std::move(out), {x}, [bwd](Node& self) {
    dispatch(self, [&](auto tag) {
      using T = decltype(tag);
      const auto& g = grad_of<T>(self);
      const auto& y = vals<T>(self);
      Node& nx = *self.inputs[0];
      const auto& xv = vals<T>(nx);
      auto* gx = grad_acc<T>(nx);
      if (!gx) return;
      for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += bwd(xv[i], y[i], g[i]);
    });
  });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

struct Blocks {
  std::size_t outer = 1, extent = 1, inner = 1;
};

Blocks blocks_around(const Shape& s, std::size_t axis) {
  Blocks b;
  for (std::size_t i = 0; i < axis; ++i) b.outer *= s[i];
  b.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) b.inner *= s[i];
  return b;
}

std::string shapes_str(std::span<const Tensor> ts) {
  std::string s;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (i) s += ", ";
    s += shape_str(ts[i].shape());
  }
  return s;
}

Tensor reduce_axis(const char* kind, const Tensor& x, std::size_t axis, bool average) {
  require_defined(kind, x);
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw ShapeError(std::string(kind) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  Blocks bl = blocks_around(s, axis);
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape = {1};
  const double factor = average ? 1.0 / static_cast<double>(bl.extent) : 1.0;
  Buffer out = dispatch(x.precision(), [&](auto tag) -> Buffer {
    using T = decltype(tag);
    const auto& xv = vals<T>(x);
    std::vector<T> y(bl.outer * bl.inner, T(0));
    for (std::size_t o = 0; o < bl.outer; ++o) {
      for (std::size_t e = 0; e < bl.extent; ++e) {
        const T* src = xv.data() + (o * bl.extent + e) * bl.inner;
        T* dst = y.data() + o * bl.inner;
        for (std::size_t i = 0; i < bl.inner; ++i) dst[i] += src[i];
      }
    }
    if (average) {
      for (auto& v : y) v *= static_cast<T>(factor);
    }
    return y;
  });
  return finish(kind, out_shape, std::move(out), {x}, [bl, factor](Node& self) {
    dispatch(self, [&](auto tag) {
      using T = decltype(tag);
      const auto& g = grad_of<T>(self);
      auto* gx = grad_acc<T>(*self.inputs[0]);
      if (!gx) return;
      const T f = static_cast<T>(factor);
      for (std::size_t o = 0; o < bl.outer; ++o) {
        for (std::size_t e = 0; e < bl.extent; ++e) {
          T* dst = gx->data() + (o * bl.extent + e) * bl.inner;
          const T* src = g.data() + o * bl.inner;
          for (std::size_t i = 0; i < bl.inner; ++i) dst[i] += f * src[i];
        }
      }
    });
  });
}

Tensor reduce_all(const char* kind, const Tensor& x, bool average) {
  require_defined(kind, x);
  const double factor = average ? 1.0 / static_cast<double>(x.numel()) : 1.0;
  Buffer out = dispatch(x.precision(), [&](auto tag) -> Buffer {
    using T = decltype(tag);
    const auto& xv = vals<T>(x);
    T acc = std::accumulate(xv.begin(), xv.end(), T(0));
    return std::vector<T>{static_cast<T>(acc * static_cast<T>(factor))};
  });
  return finish(kind, {1}, std::move(out), {x}, [factor](Node& self) {
    dispatch(self, [&](auto tag) {
      using T = decltype(tag);
      const T g = grad_of<T>(self)[0] * static_cast<T>(factor);
      auto* gx = grad_acc<T>(*self.inputs[0]);
      if (!gx) return;
      for (auto& v : *gx) v += g;
    });
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise binary

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](auto x, auto y) { return x + y; },
      [](auto, auto, auto g) { return std::pair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](auto x, auto y) { return x - y; },
      [](auto, auto, auto g) { return std::pair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](auto x, auto y) { return x * y; },
      [](auto x, auto y, auto g) { return std::pair{g * y, g * x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_defined("div", b);
  for (double v : b.to_vector()) {
    if (v == 0.0) throw ValueError("div: zero in denominator " + shape_str(b.shape()));
  }
  return binary(
      "div", a, b, [](auto x, auto y) { return x / y; },
      [](auto x, auto y, auto g) { return std::pair{g / y, -g * x / (y * y)}; });
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  const Precision prec = common_precision("matmul", {a, b});
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool ok = false;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0];
    k = sa[1];
    n = sb[1];
    ok = sb[0] == k;
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = sa[0];
    m = sa[1];
    k = sa[2];
    n = sb[2];
    ok = sb[0] == batch && sb[1] == k;
  }
  if (!ok) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  }
  Shape out_shape = sa.size() == 2 ? Shape{m, n} : Shape{batch, m, n};
  Buffer out = dispatch(prec, [&](auto tag) -> Buffer {
    using T = decltype(tag);
    const auto& av = vals<T>(a);
    const auto& bv = vals<T>(b);
    std::vector<T> y(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i) {
      MapM<T>(y.data() + i * m * n, m, n).noalias() =
          MapC<T>(av.data() + i * m * k, m, k) * MapC<T>(bv.data() + i * k * n, k, n);
    }
    return y;
  });
  return finish("matmul", out_shape, std::move(out), {a, b}, [batch, m, k, n](Node& self) {
    dispatch(self, [&](auto tag) {
      using T = decltype(tag);
      const auto& g = grad_of<T>(self);
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      const auto& av = vals<T>(na);
      const auto& bv = vals<T>(nb);
      auto* ga = grad_acc<T>(na);
      auto* gb = grad_acc<T>(nb);
      for (std::size_t i = 0; i < batch; ++i) {
        MapC<T> G(g.data() + i * m * n, m, n);
        if (ga) {
          MapM<T>(ga->data() + i * m * k, m, k).noalias() +=
              G * MapC<T>(bv.data() + i * k * n, k, n).transpose();
        }
        if (gb) {
          MapM<T>(gb->data() + i * k * n, k, n).noalias() +=
              MapC<T>(av.data() + i * m * k, m, k).transpose() * G;
        }
      }
    });
  });
}

// ---------------------------------------------------------------------------
// conv1d (stride 1, zero same-padding)

namespace {

template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t len, std::size_t ksize, RowMat<T>& cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ksize / 2);
  cols.setZero(cin * ksize, len);
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t kk = 0; kk < ksize; ++kk) {
      for (std::size_t t = 0; t < len; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + kk) - pad;
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) {
          cols(c * ksize + kk, t) = x[c * len + src];
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const RowMat<T>& cols, std::size_t cin, std::size_t len, std::size_t ksize, T* gx) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ksize / 2);
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t kk = 0; kk < ksize; ++kk) {
      for (std::size_t t = 0; t < len; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + kk) - pad;
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) {
          gx[c * len + src] += cols(c * ksize + kk, t);
        }
      }
    }
  }
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& kernel) {
  require_defined("conv1d", x);
  require_defined("conv1d", kernel);
  const Precision prec = common_precision("conv1d", {x, kernel});
  const Shape& sx = x.shape();
  const Shape& sw = kernel.shape();
  if (sx.size() != 3 || sw.size() != 3 || sw[1] != sx[1] || sw[2] % 2 == 0) {
    throw ShapeError("conv1d: expected x[n,cin,t] and odd kernel w[cout,cin,k], got " +
                     shape_str(sx) + " and " + shape_str(sw));
  }
  const std::size_t batch = sx[0], cin = sx[1], len = sx[2], cout = sw[0], ksize = sw[2];
  Shape out_shape{batch, cout, len};
  Buffer out = dispatch(prec, [&](auto tag) -> Buffer {
    using T = decltype(tag);
    const auto& xv = vals<T>(x);
    const auto& wv = vals<T>(kernel);
    MapC<T> W(wv.data(), cout, cin * ksize);
    std::vector<T> y(batch * cout * len);
    RowMat<T> cols;
    for (std::size_t i = 0; i < batch; ++i) {
      im2col(xv.data() + i * cin * len, cin, len, ksize, cols);
      MapM<T>(y.data() + i * cout * len, cout, len).noalias() = W * cols;
    }
    return y;
  });
  return finish("conv1d", out_shape, std::move(out), {x, kernel},
                [batch, cin, len, cout, ksize](Node& self) {
                  dispatch(self, [&](auto tag) {
                    using T = decltype(tag);
                    const auto& g = grad_of<T>(self);
                    Node& nx = *self.inputs[0];
                    Node& nw = *self.inputs[1];
                    const auto& xv = vals<T>(nx);
                    const auto& wv = vals<T>(nw);
                    auto* gx = grad_acc<T>(nx);
                    auto* gw = grad_acc<T>(nw);
                    MapC<T> W(wv.data(), cout, cin * ksize);
                    RowMat<T> cols;
                    RowMat<T> gcols;
                    for (std::size_t i = 0; i < batch; ++i) {
                      MapC<T> G(g.data() + i * cout * len, cout, len);
                      if (gw) {
                        im2col(xv.data() + i * cin * len, cin, len, ksize, cols);
                        MapM<T>(gw->data(), cout, cin * ksize).noalias() += G * cols.transpose();
                      }
                      if (gx) {
                        gcols.noalias() = W.transpose() * G;
                        col2im_add(gcols, cin, len, ksize, gx->data() + i * cin * len);
                      }
                    }
                  });
                });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) require_defined("concat", p);
  const Precision prec = common_precision("concat", parts);
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     shapes_str(parts));
  }
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) ok = false;
    }
    if (!ok) throw ShapeError("concat: mismatched shapes " + shapes_str(parts));
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  Blocks bl = blocks_around(out_shape, axis);
  Buffer out = dispatch(prec, [&](auto tag) -> Buffer {
    using T = decltype(tag);
    std::vector<T> y(shape_numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto& v = vals<T>(parts[p]);
      const std::size_t run = extents[p] * bl.inner;
      for (std::size_t o = 0; o < bl.outer; ++o) {
        std::copy_n(v.data() + o * run, run, y.data() + o * bl.extent * bl.inner + offset);
      }
      offset += run;
    }
    return y;
  });
  return finish("concat", out_shape, std::move(out), parts, [bl, extents](Node& self) {
    dispatch(self, [&](auto tag) {
      using T = decltype(tag);
      const auto& g = grad_of<T>(self);
      std::size_t offset = 0;
      for (std::size_t p = 0; p < self.inputs.size(); ++p) {
        const std::size_t run = extents[p] * bl.inner;
        if (auto* gp = grad_acc<T>(*self.inputs[p])) {
          for (std::size_t o = 0; o < bl.outer; ++o) {
            const T* src = g.data() + o * bl.extent * bl.inner + offset;
            T* dst = gp->data() + o * run;
            for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
          }
        }
        offset += run;
      }
    });
  });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined("slice", x);
  const Shape& s = x.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                     " invalid for " + shape_str(s));
  }
  Blocks bl = blocks_around(s, axis);
  Shape out_shape = s;
  out_shape[axis] = length;
  Buffer out = dispatch(x.precision(), [&](auto tag) -> Buffer {
    using T = decltype(tag);
    const auto& xv = vals<T>(x);
    std::vector<T> y(shape_numel(out_shape));
    const std::size_t run = length * bl.inner;
    for (std::size_t o = 0; o < bl.outer; ++o) {
      std::copy_n(xv.data() + (o * bl.extent + start) * bl.inner, run, y.data() + o * run);
    }
    return y;
  });
  return finish("slice", out_shape, std::move(out), {x}, [bl, start, length](Node& self) {
    dispatch(self, [&](auto tag) {
      using T = decltype(tag);
      const auto& g = grad_of<T>(self);
      auto* gx = grad_acc<T>(*self.inputs[0]);
      if (!gx) return;
      const std::size_t run = length * bl.inner;
      for (std::size_t o = 0; o < bl.outer; ++o) {
        T* dst = gx->data() + (o * bl.extent + start) * bl.inner;
        const T* src = g.data() + o * run;
        for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
      }
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  if (shape_numel(shape) != x.numel() || std::find(shape.begin(), shape.end(), 0) != shape.end()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Buffer out = x.node()->value;
  return finish("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    dispatch(self, [&](auto tag) {
      using T = decltype(tag);
      const auto& g = grad_of<T>(self);
      auto* gx = grad_acc<T>(*self.inputs[0]);
      if (!gx) return;
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    });
  });
}

namespace {

// Calls f(out_flat, in_flat) for every element of the permuted view.
template <typename F>
void for_each_permuted(const Shape& out_shape, const std::vector<std::size_t>& in_strides_perm,
                       F&& f) {
  const std::size_t r = out_shape.size();
  const std::size_t inner = out_shape[r - 1];
  const std::size_t s_in = in_strides_perm[r - 1];
  const std::size_t outer = shape_numel(out_shape) / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0, io = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) f(io + j, off + j * s_in);
    io += inner;
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      off += in_strides_perm[ax];
      if (idx[ax] < out_shape[ax]) break;
      off -= in_strides_perm[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

Tensor transpose(const Tensor& x, std::vector<std::size_t> perm) {
  require_defined("transpose", x);
  const Shape& s = x.shape();
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  bool ok = perm.size() == s.size();
  for (std::size_t i = 0; ok && i < sorted.size(); ++i) ok = sorted[i] == i;
  if (!ok) throw ShapeError("transpose: invalid permutation for " + shape_str(s));
  const auto st = contiguous_strides(s);
  Shape out_shape(s.size());
  std::vector<std::size_t> strides_perm(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    out_shape[i] = s[perm[i]];
    strides_perm[i] = st[perm[i]];
  }
  Buffer out = dispatch(x.precision(), [&](auto tag) -> Buffer {
    using T = decltype(tag);
    const auto& xv = vals<T>(x);
    std::vector<T> y(xv.size());
    for_each_permuted(out_shape, strides_perm, [&](std::size_t io, std::size_t ii) { y[io] = xv[ii]; });
    return y;
  });
  return finish("transpose", out_shape, std::move(out), {x}, [out_shape, strides_perm](Node& self) {
    dispatch(self, [&](auto tag) {
      using T = decltype(tag);
      const auto& g = grad_of<T>(self);
      auto* gx = grad_acc<T>(*self.inputs[0]);
      if (!gx) return;
      for_each_permuted(out_shape, strides_perm,
                        [&](std::size_t io, std::size_t ii) { (*gx)[ii] += g[io]; });
    });
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x, std::size_t axis) { return reduce_axis("sum", x, axis, false); }
Tensor sum(const Tensor& x) { return reduce_all("sum", x, false); }
Tensor mean(const Tensor& x, std::size_t axis) { return reduce_axis("mean", x, axis, true); }
Tensor mean(const Tensor& x) { return reduce_all("mean", x, true); }

// ---------------------------------------------------------------------------
// Elementwise unary

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](auto v) { return std::exp(v); }, [](auto, auto y, auto g) { return g * y; });
}

Tensor log(const Tensor& x) {
  require_defined("log", x);
  for (double v : x.to_vector()) {
    if (!(v > 0.0)) throw ValueError("log: non-positive input in " + shape_str(x.shape()));
  }
  return unary(
      "log", x, [](auto v) { return std::log(v); }, [](auto xv, auto, auto g) { return g / xv; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](auto v) { return stable_sigmoid(v); },
      [](auto, auto y, auto g) { return g * y * (decltype(y)(1) - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](auto v) { return std::tanh(v); },
      [](auto, auto y, auto g) { return g * (decltype(y)(1) - y * y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](auto v) { return v > decltype(v)(0) ? v : decltype(v)(0); },
      [](auto xv, auto, auto g) { return xv > decltype(xv)(0) ? g : decltype(g)(0); });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      "leaky_relu", x,
      [slope](auto v) {
        using T = decltype(v);
        return v > T(0) ? v : static_cast<T>(slope) * v;
      },
      [slope](auto xv, auto, auto g) {
        using T = decltype(xv);
        return xv > T(0) ? g : static_cast<T>(slope) * g;
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      [](auto v) {
        using T = decltype(v);
        return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
      },
      [](auto xv, auto, auto g) { return g * stable_sigmoid(xv); });
}

Tensor softmax_rows(const Tensor& x) {
  require_defined("softmax_rows", x);
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  Buffer out = dispatch(x.precision(), [&](auto tag) -> Buffer {
    using T = decltype(tag);
    const auto& xv = vals<T>(x);
    std::vector<T> y(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* src = xv.data() + r * cols;
      T* dst = y.data() + r * cols;
      const T mx = *std::max_element(src, src + cols);
      T total = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        dst[c] = std::exp(src[c] - mx);
        total += dst[c];
      }
      for (std::size_t c = 0; c < cols; ++c) dst[c] /= total;
    }
    return y;
  });
  return finish("softmax_rows", x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    dispatch(self, [&](auto tag) {
      using T = decltype(tag);
      const auto& g = grad_of<T>(self);
      const auto& y = vals<T>(self);
      auto* gx = grad_acc<T>(*self.inputs[0]);
      if (!gx) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* yr = y.data() + r * cols;
        const T* gr = g.data() + r * cols;
        T dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
        T* dst = gx->data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += yr[c] * (gr[c] - dot);
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Composites

Tensor scale(const Tensor& x, double factor) {
  PrecisionGuard guard(x.precision());
  return mul(x, Tensor::scalar(factor));
}

Tensor add_scalar(const Tensor& x, double value) {
  PrecisionGuard guard(x.precision());
  return add(x, Tensor::scalar(value));
}

Tensor square(const Tensor& x) { return mul(x, x); }

// ---------------------------------------------------------------------------
// Generic dispatch

const std::vector<std::string>& primitive_kinds() {
  static const std::vector<std::string> kinds = {
      "add",       "sub",     "mul",  "div",  "matmul",  "conv1d",     "concat",
      "slice",     "reshape", "transpose", "sum", "mean", "exp",       "log",
      "sigmoid",   "tanh",    "relu", "leaky_relu", "softplus", "softmax_rows"};
  return kinds;
}

namespace {

std::int64_t attr_int(std::string_view kind, const Attrs& attrs, const std::string& key) {
  auto it = attrs.find(key);
  if (it == attrs.end()) {
    throw ValueError(std::string(kind) + ": missing attribute '" + key + "'");
  }
  if (const auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
  throw ValueError(std::string(kind) + ": attribute '" + key + "' must be an integer");
}

std::vector<std::size_t> attr_list(std::string_view kind, const Attrs& attrs,
                                   const std::string& key) {
  auto it = attrs.find(key);
  if (it == attrs.end()) {
    throw ValueError(std::string(kind) + ": missing attribute '" + key + "'");
  }
  const auto* v = std::get_if<std::vector<std::int64_t>>(&it->second);
  if (v == nullptr) {
    throw ValueError(std::string(kind) + ": attribute '" + key + "' must be an integer list");
  }
  std::vector<std::size_t> out;
  for (auto e : *v) {
    if (e < 0) throw ValueError(std::string(kind) + ": negative entry in '" + key + "'");
    out.push_back(static_cast<std::size_t>(e));
  }
  return out;
}

void expect_arity(std::string_view kind, std::span<const Tensor> inputs, std::size_t n) {
  if (inputs.size() != n) {
    throw ValueError(std::string(kind) + ": expected " + std::to_string(n) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
}

}  // namespace

Tensor forward_op(std::string_view kind, std::span<const Tensor> in, const Attrs& attrs) {
  auto unary_kind = [&](auto fn) {
    expect_arity(kind, in, 1);
    return fn(in[0]);
  };
  auto binary_kind = [&](auto fn) {
    expect_arity(kind, in, 2);
    return fn(in[0], in[1]);
  };
  if (kind == "add") return binary_kind(add);
  if (kind == "sub") return binary_kind(sub);
  if (kind == "mul") return binary_kind(mul);
  if (kind == "div") return binary_kind(div);
  if (kind == "matmul") return binary_kind(matmul);
  if (kind == "conv1d") return binary_kind(conv1d);
  if (kind == "concat") return concat(in, static_cast<std::size_t>(attr_int(kind, attrs, "axis")));
  if (kind == "slice") {
    expect_arity(kind, in, 1);
    const auto axis = attr_int(kind, attrs, "axis");
    const auto start = attr_int(kind, attrs, "start");
    const auto length = attr_int(kind, attrs, "length");
    if (axis < 0 || start < 0 || length < 0) throw ValueError("slice: negative attribute");
    return slice(in[0], axis, start, length);
  }
  if (kind == "reshape") {
    expect_arity(kind, in, 1);
    return reshape(in[0], attr_list(kind, attrs, "shape"));
  }
  if (kind == "transpose") {
    expect_arity(kind, in, 1);
    return transpose(in[0], attr_list(kind, attrs, "perm"));
  }
  if (kind == "sum" || kind == "mean") {
    expect_arity(kind, in, 1);
    const bool avg = kind == "mean";
    if (attrs.count("axis")) {
      const auto axis = attr_int(kind, attrs, "axis");
      if (axis < 0) throw ValueError(std::string(kind) + ": negative axis");
      return avg ? mean(in[0], axis) : sum(in[0], axis);
    }
    return avg ? mean(in[0]) : sum(in[0]);
  }
  if (kind == "exp") return unary_kind([](const Tensor& x) { return exp(x); });
  if (kind == "log") return unary_kind([](const Tensor& x) { return log(x); });
  if (kind == "sigmoid") return unary_kind(sigmoid);
  if (kind == "tanh") return unary_kind([](const Tensor& x) { return tanh(x); });
  if (kind == "relu") return unary_kind(relu);
  if (kind == "leaky_relu") {
    expect_arity(kind, in, 1);
    double slope = kLeakyReluSlope;
    if (auto it = attrs.find("slope"); it != attrs.end()) {
      if (const auto* d = std::get_if<double>(&it->second)) {
        slope = *d;
      } else {
        throw ValueError("leaky_relu: attribute 'slope' must be real");
      }
    }
    return leaky_relu(in[0], slope);
  }
  if (kind == "softplus") return unary_kind(softplus);
  if (kind == "softmax_rows") return unary_kind(softmax_rows);
  throw ValueError("unknown primitive kind '" + std::string(kind) + "'");
}

}  // namespace granp::ad
