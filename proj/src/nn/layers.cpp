#include "granp/layers.hpp"

#include <cmath>

namespace granp::nn {

using namespace granp::ad;

Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(std::move(shape), v);
}

// ---------------------------------------------------------------------------

Linear::Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
               std::mt19937_64& rng)
    : in_(in), out_(out) {
  weight_ = params.add(name + ".W", uniform_init({in, out}, in, rng));
  bias_ = params.add(name + ".b", uniform_init({out}, in, rng));
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw ShapeError("linear: expected [batch x " + std::to_string(in_) + "], got " +
                     shape_str(x.shape()));
  }
  return add(matmul(x, weight_), bias_);
}

// ---------------------------------------------------------------------------

MlpBlock::MlpBlock(ParameterSet& params, const std::string& name, std::vector<std::size_t> widths,
                   std::mt19937_64& rng)
    : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw ValueError("mlp: need at least two widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    layers_.emplace_back(params, name + ".layer" + std::to_string(i), widths_[i], widths_[i + 1],
                         rng);
  }
}

Tensor MlpBlock::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != widths_.front()) {
    throw ShapeError("mlp: expected [batch x " + std::to_string(widths_.front()) + "], got " +
                     shape_str(x.shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = relu(h);
  }
  return h;
}

// ---------------------------------------------------------------------------

LstmEncoder::LstmEncoder(ParameterSet& params, const std::string& name, std::size_t input_size,
                         std::size_t hidden_size, std::mt19937_64& rng)
    : input_(input_size), hidden_(hidden_size) {
  w_input_ = params.add(name + ".W_input", uniform_init({input_size, 4 * hidden_size}, input_size, rng));
  w_hidden_ =
      params.add(name + ".W_hidden", uniform_init({hidden_size, 4 * hidden_size}, hidden_size, rng));
  std::vector<double> b(4 * hidden_size, 0.0);
  for (std::size_t i = hidden_size; i < 2 * hidden_size; ++i) b[i] = 1.0;
  bias_ = params.add(name + ".b", Tensor::from_values({4 * hidden_size}, b));
}

Tensor LstmEncoder::encode(const Tensor& seq) const {
  if (seq.rank() != 3 || seq.dim(2) != input_) {
    throw ShapeError("lstm: expected [T x batch x " + std::to_string(input_) + "], got " +
                     (seq.defined() ? shape_str(seq.shape()) : std::string("undefined")));
  }
  const std::size_t steps = seq.dim(0);
  const std::size_t batch = seq.dim(1);
  const std::size_t H = hidden_;
  if (steps == 0) throw ValueError("lstm: empty sequence");

  // Input projections for all steps in one product.
  Tensor projected = add(matmul(reshape(seq, {steps * batch, input_}), w_input_), bias_);
  projected = reshape(projected, {steps, batch * 4 * H});

  Tensor h, c;
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor gates = reshape(slice(projected, 0, t, 1), {batch, 4 * H});
    if (t > 0) gates = add(gates, matmul(h, w_hidden_));
    Tensor i = sigmoid(slice(gates, 1, 0, H));
    Tensor f = sigmoid(slice(gates, 1, H, H));
    Tensor g = tanh(slice(gates, 1, 2 * H, H));
    Tensor o = sigmoid(slice(gates, 1, 3 * H, H));
    c = t > 0 ? add(mul(f, c), mul(i, g)) : mul(i, g);
    h = mul(o, tanh(c));
  }
  return h;
}

// ---------------------------------------------------------------------------

ConvMlpEncoder::ConvMlpEncoder(ParameterSet& params, const std::string& name,
                               std::size_t in_channels, std::size_t channels,
                               std::size_t kernel_size, std::size_t out_dim, std::mt19937_64& rng)
    : in_channels_(in_channels), kernel_(kernel_size) {
  if (kernel_size % 2 == 0) throw ValueError("conv-mlp: kernel size must be odd");
  std::size_t cin = in_channels;
  for (std::size_t s = 0; s < kConvStages; ++s) {
    const std::string stage = name + ".conv" + std::to_string(s);
    kernels_.push_back(
        params.add(stage + ".W", uniform_init({channels, cin, kernel_size}, cin * kernel_size, rng)));
    biases_.push_back(params.add(stage + ".b", uniform_init({channels, 1}, cin * kernel_size, rng)));
    cin = channels;
  }
  head_ = MlpBlock(params, name + ".fc", {channels, out_dim, out_dim, out_dim, out_dim}, rng);
}

Tensor ConvMlpEncoder::encode(const Tensor& seq) const {
  if (seq.rank() != 3 || seq.dim(1) != in_channels_) {
    throw ShapeError("conv-mlp: expected [batch x " + std::to_string(in_channels_) + " x T], got " +
                     shape_str(seq.shape()));
  }
  if (seq.dim(2) < kernel_) {
    throw ValueError("conv-mlp: sequence length " + std::to_string(seq.dim(2)) +
                     " shorter than kernel size " + std::to_string(kernel_));
  }
  Tensor h = seq;
  for (std::size_t s = 0; s < kernels_.size(); ++s) {
    h = relu(add(conv1d(h, kernels_[s]), biases_[s]));
  }
  return head_.forward(mean(h, 2));
}

// ---------------------------------------------------------------------------

Tensor adjacency_mask(const graph::AdjacencyMatrix& adjacency) {
  std::vector<double> m(adjacency.n * adjacency.n);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = adjacency.weights[i] > 0.0 ? 0.0 : kMaskedLogit;
  }
  return Tensor::from_values({adjacency.n, adjacency.n}, m);
}

GatLayer::GatLayer(ParameterSet& params, const std::string& name, std::size_t in_dim,
                   std::size_t out_dim, std::size_t heads, std::mt19937_64& rng, double slope)
    : in_(in_dim), out_(out_dim), slope_(slope) {
  if (heads == 0) throw ValueError("gat: need at least one head");
  for (std::size_t k = 0; k < heads; ++k) {
    const std::string head = name + ".head" + std::to_string(k);
    weights_.push_back(params.add(head + ".W", uniform_init({in_dim, out_dim}, in_dim, rng)));
    attention_.push_back(params.add(head + ".a", uniform_init({2 * out_dim, 1}, 2 * out_dim, rng)));
  }
}

GatLayer::Output GatLayer::forward(const Tensor& nodes,
                                   const graph::AdjacencyMatrix& adjacency) const {
  if (nodes.rank() != 2 || adjacency.n != nodes.dim(0) ||
      adjacency.weights.size() != adjacency.n * adjacency.n) {
    throw ShapeError("gat: adjacency " + std::to_string(adjacency.n) + "x" +
                     std::to_string(adjacency.n) + " does not match nodes " +
                     shape_str(nodes.shape()));
  }
  const std::size_t n = nodes.dim(0);
  Tensor mask = reshape(adjacency_mask(adjacency), {1, n, n});
  Output batched = forward_batched(reshape(nodes, {1, n, nodes.dim(1)}), mask);
  Output out;
  out.nodes = reshape(batched.nodes, {n, out_});
  for (const auto& a : batched.attention) out.attention.push_back(reshape(a, {n, n}));
  return out;
}

GatLayer::Output GatLayer::forward_batched(const Tensor& nodes, const Tensor& mask) const {
  if (nodes.rank() != 3 || nodes.dim(2) != in_) {
    throw ShapeError("gat: expected nodes [G x n x " + std::to_string(in_) + "], got " +
                     shape_str(nodes.shape()));
  }
  const std::size_t graphs = nodes.dim(0);
  const std::size_t n = nodes.dim(1);
  if (mask.shape() != Shape{graphs, n, n} && mask.shape() != Shape{1, n, n}) {
    throw ShapeError("gat: mask " + shape_str(mask.shape()) + " does not match nodes " +
                     shape_str(nodes.shape()));
  }
  Tensor flat = reshape(nodes, {graphs * n, in_});
  Output out;
  Tensor total;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    Tensor wh = matmul(flat, weights_[k]);  // [G*n, out]
    Tensor src = reshape(matmul(wh, slice(attention_[k], 0, 0, out_)), {graphs, n, 1});
    Tensor dst = reshape(matmul(wh, slice(attention_[k], 0, out_, out_)), {graphs, 1, n});
    Tensor logits = add(leaky_relu(add(src, dst), slope_), mask);
    Tensor alpha = softmax_rows(logits);  // [G, n, n]
    Tensor agg = matmul(alpha, reshape(wh, {graphs, n, out_}));
    total = k == 0 ? agg : add(total, agg);
    out.attention.push_back(alpha);
  }
  out.nodes = relu(scale(total, 1.0 / static_cast<double>(weights_.size())));
  return out;
}

// ---------------------------------------------------------------------------

CrossAttention::CrossAttention(ParameterSet& params, const std::string& name, std::size_t dim,
                               std::size_t heads, std::mt19937_64& rng)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ValueError("cross-attention: dimension " + std::to_string(dim) +
                     " not divisible by head count " + std::to_string(heads));
  }
  w_query_ = params.add(name + ".W_query", uniform_init({dim, dim}, dim, rng));
  w_key_ = params.add(name + ".W_key", uniform_init({dim, dim}, dim, rng));
  w_value_ = params.add(name + ".W_value", uniform_init({dim, dim}, dim, rng));
  w_out_ = params.add(name + ".W_out", uniform_init({dim, dim}, dim, rng));
}

CrossAttention::Output CrossAttention::attend(const Tensor& queries, const Tensor& keys,
                                              const Tensor& values) const {
  if (keys.rank() == 2 && keys.dim(0) == 0) throw ValueError("cross-attention: empty context");
  if (queries.rank() != 2 || keys.rank() != 2 || values.rank() != 2 || queries.dim(1) != dim_ ||
      keys.dim(1) != dim_ || values.dim(1) != dim_ || keys.dim(0) != values.dim(0)) {
    throw ShapeError("cross-attention: queries " + shape_str(queries.shape()) + ", keys " +
                     shape_str(keys.shape()) + ", values " + shape_str(values.shape()) +
                     " incompatible with dimension " + std::to_string(dim_));
  }
  const std::size_t dh = dim_ / heads_;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = matmul(queries, w_query_);
  Tensor kk = matmul(keys, w_key_);
  Tensor v = matmul(values, w_value_);
  Output out;
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < heads_; ++h) {
    Tensor qh = slice(q, 1, h * dh, dh);
    Tensor kh = slice(kk, 1, h * dh, dh);
    Tensor vh = slice(v, 1, h * dh, dh);
    Tensor w = softmax_rows(scale(matmul(qh, transpose(kh, {1, 0})), scale_factor));
    heads.push_back(matmul(w, vh));
    out.weights.push_back(w);
  }
  out.values = matmul(heads_ == 1 ? heads.front() : concat(heads, 1), w_out_);
  return out;
}

}  // namespace granp::nn
