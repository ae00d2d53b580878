#pragma once

// Differentiable building blocks. Every layer registers its parameters in a
// caller-owned ParameterSet under a dotted name prefix ("gat.layer0.head1.W")
// and holds handles to them, so optimizer updates are seen immediately.
//
// Initialization: weights and biases ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
// LSTM biases are the exception: forget gate 1, the other gates 0.

#include <random>
#include <string>
#include <vector>

#include "granp/ops.hpp"
#include "granp/scene_graph.hpp"

namespace granp::nn {

using ad::ParameterSet;
using ad::Shape;
using ad::Tensor;

Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

// y = x W + b with W [in, out], b [out].
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
         std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor weight_, bias_;
};

// Affine stages with ReLU between them and identity after the last.
class MlpBlock {
 public:
  MlpBlock() = default;
  MlpBlock(ParameterSet& params, const std::string& name, std::vector<std::size_t> widths,
           std::mt19937_64& rng);

  // x [batch, widths.front()] -> [batch, widths.back()]
  Tensor forward(const Tensor& x) const;
  const std::vector<std::size_t>& widths() const { return widths_; }
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<std::size_t> widths_;
  std::vector<Linear> layers_;
};

// Single-layer LSTM; gate blocks are ordered input, forget, cell, output.
class LstmEncoder {
 public:
  LstmEncoder() = default;
  LstmEncoder(ParameterSet& params, const std::string& name, std::size_t input_size,
              std::size_t hidden_size, std::mt19937_64& rng);

  // seq [T, batch, input] -> final hidden state [batch, hidden]
  Tensor encode(const Tensor& seq) const;
  std::size_t hidden_size() const { return hidden_; }

 private:
  std::size_t input_ = 0, hidden_ = 0;
  Tensor w_input_;   // [input, 4H]
  Tensor w_hidden_;  // [H, 4H]
  Tensor bias_;      // [4H]
};

// Three conv1d+ReLU stages (same padding), temporal mean-pool, then four
// fully connected layers.
class ConvMlpEncoder {
 public:
  static constexpr std::size_t kConvStages = 3;
  static constexpr std::size_t kLinearStages = 4;

  ConvMlpEncoder() = default;
  ConvMlpEncoder(ParameterSet& params, const std::string& name, std::size_t in_channels,
                 std::size_t channels, std::size_t kernel_size, std::size_t out_dim,
                 std::mt19937_64& rng);

  // seq [batch, in_channels, T] -> [batch, out_dim]; requires T >= kernel size.
  Tensor encode(const Tensor& seq) const;
  std::size_t kernel_size() const { return kernel_; }
  std::size_t conv_stage_count() const { return kernels_.size(); }
  std::size_t linear_stage_count() const { return head_.layers().size(); }

 private:
  std::size_t in_channels_ = 0, kernel_ = 0;
  std::vector<Tensor> kernels_;  // [cout, cin, k]
  std::vector<Tensor> biases_;   // [cout, 1]
  MlpBlock head_;
};

// Additive attention mask for a graph: 0 where adjacency > 0, a large
// negative value elsewhere, so masked pairs get exactly zero weight.
inline constexpr double kMaskedLogit = -1e30;
Tensor adjacency_mask(const graph::AdjacencyMatrix& adjacency);

// Multi-head graph attention. Head k scores neighbor j of node i with
// LeakyReLU(a_k . [W_k s_i || W_k s_j]), normalizes over the neighborhood with
// a softmax, aggregates W_k s_j, averages the heads and applies ReLU.
class GatLayer {
 public:
  struct Output {
    Tensor nodes;                    // [n, out] or [G, n, out]
    std::vector<Tensor> attention;   // per head, [n, n] or [G, n, n]
  };

  GatLayer() = default;
  GatLayer(ParameterSet& params, const std::string& name, std::size_t in_dim, std::size_t out_dim,
           std::size_t heads, std::mt19937_64& rng, double slope = ad::kLeakyReluSlope);

  Output forward(const Tensor& nodes, const graph::AdjacencyMatrix& adjacency) const;
  // Many graphs at once: nodes [G, n, in], mask [G, n, n] (see adjacency_mask).
  Output forward_batched(const Tensor& nodes, const Tensor& mask) const;

  std::size_t heads() const { return weights_.size(); }

 private:
  std::size_t in_ = 0, out_ = 0;
  double slope_ = ad::kLeakyReluSlope;
  std::vector<Tensor> weights_;    // W_k [in, out]
  std::vector<Tensor> attention_;  // a_k [2*out, 1]
};

// Multi-head scaled dot-product attention from queries over a context set,
// with learned query/key/value projections and an output projection.
class CrossAttention {
 public:
  struct Output {
    Tensor values;                 // [k, d]
    std::vector<Tensor> weights;   // per head, [k, m]
  };

  CrossAttention() = default;
  CrossAttention(ParameterSet& params, const std::string& name, std::size_t dim, std::size_t heads,
                 std::mt19937_64& rng);

  // queries [k, d], keys [m, d], values [m, d]
  Output attend(const Tensor& queries, const Tensor& keys, const Tensor& values) const;
  std::size_t heads() const { return heads_; }

 private:
  std::size_t dim_ = 0, heads_ = 0;
  Tensor w_query_, w_key_, w_value_, w_out_;  // each [d, d]
};

}  // namespace granp::nn
