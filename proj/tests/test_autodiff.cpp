#include <cmath>
#include <random>

#include "doctest.h"
#include "granp/grad_check.hpp"
#include "granp/ops.hpp"

using namespace granp;
using namespace granp::ad;

namespace {

std::vector<double> uniform_values(std::size_t n, std::mt19937_64& rng, double lo, double hi,
                                   double keep_away_from_zero = 0.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) {
    do {
      x = dist(rng);
    } while (std::abs(x) < keep_away_from_zero);
  }
  return v;
}

struct PrimitiveCase {
  std::string kind;
  std::vector<Shape> shapes;
  Attrs attrs;
  double lo = -1.0, hi = 1.0, away = 0.0;
};

std::vector<PrimitiveCase> primitive_cases() {
  using V = std::vector<std::int64_t>;
  return {
      {"add", {{3, 4}, {4}}, {}},
      {"sub", {{2, 1, 3}, {4, 1}}, {}},
      {"mul", {{3, 4}, {3, 4}}, {}},
      {"div", {{3, 4}, {3, 1}}, {}, 0.5, 2.0},
      {"matmul", {{2, 3, 4}, {2, 4, 2}}, {}},
      {"conv1d", {{2, 3, 6}, {4, 3, 3}}, {}},
      {"concat", {{2, 3}, {2, 2}}, {{"axis", std::int64_t{1}}}},
      {"slice", {{4, 5}}, {{"axis", std::int64_t{1}}, {"start", std::int64_t{1}}, {"length", std::int64_t{3}}}},
      {"reshape", {{2, 6}}, {{"shape", V{3, 4}}}},
      {"transpose", {{2, 3, 4}}, {{"perm", V{2, 0, 1}}}},
      {"sum", {{3, 4}}, {{"axis", std::int64_t{1}}}},
      {"mean", {{3, 4}}, {}},
      {"exp", {{3, 4}}, {}},
      {"log", {{3, 4}}, {}, 0.2, 3.0},
      {"sigmoid", {{3, 4}}, {}},
      {"tanh", {{3, 4}}, {}},
      {"relu", {{3, 4}}, {}, -1.0, 1.0, 0.05},
      {"leaky_relu", {{3, 4}}, {}, -1.0, 1.0, 0.05},
      {"softplus", {{3, 4}}, {}, -3.0, 3.0},
      {"softmax_rows", {{3, 4}}, {}, -2.0, 2.0},
  };
}

double primitive_max_error(const PrimitiveCase& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet params;
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) {
    const auto v = uniform_values(shape_numel(c.shapes[i]), rng, c.lo, c.hi, c.away);
    inputs.push_back(params.add("x" + std::to_string(i), Tensor::from_values(c.shapes[i], v)));
  }
  Tensor probe = forward_op(c.kind, inputs, c.attrs);
  const Tensor weights =
      Tensor::from_values(probe.shape(), uniform_values(probe.numel(), rng, -1.0, 1.0));
  auto report = grad_check([&] { return sum(mul(forward_op(c.kind, inputs, c.attrs), weights)); },
                           params, 1e-5);
  double worst = 0.0;
  for (const auto& [name, err] : report) worst = std::max(worst, err);
  return worst;
}

}  // namespace

TEST_CASE("matmul with identity returns the left operand") {
  Tensor a = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor eye = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor c = matmul(a, eye);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.to_vector() == a.to_vector());
}

TEST_CASE("softmax of a constant row is uniform") {
  for (double c : {-7.0, 0.0, 3.5, 100.0}) {
    Tensor y = softmax_rows(Tensor::full({1, 3}, c));
    for (double v : y.to_vector()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }
}

TEST_CASE("conv1d with the identity kernel is the identity") {
  Tensor x = Tensor::from_values({1, 1, 5}, {0.5, -1.0, 2.0, 3.0, -4.0});
  Tensor k = Tensor::from_values({1, 1, 3}, {0, 1, 0});
  Tensor y = conv1d(x, k);
  CHECK(y.shape() == Shape{1, 1, 5});
  CHECK(y.to_vector() == x.to_vector());
}

TEST_CASE("conv1d with same padding preserves sequence length") {
  std::mt19937_64 rng(3);
  for (std::size_t len : {1u, 2u, 7u, 15u}) {
    for (std::size_t k : {1u, 3u, 5u}) {
      Tensor x = Tensor::from_values({2, 3, len}, uniform_values(6 * len, rng, -1, 1));
      Tensor w = Tensor::from_values({4, 3, k}, uniform_values(12 * k, rng, -1, 1));
      CHECK(conv1d(x, w).shape() == Shape{2, 4, len});
    }
  }
  CHECK_THROWS_AS(conv1d(Tensor::zeros({1, 2, 4}), Tensor::zeros({1, 2, 2})), ShapeError);
}

TEST_CASE("softmax rows sum to one with entries in (0,1)") {
  PrecisionGuard f64(Precision::f64);
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor y = softmax_rows(Tensor::from_values({5, 7}, uniform_values(35, rng, -10, 10)));
    auto v = y.to_vector();
    for (int r = 0; r < 5; ++r) {
      double total = 0;
      for (int c = 0; c < 7; ++c) {
        const double e = v[r * 7 + c];
        CHECK(e > 0.0);
        CHECK(e < 1.0);
        total += e;
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("broadcasting follows right-aligned extents") {
  Tensor a = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_values({3}, {10, 20, 30});
  CHECK(add(a, b).to_vector() == std::vector<double>{11, 22, 33, 14, 25, 36});
  Tensor col = Tensor::from_values({2, 1}, {1, 2});
  CHECK(mul(a, col).to_vector() == std::vector<double>{1, 2, 3, 8, 10, 12});
  CHECK_THROWS_AS(add(a, Tensor::zeros({2})), ShapeError);
}

TEST_CASE("shape errors name the primitive and the shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(forward_op("gelu", std::vector<Tensor>{Tensor::zeros({1})}), ValueError);
  CHECK_THROWS_AS(slice(Tensor::zeros({2, 3}), 1, 2, 2), ShapeError);
  CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {4}), ShapeError);
  CHECK_THROWS_AS(transpose(Tensor::zeros({2, 3}), {0, 0}), ShapeError);
}

TEST_CASE("backward of sum(x*x) at 3 is 6") {
  ParameterSet params;
  Tensor x = params.add("x", Tensor::from_values({1}, {3.0}));
  Tape tape;
  Tensor root;
  {
    Tape::Scope scope(&tape);
    root = sum(mul(x, x));
  }
  auto grads = backward(tape, root, params);
  CHECK(grads.at("x").item() == doctest::Approx(6.0));
}

TEST_CASE("backward of a constant leaves parameters at zero") {
  ParameterSet params;
  Tensor unused = params.add("w", Tensor::from_values({2}, {1.0, 2.0}));
  Tape tape;
  Tensor root;
  {
    Tape::Scope scope(&tape);
    root = sum(Tensor::from_values({3}, {1, 2, 3}));
  }
  CHECK(tape.size() == 0);
  auto grads = backward(tape, root, params);
  CHECK(grads.at("w").to_vector() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("backward through mean(leaky_relu) uses the 0.2 slope") {
  PrecisionGuard f64(Precision::f64);
  ParameterSet params;
  Tensor x = params.add("x", Tensor::from_values({2}, {-1.0, 2.0}));
  Tape tape;
  Tensor root;
  {
    Tape::Scope scope(&tape);
    root = mean(leaky_relu(x));
  }
  auto g = backward(tape, root, params).at("x").to_vector();
  CHECK(g[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward rejects a non-scalar root") {
  ParameterSet params;
  Tensor x = params.add("x", Tensor::from_values({2}, {1.0, 2.0}));
  Tape tape;
  Tensor y;
  {
    Tape::Scope scope(&tape);
    y = mul(x, x);
  }
  CHECK_THROWS_AS(backward(tape, y, params), ShapeError);
}

TEST_CASE("tape is recorded in topological order") {
  ParameterSet params;
  Tensor x = params.add("x", Tensor::from_values({2}, {1.0, 2.0}));
  Tape tape;
  {
    Tape::Scope scope(&tape);
    Tensor y = exp(x);
    Tensor z = sum(mul(y, x));
  }
  const auto& nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& in : nodes[i]->inputs) {
      auto pos = std::find(nodes.begin(), nodes.end(), in);
      if (pos != nodes.end()) CHECK(static_cast<std::size_t>(pos - nodes.begin()) < i);
    }
  }
  CHECK(nodes.size() == 3);
}

TEST_CASE("backward is deterministic on the same tape") {
  std::mt19937_64 rng(5);
  ParameterSet params;
  Tensor w = params.add("w", Tensor::from_values({4, 3}, uniform_values(12, rng, -1, 1)));
  Tensor x = Tensor::from_values({5, 4}, uniform_values(20, rng, -1, 1));
  Tape tape;
  Tensor root;
  {
    Tape::Scope scope(&tape);
    root = mean(softplus(matmul(x, w)));
  }
  auto g1 = backward(tape, root, params).at("w").to_vector();
  auto g2 = backward(tape, root, params).at("w").to_vector();
  CHECK(g1 == g2);
}

TEST_CASE("no tape means no recording") {
  ParameterSet params;
  Tensor x = params.add("x", Tensor::from_values({2}, {1.0, 2.0}));
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad_check on a linear map is exact") {
  PrecisionGuard f64(Precision::f64);
  std::mt19937_64 rng(1);
  ParameterSet params;
  Tensor w = params.add("W", Tensor::from_values({3, 4}, uniform_values(12, rng, -1, 1)));
  Tensor x = Tensor::from_values({4, 1}, uniform_values(4, rng, -1, 1));
  auto report = grad_check([&] { return sum(matmul(w, x)); }, params, 1e-5);
  CHECK(report.at("W") < 1e-8);
}

TEST_CASE("grad_check reports zero for a parameter the function ignores") {
  PrecisionGuard f64(Precision::f64);
  ParameterSet params;
  Tensor a = params.add("a", Tensor::from_values({2}, {0.3, -0.7}));
  params.add("ignored", Tensor::from_values({3}, {1, 2, 3}));
  auto report = grad_check([&] { return sum(square(a)); }, params, 1e-5);
  CHECK(report.at("ignored") == 0.0);
  CHECK(report.at("a") < 1e-6);
}

TEST_CASE("grad_check rejects non-finite function values") {
  PrecisionGuard f64(Precision::f64);
  ParameterSet params;
  Tensor a = params.add("a", Tensor::from_values({1}, {800.0}));
  CHECK_THROWS_AS(grad_check([&] { return sum(exp(a)); }, params, 1e-5), NumericError);
}

TEST_CASE("every primitive passes grad_check on 10 seeded inputs") {
  PrecisionGuard f64(Precision::f64);
  CHECK(primitive_cases().size() == primitive_kinds().size());
  for (const auto& c : primitive_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const double err = primitive_max_error(c, 1000 + seed);
      INFO(c.kind << " seed " << seed << " err " << err);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("f32 forward values are finite on finite inputs") {
  std::mt19937_64 rng(9);
  Tensor x = Tensor::from_values({4, 6}, uniform_values(24, rng, -50, 50));
  for (const Tensor& y : {exp(scale(x, 0.1)), sigmoid(x), tanh(x), softplus(x), softmax_rows(x),
                          leaky_relu(x), relu(x)}) {
    for (double v : y.to_vector()) CHECK(std::isfinite(v));
  }
}
