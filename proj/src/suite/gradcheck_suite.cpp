#include "granp/gradcheck_suite.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "granp/grad_check.hpp"
#include "granp/model.hpp"
#include "granp/ops.hpp"

namespace granp::suite {

using namespace granp::ad;

namespace {

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo, double hi,
                            double away = 0.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) {
    do {
      x = dist(rng);
    } while (std::abs(x) < away);
  }
  return v;
}

Tensor random(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  const auto n = shape_numel(shape);
  return Tensor::from_values(std::move(shape), uniform(n, rng, lo, hi));
}

struct PrimitiveCase {
  std::string kind;
  std::vector<Shape> shapes;
  Attrs attrs;
  double lo = -1.0, hi = 1.0, away = 0.0;
};

// inputs stay clear of kinks (relu at 0) and of the log/div poles
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

class Runner {
 public:
  Runner(std::vector<SuiteRow>& rows, const std::function<void(const SuiteRow&)>& on_row)
      : rows_(rows), on_row_(on_row) {}

  void run(const std::string& group, const std::string& name, ParameterSet& params,
           const std::function<Tensor()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto report = grad_check_report(f, params, kGradStep, kGradTolerance);
    SuiteRow row;
    row.group = group;
    row.name = name;
    for (const auto& [pname, st] : report.parameters) {
      row.entries += st.entries;
      row.max_rel_error = std::max(row.max_rel_error, st.max_rel_error);
      row.max_abs_error = std::max(row.max_abs_error, st.max_abs_error);
      row.floor_ratio = std::max(row.floor_ratio, st.max_floor_ratio);
      row.over_tolerance += st.over_tolerance;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows_.push_back(row);
    if (on_row_) on_row_(row);
  }

 private:
  std::vector<SuiteRow>& rows_;
  const std::function<void(const SuiteRow&)>& on_row_;
};

}  // namespace

std::vector<SuiteRow> run_gradcheck_suite(std::uint64_t seed,
                                          const std::function<void(const SuiteRow&)>& on_row) {
  PrecisionGuard f64(Precision::f64);
  std::vector<SuiteRow> rows;
  Runner runner(rows, on_row);
  std::mt19937_64 rng(seed);

  for (const auto& c : primitive_cases()) {
    ParameterSet params;
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < c.shapes.size(); ++i) {
      const auto v = uniform(shape_numel(c.shapes[i]), rng, c.lo, c.hi, c.away);
      inputs.push_back(params.add("x" + std::to_string(i), Tensor::from_values(c.shapes[i], v)));
    }
    const Tensor probe = forward_op(c.kind, inputs, c.attrs);
    const Tensor w = random(probe.shape(), rng);
    runner.run("primitive", c.kind, params,
               [&] { return sum(mul(forward_op(c.kind, inputs, c.attrs), w)); });
  }

  {
    ParameterSet params;
    nn::Linear lin(params, "linear", 5, 3, rng);
    const Tensor x = random({4, 5}, rng), w = random({4, 3}, rng);
    runner.run("layer", "linear", params, [&] { return sum(mul(lin.forward(x), w)); });
  }
  {
    ParameterSet params;
    nn::MlpBlock mlp(params, "mlp", {4, 6, 3}, rng);
    const Tensor x = random({5, 4}, rng);
    runner.run("layer", "mlp", params, [&] { return sum(square(mlp.forward(x))); });
  }
  {
    ParameterSet params;
    nn::LstmEncoder lstm(params, "lstm", 3, 4, rng);
    const Tensor x = random({5, 2, 3}, rng), w = random({2, 4}, rng);
    runner.run("layer", "lstm", params, [&] { return sum(mul(lstm.encode(x), w)); });
  }
  {
    ParameterSet params;
    nn::ConvMlpEncoder enc(params, "conv_mlp", 3, 4, 3, 4, rng);
    const Tensor x = random({2, 3, 6}, rng);
    runner.run("layer", "conv_mlp", params, [&] { return sum(square(enc.encode(x))); });
  }
  {
    // adjacency of a real scene graph
    const auto scene = data::synth_scenes(1, seed + 3).front();
    const graph::OccupancyGrid grid{};
    const auto t = scene.history.front().size() - 1;
    const auto ids = graph::select_grid_nodes(scene, t, grid);
    std::vector<data::Position> pos;
    for (int id : ids) {
      for (std::size_t v = 0; v < scene.vehicle_ids.size(); ++v) {
        if (scene.vehicle_ids[v] == id) pos.push_back({scene.history[v][t].x, scene.history[v][t].y});
      }
    }
    const auto adj = graph::build_adjacency(ids, pos, grid);
    ParameterSet params;
    nn::GatLayer gat(params, "gat", 3, 4, 2, rng);
    const Tensor s = random({adj.n, 3}, rng), w = random({adj.n, 4}, rng);
    runner.run("layer", "gat", params, [&] { return sum(mul(gat.forward(s, adj).nodes, w)); });
  }
  {
    ParameterSet params;
    nn::CrossAttention att(params, "cross_attention", 8, 2, rng);
    const Tensor q = random({3, 8}, rng), k = random({4, 8}, rng), v = random({4, 8}, rng);
    const Tensor w = random({3, 8}, rng);
    runner.run("layer", "cross_attention", params,
               [&] { return sum(mul(att.attend(q, k, v).values, w)); });
  }

  model::ModelConfig config;
  config.hidden = 16;
  config.heads = 2;
  auto fitted_model = [&](const std::vector<data::TrajectoryScene>& scenes) {
    model::GranpModel m(config, seed + 1);
    std::vector<data::TrajectoryScene> framed;
    for (const auto& s : scenes) framed.push_back(data::to_ego_frame(s));
    m.set_normalization(data::NormalizationStats::fit(framed));
    return m;
  };
  {
    auto scenes = data::synth_scenes(4, 22);
    auto m = fitted_model(scenes);
    auto scene = scenes.front();
    scene.vehicle_ids.resize(std::min<std::size_t>(2, scene.vehicle_ids.size()));
    scene.history.resize(scene.vehicle_ids.size());
    const std::vector<data::TrajectoryScene> one{scene};
    const auto p = m.prepare(one, true);
    runner.run("model", "pair_encoder", m.parameters(), [&] {
      const auto e = m.encode(p, true);
      return add(add(sum(e.H), sum(e.r)), sum(e.s));
    });
  }
  {
    const auto scenes = data::synth_scenes(2, 31);
    auto m = fitted_model(scenes);
    std::mt19937_64 noise_rng(seed + 8);
    const auto row = model::standard_normal(1, config.latent_dim(), noise_rng);
    const Tensor noise = Tensor::from_values({1, config.latent_dim()}, row[0]);
    data::EpisodeBatch batch;
    batch.targets = scenes;
    batch.context = {0};
    runner.run("model", "elbo_loss", m.parameters(),
               [&] { return m.elbo_loss(batch, noise).loss; });
  }
  return rows;
}

std::string format_header() {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-16s %7s %12s %12s %10s %6s %8s  %s", "group", "name",
                "entries", "max_rel_err", "max_abs_err", "floor_rat", "over", "seconds", "status");
  return buf;
}

std::string format_row(const SuiteRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-16s %7zu %12.3e %12.3e %10.3f %6zu %8.2f  %s",
                r.group.c_str(), r.name.c_str(), r.entries, r.max_rel_error, r.max_abs_error,
                r.floor_ratio, r.over_tolerance, r.seconds, r.passed() ? "PASS" : "FAIL");
  return buf;
}

}  // namespace granp::suite
