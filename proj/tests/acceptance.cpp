// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status is 0 only if every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "granp/gradcheck_suite.hpp"
#include "granp/train.hpp"

using namespace granp;
using namespace granp::ad;
using granp::model::GranpModel;
using granp::model::ModelConfig;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

void log(const std::string& s) { std::cerr << "[acceptance] " << s << std::endl; }

// ---------------------------------------------------------------------------

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = Clock::now();
  const auto rows = suite::run_gradcheck_suite(0, [](const suite::SuiteRow& r) {
    std::cerr << "  " << suite::format_row(r) << std::endl;
  });
  const double elapsed = seconds_since(t0);
  std::size_t primitives = 0, layers = 0;
  double worst_prim = 0, worst_layer = 0;
  for (const auto& r : rows) {
    if (r.group == "primitive") {
      ++primitives;
      worst_prim = std::max(worst_prim, r.max_rel_error);
    } else if (r.group == "layer") {
      ++layers;
      worst_layer = std::max(worst_layer, r.max_rel_error);
    }
  }
  const auto elbo = std::find_if(rows.begin(), rows.end(),
                                 [](const auto& r) { return r.name == "elbo_loss"; });
  v.detail << primitives << " primitives max " << worst_prim << ", " << layers << " layers max "
           << worst_layer;
  if (elbo != rows.end()) {
    v.detail << ", full objective max " << elbo->max_rel_error << " (" << elbo->over_tolerance
             << "/" << elbo->entries << " entries >= 1e-4, max abs diff " << elbo->max_abs_error
             << ")";
  }
  v.detail << ", " << elapsed << " s";
  for (const auto& r : rows) v.require(r.passed(), r.name + " rel err " + std::to_string(r.max_rel_error));
  v.require(elbo != rows.end(), "full objective row present");
  v.require(elapsed < 120.0, "runtime under 2 minutes");
  return v;
}

Verdict kl_correctness() {
  PrecisionGuard f64(Precision::f64);
  Verdict v;
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  std::uniform_real_distribution<double> mu(-3.0, 3.0), sd(0.05, 3.0);
  double worst = 0, lowest = INFINITY;
  bool self_zero = true;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t L = dim(rng);
    std::vector<double> mq(L), sq(L), mp(L), sp(L);
    for (std::size_t j = 0; j < L; ++j) {
      mq[j] = mu(rng);
      sq[j] = sd(rng);
      mp[j] = mu(rng);
      sp[j] = sd(rng);
    }
    // 0.5 * sum(sq^2/sp^2 + (mp - mq)^2/sp^2 - 1 + ln(sp^2/sq^2))
    double oracle = 0;
    for (std::size_t j = 0; j < L; ++j) {
      const double r = sq[j] / sp[j], d = (mp[j] - mq[j]) / sp[j];
      oracle += 0.5 * (r * r + d * d - 1.0 - std::log(r * r));
    }
    auto dist = [L](const std::vector<double>& m, const std::vector<double>& s) {
      return model::LatentDistribution{Tensor::from_values({1, L}, m),
                                       Tensor::from_values({1, L}, s)};
    };
    const double kl = model::kl_diag(dist(mq, sq), dist(mp, sp)).item();
    worst = std::max(worst, std::abs(kl - oracle));
    lowest = std::min(lowest, kl);
    if (model::kl_diag(dist(mq, sq), dist(mq, sq)).item() != 0.0) self_zero = false;
  }
  v.detail << "1000 pairs, max |kl - oracle| " << worst << ", min kl " << lowest
           << ", KL(p||p) exactly 0: " << (self_zero ? "yes" : "no");
  v.require(worst <= 1e-9, "oracle agreement within 1e-9");
  v.require(lowest >= -1e-9, "non-negative");
  v.require(self_zero, "KL(p||p) == 0");
  return v;
}

Verdict np_invariances() {
  PrecisionGuard f64(Precision::f64);
  Verdict v;
  const auto scenes = data::synth_scenes(8, 61);
  ModelConfig config;  // hidden 64, heads 4
  GranpModel m(config, 5);
  std::vector<data::TrajectoryScene> framed;
  for (const auto& s : scenes) framed.push_back(data::to_ego_frame(s));
  m.set_normalization(data::NormalizationStats::fit(framed));
  std::mt19937_64 rng(6);
  const auto noise_row = model::standard_normal(1, config.latent_dim(), rng);
  const Tensor noise = Tensor::from_values({1, config.latent_dim()}, noise_row[0]);

  data::EpisodeBatch batch;
  batch.targets = scenes;
  batch.context = {0, 1, 2, 3, 4};
  const double base = m.elbo_loss(batch, noise).loss.item();
  double elbo_dev = 0;
  for (int i = 0; i < 20; ++i) {
    std::shuffle(batch.context.begin(), batch.context.end(), rng);
    elbo_dev = std::max(elbo_dev, std::abs(m.elbo_loss(batch, noise).loss.item() - base));
  }

  std::vector<data::TrajectoryScene> context(scenes.begin(), scenes.begin() + 5);
  std::vector<data::TrajectoryScene> queries(scenes.begin() + 5, scenes.end());
  for (auto& q : queries) q.future.clear();
  const auto draws = model::standard_normal(10, config.latent_dim(), rng);
  const auto ref = m.predict(queries, context, draws);
  double pred_dev = 0;
  for (int i = 0; i < 20; ++i) {
    std::shuffle(context.begin(), context.end(), rng);
    const auto p = m.predict(queries, context, draws);
    for (std::size_t q = 0; q < p.size(); ++q) {
      for (std::size_t t = 0; t < p[q].mean.size(); ++t) {
        pred_dev = std::max({pred_dev, std::abs(p[q].mean[t].x - ref[q].mean[t].x),
                             std::abs(p[q].mean[t].y - ref[q].mean[t].y),
                             std::abs(p[q].sigma[t].x - ref[q].sigma[t].x),
                             std::abs(p[q].sigma[t].y - ref[q].sigma[t].y)});
      }
    }
  }

  // GAT on a scene graph with permuted node order
  double gat_dev = 0;
  {
    ParameterSet params;
    std::mt19937_64 grng(9);
    nn::GatLayer gat(params, "gat", 4, 16, 4, grng);
    for (const auto& scene : scenes) {
      const std::size_t t = scene.history.front().size() - 1;
      const auto ids = graph::select_grid_nodes(scene, t);
      const std::size_t n = ids.size();
      std::vector<data::Position> pos;
      std::vector<double> feats;
      for (int id : ids) {
        const auto k = static_cast<std::size_t>(
            std::find(scene.vehicle_ids.begin(), scene.vehicle_ids.end(), id) -
            scene.vehicle_ids.begin());
        const auto& st = scene.history[k][t];
        pos.push_back({st.x, st.y});
        feats.insert(feats.end(), {st.x / 10, st.y / 50, st.s / 30, st.a});
      }
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), grng);
      std::vector<int> pids(n);
      std::vector<data::Position> ppos(n);
      std::vector<double> pfeats(n * 4);
      for (std::size_t i = 0; i < n; ++i) {
        pids[i] = ids[perm[i]];
        ppos[i] = pos[perm[i]];
        std::copy_n(feats.begin() + static_cast<long>(perm[i] * 4), 4, pfeats.begin() + static_cast<long>(i * 4));
      }
      const auto a = gat.forward(Tensor::from_values({n, 4}, feats), graph::build_adjacency(ids, pos))
                         .nodes.to_vector();
      const auto b = gat.forward(Tensor::from_values({n, 4}, pfeats), graph::build_adjacency(pids, ppos))
                         .nodes.to_vector();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 16; ++c) {
          gat_dev = std::max(gat_dev, std::abs(b[i * 16 + c] - a[perm[i] * 16 + c]));
        }
      }
    }
  }
  v.detail << "64-bit; elbo max dev " << elbo_dev << ", predict max dev " << pred_dev
           << " over 20 permutations; GAT equivariance max dev " << gat_dev;
  v.require(elbo_dev <= 1e-5, "elbo invariance");
  v.require(pred_dev <= 1e-5, "predict invariance");
  v.require(gat_dev <= 1e-6, "GAT equivariance");
  return v;
}

Verdict adjacency_properties() {
  Verdict v;
  const graph::OccupancyGrid grid;
  const double delta = grid.delta();
  const auto scenes = data::synth_scenes(50, 71);
  bool symmetric = true, unit_diag = true, in_range = true;
  for (const auto& scene : scenes) {
    const std::size_t t = scene.history.front().size() - 1;
    std::vector<data::Position> pos;
    for (const auto& h : scene.history) pos.push_back({h[t].x, h[t].y});
    const auto adj = graph::build_adjacency(scene.vehicle_ids, pos, grid);
    for (std::size_t i = 0; i < adj.n; ++i) {
      if (adj(i, i) != 1.0) unit_diag = false;
      for (std::size_t j = 0; j < adj.n; ++j) {
        if (adj(i, j) != adj(j, i)) symmetric = false;
        if (!(adj(i, j) >= 0.0 && adj(i, j) <= 1.0)) in_range = false;
      }
    }
  }
  const std::vector<int> ids{1, 2};
  const std::vector<data::Position> at_delta{{0.0, 0.0}, {0.0, delta}};
  const double a_delta = graph::build_adjacency(ids, at_delta, grid)(0, 1);
  v.detail << "50 scene graphs; delta " << delta << " m; A at delta " << a_delta;
  v.require(symmetric, "symmetry");
  v.require(unit_diag, "A_ii = 1");
  v.require(in_range, "entries in [0, 1]");
  v.require(std::abs(a_delta - std::exp(-1.0)) <= 1e-12, "exp(-1) at delta");
  v.require(std::abs(delta - 30.943) <= 1e-3, "delta 30.943 m");
  return v;
}

// ---------------------------------------------------------------------------

struct Trained {
  std::optional<train::TrainResult> result;
  std::vector<data::TrajectoryScene> test;
  std::vector<model::Prediction> test_predictions;
  double train_seconds = 0;
};

constexpr std::size_t kTestSamples = 30;
constexpr std::uint64_t kTestSeed = 0;

Verdict training_progress(Trained& tr) {
  Verdict v;
  const auto scenes = data::synth_scenes(500, 2024, 0.7);
  tr.test = data::synth_scenes(200, 7777, 0.7);
  train::TrainOptions opt;
  opt.epochs = 200;
  opt.lr = 5e-4;
  opt.seed = 1;
  opt.config.hidden = 64;
  opt.config.heads = 4;
  opt.on_epoch = [](const train::EpochRecord& r) {
    if (r.epoch == 1 || r.epoch % 20 == 0) {
      log("epoch " + std::to_string(r.epoch) + " loss " + std::to_string(r.loss) + " val_nll " +
          std::to_string(r.val_nll));
    }
  };
  const auto t0 = Clock::now();
  tr.result = train::train(scenes, opt);
  tr.train_seconds = seconds_since(t0);
  const auto& res = *tr.result;

  const double first = res.history.front().val_nll;
  const double best = res.history[res.best_epoch - 1].val_nll;
  const double drop = (first - best) / std::abs(first);

  tr.test_predictions = train::predict_all(res.best, tr.test, kTestSamples, kTestSeed);
  const auto report = train::score_predictions(tr.test_predictions, tr.test);
  std::vector<model::Prediction> still;
  for (const auto& s : tr.test) still.push_back(train::constant_position(s));
  const auto base = train::score_predictions(still, tr.test);
  const double gain = 1.0 - report.rmse_m[4] / base.rmse_m[4];

  v.detail << "val NLL epoch 1 " << first << " -> best " << best << " (epoch " << res.best_epoch
           << ", -" << 100.0 * drop << "%); RMSE 5 s " << report.rmse_m[4]
           << " m vs constant position " << base.rmse_m[4] << " m (" << 100.0 * gain
           << "% better); RMSE 1 s " << report.rmse_m[0] << " m; training " << tr.train_seconds
           << " s";
  v.require(best < first && drop >= 0.30, "validation NLL down by 30%");
  v.require(gain >= 0.50, "beats constant position by 50% at 5 s");
  v.require(report.rmse_m[0] < 1.0, "RMSE at 1 s below 1 m");
  v.require(tr.train_seconds < 1800.0, "training under 30 minutes");
  return v;
}

Verdict uncertainty_growth(const Trained& tr) {
  Verdict v;
  const auto& preds = tr.test_predictions;
  double s1 = 0, s5 = 0;
  std::size_t grew = 0;
  for (const auto& p : preds) {
    const double a = std::hypot(p.sigma[4].x, p.sigma[4].y);
    const double b = std::hypot(p.sigma[24].x, p.sigma[24].y);
    s1 += a;
    s5 += b;
    if (b > a) ++grew;
  }
  const double n = static_cast<double>(preds.size());
  v.detail << preds.size() << " test scenes; mean pooled sigma 1 s " << s1 / n << " m, 5 s "
           << s5 / n << " m; larger at 5 s in " << grew << " scenes";
  v.require(preds.size() >= 100, "at least 100 scenes");
  v.require(s5 / n > s1 / n, "mean sigma grows");
  return v;
}

Verdict determinism(const Trained& tr) {
  Verdict v;
  const auto a = data::dump_scene_archive(data::synth_scenes(30, 9));
  const auto b = data::dump_scene_archive(data::synth_scenes(30, 9));
  const bool synth_same = a == b;

  const auto scenes = data::synth_scenes(60, 12);
  train::TrainOptions opt;
  opt.epochs = 3;
  opt.seed = 4;
  const auto r1 = train::train(scenes, opt);
  const auto r2 = train::train(scenes, opt);
  bool train_same = r1.history.size() == r2.history.size();
  for (std::size_t e = 0; train_same && e < r1.history.size(); ++e) {
    const auto &x = r1.history[e], &y = r2.history[e];
    train_same = x.loss == y.loss && x.recon_nll == y.recon_nll && x.kl == y.kl &&
                 x.val_nll == y.val_nll;
  }
  const auto& pa = r1.best.model.parameters().items();
  const auto& pb = r2.best.model.parameters().items();
  for (std::size_t i = 0; train_same && i < pa.size(); ++i) {
    train_same = pa[i].value.to_vector() == pb[i].value.to_vector();
  }

  const auto& ckpt = tr.result->best;
  const std::span<const data::TrajectoryScene> queries(tr.test.data(), 20);
  const auto p1 = ckpt.predict(queries, 10, 3);
  const auto p2 = ckpt.predict(queries, 10, 3);
  auto same = [](const std::vector<model::Prediction>& x, const std::vector<model::Prediction>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].mean != y[i].mean || x[i].sigma != y[i].sigma || x[i].samples != y[i].samples ||
          x[i].lower != y[i].lower || x[i].upper != y[i].upper) {
        return false;
      }
    }
    return true;
  };
  const bool predict_same = same(p1, p2);

  const auto dir = fs::temp_directory_path() / "granp_acceptance_ckpt";
  fs::remove_all(dir);
  train::save_checkpoint(ckpt, dir);
  const auto loaded = train::load_checkpoint(dir);
  bool params_same = true;
  const auto& qa = ckpt.model.parameters().items();
  const auto& qb = loaded.model.parameters().items();
  for (std::size_t i = 0; i < qa.size(); ++i) {
    params_same = params_same && qa[i].value.to_vector() == qb[i].value.to_vector();
  }
  const bool roundtrip_same = params_same && same(p1, loaded.predict(queries, 10, 3));
  fs::remove_all(dir);

  v.detail << "synth " << (synth_same ? "identical" : "differs") << "; train loss history "
           << (train_same ? "identical" : "differs") << "; predict "
           << (predict_same ? "identical" : "differs") << "; save/load/predict "
           << (roundtrip_same ? "identical" : "differs");
  v.require(synth_same, "synth");
  v.require(train_same, "train");
  v.require(predict_same, "predict");
  v.require(roundtrip_same, "checkpoint round trip");
  return v;
}

Verdict pipeline_arithmetic() {
  Verdict v;
  data::RawTrack track;
  track.id = 1;
  for (int f = 0; f < 200; ++f) {
    data::TrackFrame fr;
    fr.frame = f;
    fr.x = 30.0 * f / 25.0;
    fr.y = 5.0;
    fr.x_velocity = 30.0;
    fr.speed = 30.0;
    track.frames.push_back(fr);
  }
  const std::vector<data::RawTrack> tracks{track};
  const auto windows = data::resample_and_window(tracks, 25);
  const bool one_window = windows.scenes.size() == 1 &&
                          windows.scenes[0].ego_history().size() == 15 &&
                          windows.scenes[0].future.size() == 25;

  const auto scenes = data::synth_scenes(200, 81);
  std::vector<data::TrajectoryScene> framed;
  for (const auto& s : scenes) framed.push_back(data::to_ego_frame(s));
  const auto stats = data::NormalizationStats::fit(framed);
  double roundtrip = 0;
  std::array<double, 4> sum{}, sq{};
  std::size_t count = 0;
  for (const auto& s : framed) {
    const auto z = stats.apply(s);
    const auto back = stats.invert(z);
    for (std::size_t k = 0; k < s.history.size(); ++k) {
      for (std::size_t t = 0; t < s.history[k].size(); ++t) {
        const auto& o = s.history[k][t];
        const auto& r = back.history[k][t];
        roundtrip = std::max({roundtrip, std::abs(o.x - r.x), std::abs(o.y - r.y),
                              std::abs(o.s - r.s), std::abs(o.a - r.a)});
        const auto& zz = z.history[k][t];
        const std::array<double, 4> f{zz.x, zz.y, zz.s, zz.a};
        for (std::size_t i = 0; i < 4; ++i) {
          sum[i] += f[i];
          sq[i] += f[i] * f[i];
        }
        ++count;
      }
    }
    for (std::size_t t = 0; t < s.future.size(); ++t) {
      roundtrip = std::max({roundtrip, std::abs(s.future[t].x - back.future[t].x),
                            std::abs(s.future[t].y - back.future[t].y)});
    }
  }
  double worst_mean = 0, worst_std = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double m = sum[i] / static_cast<double>(count);
    const double sd = std::sqrt(sq[i] / static_cast<double>(count) - m * m);
    worst_mean = std::max(worst_mean, std::abs(m));
    worst_std = std::max(worst_std, std::abs(sd - 1.0));
  }
  v.detail << "200-frame track -> " << windows.scenes.size() << " window(s); z-score round trip "
           << roundtrip << "; normalized features max |mean| " << worst_mean << ", max |std-1| "
           << worst_std;
  v.require(one_window, "one 15+25 window");
  v.require(roundtrip <= 1e-9, "round trip within 1e-9");
  v.require(worst_mean < 1e-6 && worst_std < 1e-6, "normalized moments");
  return v;
}

Verdict attention_export(const Trained& tr) {
  Verdict v;
  double worst = 0;
  bool sorted = true, ego_free = true;
  std::size_t rows = 0;
  for (const auto& scene : tr.test) {
    const auto a = model::export_attention(tr.result->best.model, scene);
    for (const auto& layer : a.layers) {
      for (const auto& row : layer) {
        worst = std::max(worst, std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0));
        ++rows;
      }
    }
    for (std::size_t i = 1; i < a.top.size(); ++i) sorted = sorted && a.top[i - 1].second >= a.top[i].second;
    for (const auto& [id, w] : a.top) ego_free = ego_free && id != a.ego_id;
    if (a.top.size() != std::min<std::size_t>(3, a.node_ids.size() - 1)) sorted = false;
  }
  v.detail << tr.test.size() << " scenes, " << rows << " rows; max |row sum - 1| " << worst
           << "; top-3 sorted " << (sorted ? "yes" : "no");
  v.require(worst <= 1e-6, "rows sum to 1");
  v.require(sorted, "top-3 sorted descending");
  v.require(ego_free, "ego excluded from top-3");
  return v;
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  std::vector<std::pair<std::string, Verdict>> results(9);
  auto run = [&](std::size_t idx, const std::string& name, const std::function<Verdict()>& f) {
    log("criterion " + std::to_string(idx) + ": " + name);
    try {
      results[idx - 1] = {name, f()};
    } catch (const std::exception& e) {
      Verdict v;
      v.pass = false;
      v.detail << "threw: " << e.what();
      results[idx - 1] = {name, std::move(v)};
    }
  };

  Trained tr;
  run(1, "gradient suite", gradient_suite);
  run(2, "KL correctness", kl_correctness);
  run(3, "NP invariances", np_invariances);
  run(4, "adjacency properties", adjacency_properties);
  run(5, "training progress", [&] { return training_progress(tr); });
  const bool trained = tr.result.has_value() && !tr.test_predictions.empty();
  auto needs_model = [&](const std::function<Verdict()>& f) {
    return [&, f] {
      if (!trained) {
        Verdict v;
        v.pass = false;
        v.detail << "no trained model (criterion 5 did not complete)";
        return v;
      }
      return f();
    };
  };
  run(6, "uncertainty growth", needs_model([&] { return uncertainty_growth(tr); }));
  run(7, "determinism and persistence", needs_model([&] { return determinism(tr); }));
  run(8, "pipeline arithmetic", pipeline_arithmetic);
  run(9, "attention export", needs_model([&] { return attention_export(tr); }));

  bool all = true;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& [name, v] = results[i];
    all = all && v.pass;
    std::cout << "criterion " << (i + 1) << " " << (v.pass ? "PASS" : "FAIL") << "  " << name
              << ": " << v.detail.str() << '\n';
  }
  std::cout << "total " << seconds_since(t0) << " s\n";
  return all ? 0 : 1;
}
