#include "granp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "granp/error.hpp"

namespace granp::model {

using namespace granp::ad;

namespace {

bool one_of(std::size_t v, std::initializer_list<std::size_t> allowed) {
  return std::find(allowed.begin(), allowed.end(), v) != allowed.end();
}

// Rows of `t` listed in `rows`; a plain slice when they form a prefix.
Tensor select_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  bool prefix = true;
  for (std::size_t i = 0; i < rows.size(); ++i) prefix = prefix && rows[i] == i;
  if (prefix) return rows.size() == t.dim(0) ? t : slice(t, 0, 0, rows.size());
  std::vector<Tensor> parts;
  parts.reserve(rows.size());
  for (std::size_t r : rows) parts.push_back(slice(t, 0, r, 1));
  return concat(parts, 0);
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (!one_of(hidden, {16, 32, 64, 128})) {
    throw ValueError("hidden dimension must be one of 16, 32, 64, 128 (got " +
                     std::to_string(hidden) + ")");
  }
  if (!one_of(heads, {2, 4, 8})) {
    throw ValueError("attention heads must be one of 2, 4, 8 (got " + std::to_string(heads) + ")");
  }
  if (history_steps == 0 || future_steps == 0) throw ValueError("window lengths must be positive");
  if (kernel % 2 == 0 || kernel > history_steps) {
    throw ValueError("conv kernel must be odd and no longer than the history");
  }
  grid.validate();
}

nlohmann::json ModelConfig::to_json() const {
  return {{"hidden", hidden},
          {"heads", heads},
          {"latent", latent_dim()},
          {"gat_layers", kGatLayers},
          {"history_steps", history_steps},
          {"future_steps", future_steps},
          {"kernel", kernel},
          {"grid", {{"length_m", grid.length_m}, {"width_m", grid.width_m}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.hidden = j.at("hidden").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.latent = j.at("latent").get<std::size_t>();
    c.history_steps = j.at("history_steps").get<std::size_t>();
    c.future_steps = j.at("future_steps").get<std::size_t>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.grid.length_m = j.at("grid").at("length_m").get<double>();
    c.grid.width_m = j.at("grid").at("width_m").get<double>();
    if (j.value("gat_layers", kGatLayers) != kGatLayers) throw FormatError("unsupported GAT depth");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

GranpModel::GranpModel(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(init_seed);
  const std::size_t d = config_.hidden, L = config_.latent_dim();
  const std::size_t tn = config_.history_steps, tf = config_.future_steps;
  embed_ = nn::Linear(params_, "embed", 4, d, rng);
  for (std::size_t l = 0; l < ModelConfig::kGatLayers; ++l) {
    gat_.emplace_back(params_, "gat.layer" + std::to_string(l), d, d, config_.heads, rng);
  }
  lstm_ = nn::LstmEncoder(params_, "lstm", d, d, rng);
  interp_ = nn::MlpBlock(params_, "interp", {tf, d, tn}, rng);
  det_encoder_ = nn::ConvMlpEncoder(params_, "deterministic", d + 2, d, config_.kernel, d, rng);
  lat_encoder_ = nn::ConvMlpEncoder(params_, "latent", d + 2, d, config_.kernel, d, rng);
  cross_ = nn::CrossAttention(params_, "cross", d, config_.heads, rng);
  latent_head_ = nn::MlpBlock(params_, "latent_head", {d, d, 2 * L}, rng);
  decoder_ = nn::MlpBlock(params_, "decoder", {2 * d + L, 2 * d, 2 * d, 4 * tf}, rng);
}

void GranpModel::set_normalization(const data::NormalizationStats& stats) {
  if (!stats.fitted()) throw StateError("model: normalization statistics are not fitted");
  stats_ = stats;
}

PreparedScenes GranpModel::prepare(std::span<const TrajectoryScene> scenes, bool with_future) const {
  if (!stats_.fitted()) throw StateError("model: normalization statistics are not set");
  if (scenes.empty()) throw ValueError("model: no scenes to prepare");
  const std::size_t T = config_.history_steps, TF = config_.future_steps;
  const std::size_t B = scenes.size();

  PreparedScenes p;
  p.count = B;
  std::vector<std::vector<std::size_t>> rows(B);  // history index of each gated node
  for (std::size_t b = 0; b < B; ++b) {
    const auto& sc = scenes[b];
    data::validate_scene(sc, with_future, T, TF);
    if (!with_future && sc.has_future()) data::validate_scene(sc, true, T, TF);
    p.node_ids.push_back(graph::select_grid_nodes(sc, T - 1, config_.grid));
    for (int id : p.node_ids.back()) {
      const auto it = std::find(sc.vehicle_ids.begin(), sc.vehicle_ids.end(), id);
      rows[b].push_back(static_cast<std::size_t>(it - sc.vehicle_ids.begin()));
    }
    p.max_nodes = std::max(p.max_nodes, rows[b].size());
    p.origins.push_back(data::ego_origin(sc));
  }
  const std::size_t n = p.max_nodes;
  const std::size_t G = T * B;

  std::vector<double> feat(G * n * 4, 0.0);
  std::vector<double> mask(G * n * n, nn::kMaskedLogit);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& sc = scenes[b];
    const Position o = p.origins[b];
    const std::size_t m = rows[b].size();
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t g = t * B + b;
      std::vector<Position> pos;
      for (std::size_t i = 0; i < m; ++i) {
        const auto& raw = sc.history[rows[b][i]][t];
        pos.push_back({raw.x, raw.y});
        const auto st = stats_.apply(data::VehicleState{raw.x - o.x, raw.y - o.y, raw.s, raw.a});
        double* f = &feat[(g * n + i) * 4];
        f[0] = st.x;
        f[1] = st.y;
        f[2] = st.s;
        f[3] = st.a;
      }
      const auto adj = graph::build_adjacency(p.node_ids[b], pos, config_.grid);
      double* mk = &mask[g * n * n];
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          if (adj(i, j) > 0.0) mk[i * n + j] = 0.0;
        }
      }
      for (std::size_t i = m; i < n; ++i) mk[i * n + i] = 0.0;  // padding attends to itself only
    }
  }
  p.features = Tensor::from_values({G, n, 4}, feat);
  p.mask = Tensor::from_values({G, n, n}, mask);

  if (with_future) {
    std::vector<double> fr(2 * B * TF), fut(B * TF * 2);
    for (std::size_t b = 0; b < B; ++b) {
      const Position o = p.origins[b];
      for (std::size_t t = 0; t < TF; ++t) {
        const auto& q = scenes[b].future[t];
        const auto z = stats_.apply(Position{q.x - o.x, q.y - o.y});
        fr[(2 * b) * TF + t] = z.x;
        fr[(2 * b + 1) * TF + t] = z.y;
        fut[(b * TF + t) * 2] = z.x;
        fut[(b * TF + t) * 2 + 1] = z.y;
      }
    }
    p.future_rows = Tensor::from_values({2 * B, TF}, fr);
    p.future = Tensor::from_values({B, TF, 2}, fut);
  }
  return p;
}

Encoded GranpModel::encode(const PreparedScenes& batch, bool pairs, bool keep_attention) const {
  const std::size_t T = config_.history_steps, d = config_.hidden;
  const std::size_t B = batch.count, n = batch.max_nodes, G = T * B;
  if (!batch.features.defined() || batch.features.shape() != Shape{G, n, 4}) {
    throw ShapeError("model: prepared features do not match the configured history length");
  }
  Encoded out;
  Tensor h = reshape(embed_.forward(reshape(batch.features, {G * n, 4})), {G, n, d});
  for (const auto& layer : gat_) {
    auto o = layer.forward_batched(h, batch.mask);
    h = o.nodes;
    if (keep_attention) out.attention.push_back(std::move(o.attention));
  }
  Tensor ego = reshape(slice(h, 1, 0, 1), {T, B, d});
  out.H = lstm_.encode(ego);
  if (pairs) {
    if (!batch.has_future()) throw ValueError("model: pair encoding needs known futures");
    Tensor y = reshape(interp_.forward(batch.future_rows), {B, 2, T});
    Tensor seq = concat({transpose(ego, {1, 2, 0}), y}, 1);  // [B, d + 2, T]
    out.r = det_encoder_.encode(seq);
    out.s = lat_encoder_.encode(seq);
  }
  return out;
}

nn::CrossAttention::Output GranpModel::deterministic_path(const Tensor& H_T, const Tensor& H_C,
                                                          const Tensor& r_C) const {
  if (!H_C.defined() || !r_C.defined()) throw ValueError("deterministic path: empty context");
  return cross_.attend(H_T, H_C, r_C);
}

LatentDistribution GranpModel::latent_path(const Tensor& s) const {
  if (!s.defined()) throw ValueError("latent path: no pair representations");
  if (s.rank() != 2 || s.dim(1) != config_.hidden) {
    throw ShapeError("latent path: expected [m x " + std::to_string(config_.hidden) + "], got " +
                     shape_str(s.shape()));
  }
  const std::size_t L = config_.latent_dim();
  Tensor pooled = reshape(mean(s, 0), {1, config_.hidden});
  Tensor raw = latent_head_.forward(pooled);
  LatentDistribution dist;
  dist.mu = slice(raw, 1, 0, L);
  dist.sigma = add_scalar(scale(sigmoid(slice(raw, 1, L, L)), kLatentSigmaSpan), kLatentSigmaMin);
  return dist;
}

Decoded GranpModel::decode(const Tensor& H_T, const Tensor& r_star, const Tensor& z) const {
  const std::size_t d = config_.hidden, L = config_.latent_dim(), TF = config_.future_steps;
  if (H_T.rank() != 2 || H_T.dim(1) != d || r_star.shape() != H_T.shape() ||
      z.shape() != Shape{1, L}) {
    throw ShapeError("decode: expected H_T and r* [k x " + std::to_string(d) + "] and z [1 x " +
                     std::to_string(L) + "], got " + shape_str(H_T.shape()) + ", " +
                     shape_str(r_star.shape()) + ", " + shape_str(z.shape()));
  }
  const std::size_t k = H_T.dim(0);
  Tensor zk = matmul(Tensor::full({k, 1}, 1.0), z);
  Tensor out = reshape(decoder_.forward(concat({H_T, r_star, zk}, 1)), {k, TF, 4});
  Decoded dec;
  dec.mean = slice(out, 2, 0, 2);
  dec.sigma = add_scalar(softplus(slice(out, 2, 2, 2)), kDecoderSigmaMin);
  return dec;
}

ElboResult GranpModel::elbo_loss(const data::EpisodeBatch& batch, const Tensor& noise) const {
  if (batch.targets.empty()) throw ValueError("elbo: no targets");
  if (batch.context.empty()) throw ValueError("elbo: empty context");
  for (const auto& t : batch.targets) {
    if (!t.has_future()) {
      throw ValueError("elbo: target scene with ego " + std::to_string(t.ego_id) +
                       " has no future");
    }
  }
  for (std::size_t c : batch.context) {
    if (c >= batch.targets.size()) throw ValueError("elbo: context index out of range");
  }
  const std::size_t k = batch.targets.size();
  const auto prepared = prepare(batch.targets, true);
  const auto enc = encode(prepared, true);
  const Tensor H_C = select_rows(enc.H, batch.context);
  const Tensor r_C = select_rows(enc.r, batch.context);
  const Tensor s_C = select_rows(enc.s, batch.context);

  const Tensor r_star = deterministic_path(enc.H, H_C, r_C).values;
  const auto posterior = latent_path(enc.s);
  const auto prior = latent_path(s_C);
  const Tensor z = sample_latent(posterior, noise);
  const auto dec = decode(enc.H, r_star, z);

  const Tensor nll = gaussian_nll(prepared.future, dec.mean, dec.sigma);
  const Tensor kl = kl_diag(posterior, prior);
  const double norm = 1.0 / static_cast<double>(k * config_.future_steps);
  ElboResult r;
  r.loss = scale(add(nll, kl), norm);
  r.recon_nll = nll.item() * norm;
  r.kl = kl.item();
  return r;
}

std::vector<Prediction> GranpModel::predict(std::span<const TrajectoryScene> queries,
                                            std::span<const TrajectoryScene> context,
                                            const std::vector<std::vector<double>>& noise) const {
  if (context.empty()) throw ValueError("predict: empty context");
  if (noise.empty()) throw ValueError("predict: need at least one latent sample");
  if (queries.empty()) return {};
  const std::size_t L = config_.latent_dim(), TF = config_.future_steps;
  for (const auto& row : noise) {
    if (row.size() != L) {
      throw ShapeError("predict: noise rows must have " + std::to_string(L) + " entries");
    }
  }
  Tape::Scope no_recording(nullptr);
  const auto pc = prepare(context, true);
  const auto ec = encode(pc, true);
  const auto pq = prepare(queries, false);
  const auto eq = encode(pq, false);
  const Tensor r_star = deterministic_path(eq.H, ec.H, ec.r).values;
  const auto prior = latent_path(ec.s);

  const std::size_t k = queries.size(), S = noise.size();
  const auto& mean = stats_.mean();
  const auto& sd = stats_.stddev();
  std::vector<Prediction> out(k);
  for (auto& p : out) p.samples.assign(S, std::vector<Position>(TF));
  // sums of decoder variance across samples, normalized units
  std::vector<double> var_x(k * TF, 0.0), var_y(k * TF, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    const Tensor z = sample_latent(prior, Tensor::from_values({1, L}, noise[s]));
    const auto dec = decode(eq.H, r_star, z);
    const auto mu = dec.mean.to_vector();
    const auto sg = dec.sigma.to_vector();
    for (std::size_t q = 0; q < k; ++q) {
      const Position o = pq.origins[q];
      for (std::size_t t = 0; t < TF; ++t) {
        const std::size_t i = (q * TF + t) * 2;
        out[q].samples[s][t] = {mu[i] * sd[0] + mean[0] + o.x, mu[i + 1] * sd[1] + mean[1] + o.y};
        var_x[q * TF + t] += sg[i] * sg[i];
        var_y[q * TF + t] += sg[i + 1] * sg[i + 1];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(S);
  for (std::size_t q = 0; q < k; ++q) {
    auto& p = out[q];
    p.mean.resize(TF);
    p.sigma.resize(TF);
    p.lower.resize(TF);
    p.upper.resize(TF);
    for (std::size_t t = 0; t < TF; ++t) {
      double mx = 0, my = 0;
      for (std::size_t s = 0; s < S; ++s) {
        mx += p.samples[s][t].x;
        my += p.samples[s][t].y;
      }
      mx *= inv;
      my *= inv;
      double spread_x = 0, spread_y = 0;
      for (std::size_t s = 0; s < S; ++s) {
        spread_x += (p.samples[s][t].x - mx) * (p.samples[s][t].x - mx);
        spread_y += (p.samples[s][t].y - my) * (p.samples[s][t].y - my);
      }
      // law of total variance: mean decoder variance plus spread of the means
      const double sx = std::sqrt(var_x[q * TF + t] * inv * sd[0] * sd[0] + spread_x * inv);
      const double sy = std::sqrt(var_y[q * TF + t] * inv * sd[1] * sd[1] + spread_y * inv);
      p.mean[t] = {mx, my};
      p.sigma[t] = {sx, sy};
      p.lower[t] = {mx - kCiZ * sx, my - kCiZ * sy};
      p.upper[t] = {mx + kCiZ * sx, my + kCiZ * sy};
    }
  }
  return out;
}

std::vector<Prediction> GranpModel::predict(std::span<const TrajectoryScene> queries,
                                            std::span<const TrajectoryScene> context,
                                            std::size_t samples, std::uint64_t seed) const {
  if (samples == 0) throw ValueError("predict: need at least one latent sample");
  std::mt19937_64 rng(seed);
  return predict(queries, context, standard_normal(samples, config_.latent_dim(), rng));
}

// ---------------------------------------------------------------------------

Tensor sample_latent(const LatentDistribution& dist, const Tensor& noise) {
  if (noise.shape() != dist.mu.shape()) {
    throw ShapeError("sample_latent: noise " + shape_str(noise.shape()) + " does not match " +
                     shape_str(dist.mu.shape()));
  }
  return add(dist.mu, mul(dist.sigma, noise));
}

Tensor kl_diag(const LatentDistribution& q, const LatentDistribution& p) {
  if (q.mu.shape() != p.mu.shape() || q.sigma.shape() != p.sigma.shape() ||
      q.mu.shape() != q.sigma.shape()) {
    throw ShapeError("kl_diag: distributions have different dimensions");
  }
  for (const Tensor* s : {&q.sigma, &p.sigma}) {
    for (double v : s->to_vector()) {
      if (!(v > 0.0)) throw ValueError("kl_diag: standard deviations must be positive");
    }
  }
  Tensor diff = sub(q.mu, p.mu);
  Tensor ratio = div(add(square(q.sigma), square(diff)), scale(square(p.sigma), 2.0));
  Tensor terms = add_scalar(add(sub(log(p.sigma), log(q.sigma)), ratio), -0.5);
  return sum(terms);
}

Tensor gaussian_nll(const Tensor& y, const Tensor& mean, const Tensor& sigma) {
  if (y.shape() != mean.shape() || y.shape() != sigma.shape()) {
    throw ShapeError("gaussian_nll: shapes " + shape_str(y.shape()) + ", " +
                     shape_str(mean.shape()) + ", " + shape_str(sigma.shape()) + " differ");
  }
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor zsq = square(div(sub(y, mean), sigma));
  return sum(add_scalar(add(log(sigma), scale(zsq, 0.5)), half_log_2pi));
}

std::vector<std::vector<double>> standard_normal(std::size_t rows, std::size_t cols,
                                                 std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<std::vector<double>> out(rows, std::vector<double>(cols));
  for (auto& r : out)
    for (auto& v : r) v = dist(rng);
  return out;
}

// ---------------------------------------------------------------------------

AttentionExport export_attention(const GranpModel& model, const TrajectoryScene& scene) {
  Tape::Scope no_recording(nullptr);
  std::vector<TrajectoryScene> one{scene};
  const auto p = model.prepare(one, false);
  const auto enc = model.encode(p, false, true);
  const std::size_t T = model.config().history_steps;
  const std::size_t n = p.max_nodes;
  const std::size_t g = T - 1;  // B = 1

  AttentionExport out;
  out.ego_id = scene.ego_id;
  out.node_ids = p.node_ids[0];
  for (const auto& layer : enc.attention) {
    std::vector<std::vector<double>> heads;
    for (const auto& a : layer) {
      const auto v = a.to_vector();
      heads.emplace_back(v.begin() + static_cast<long>(g * n * n),
                         v.begin() + static_cast<long>(g * n * n + n));
    }
    out.layers.push_back(std::move(heads));
  }
  const auto& last = out.layers.back();
  std::vector<std::pair<int, double>> ranked;
  for (std::size_t j = 1; j < n; ++j) {
    double avg = 0;
    for (const auto& h : last) avg += h[j];
    ranked.emplace_back(out.node_ids[j], avg / static_cast<double>(last.size()));
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > 3) ranked.resize(3);
  out.top = std::move(ranked);
  return out;
}

}  // namespace granp::model
