#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "granp/error.hpp"
#include "granp/train.hpp"

namespace granp::train {

using ad::Precision;
using ad::Tape;
using ad::Tensor;

AdamState::AdamState(const ad::ParameterSet& params, double learning_rate) : lr(learning_rate) {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValueError("adam: learning rate must be positive and finite");
  }
  for (const auto& p : params.items()) {
    m[p.name].assign(p.value.numel(), 0.0);
    v[p.name].assign(p.value.numel(), 0.0);
  }
}

namespace {

template <typename T>
void adam_update(std::span<T> theta, std::span<const T> g, std::vector<double>& m,
                 std::vector<double>& v, const AdamState& s, double c1, double c2) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double gi = static_cast<double>(g[i]);
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    theta[i] = static_cast<T>(static_cast<double>(theta[i]) - s.lr * m_hat / (std::sqrt(v_hat) + s.eps));
  }
}

}  // namespace

void adam_step(AdamState& state, ad::ParameterSet& params, const ad::GradientMap& grads) {
  for (const auto& p : params.items()) {
    auto it = grads.find(p.name);
    if (it == grads.end() || !it->second.defined()) {
      throw ValueError("adam: no gradient for parameter " + p.name);
    }
    if (it->second.shape() != p.value.shape()) {
      throw ValueError("adam: gradient for " + p.name + " has shape " +
                       ad::shape_str(it->second.shape()) + ", parameter has " +
                       ad::shape_str(p.value.shape()));
    }
    if (state.m[p.name].size() != p.value.numel() || state.v[p.name].size() != p.value.numel()) {
      throw ValueError("adam: moment buffers for " + p.name + " do not match the parameter");
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& p : params.items()) {
    const Tensor& g = grads.at(p.name);
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    if (p.value.precision() == Precision::f64) {
      adam_update<double>(p.value.data<double>(), g.data<double>(), m, v, state, c1, c2);
    } else {
      adam_update<float>(p.value.data<float>(), g.data<float>(), m, v, state, c1, c2);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const ad::ParameterSet& params) {
  Snapshot s;
  for (const auto& p : params.items()) s.push_back(p.value.to_vector());
  return s;
}

void restore(ad::ParameterSet& params, const Snapshot& s) {
  auto& items = params.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t k = 0; k < s[i].size(); ++k) items[i].value.set(k, s[i][k]);
  }
}

std::vector<TrajectoryScene> pick(std::span<const TrajectoryScene> scenes,
                                  std::span<const std::size_t> idx) {
  std::vector<TrajectoryScene> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(scenes[i]);
  return out;
}

// Batches of `size`; a tail too small to form an episode joins the last batch.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order,
                                                   std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += size) {
    std::vector<std::size_t> b(order.begin() + i,
                               order.begin() + std::min(order.size(), i + size));
    if (b.size() < 3 && !out.empty()) {
      out.back().insert(out.back().end(), b.begin(), b.end());
    } else {
      out.push_back(std::move(b));
    }
  }
  return out;
}

}  // namespace

TrainResult train(std::span<const TrajectoryScene> scenes, const TrainOptions& opt) {
  opt.config.validate();
  if (opt.epochs == 0) throw ValueError("train: epochs must be positive");
  if (opt.batch_size < 3) throw ValueError("train: batch size must be at least 3");
  if (opt.reference_size == 0) throw ValueError("train: reference context size must be positive");
  if (opt.validation_samples == 0) throw ValueError("train: validation needs latent samples");
  if (!(opt.validation_fraction > 0.0 && opt.validation_fraction < 1.0)) {
    throw ValueError("train: validation fraction must be in (0, 1)");
  }
  const std::size_t n = scenes.size();
  for (std::size_t i = 0; i < n; ++i) {
    data::validate_scene(scenes[i], true, opt.config.history_steps, opt.config.future_steps);
  }
  const auto n_val = static_cast<std::size_t>(
      std::max(1.0, std::round(opt.validation_fraction * static_cast<double>(n))));
  if (n < n_val + 3) {
    throw ValueError("train: need at least " + std::to_string(n_val + 3) + " scenes, got " +
                     std::to_string(n));
  }

  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
  const auto train_set = pick(scenes, train_idx);
  const auto val_set = pick(scenes, val_idx);

  std::vector<TrajectoryScene> framed;
  for (const auto& s : train_set) framed.push_back(data::to_ego_frame(s));
  GranpModel model(opt.config, rng());
  model.set_normalization(data::NormalizationStats::fit(framed));

  std::vector<std::size_t> ref_order(train_set.size());
  std::iota(ref_order.begin(), ref_order.end(), std::size_t{0});
  std::shuffle(ref_order.begin(), ref_order.end(), rng);
  ref_order.resize(std::min(opt.reference_size, ref_order.size()));
  std::vector<TrajectoryScene> reference = pick(train_set, ref_order);

  // same latent draws at every validation so epochs compare like for like
  const std::uint64_t val_seed = rng();
  const std::size_t L = opt.config.latent_dim();
  AdamState adam(model.parameters(), opt.lr);

  Snapshot best_params;
  double best_nll = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0, best_epoch = 0;
  std::vector<EpochRecord> history;
  std::vector<std::size_t> train_order(train_set.size());
  std::iota(train_order.begin(), train_order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(train_order.begin(), train_order.end(), rng);
    const auto batches = make_batches(train_order, opt.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto batch_scenes = pick(train_set, batches[b]);
      const auto episode = data::make_episode(batch_scenes, rng());
      const auto noise_row = model::standard_normal(1, L, rng);
      const Tensor noise = Tensor::from_values({1, L}, noise_row[0]);

      Tape tape;
      model::ElboResult elbo;
      const std::string where =
          "at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1);
      try {
        Tape::Scope scope(&tape);
        elbo = model.elbo_loss(episode, noise);
      } catch (const ValueError& e) {
        // Inputs were validated above, so a domain error here means NaN or
        // inf reached a log or similar op: the run has diverged.
        throw NumericError("train: non-finite values " + where + " (" + e.what() + ")");
      }
      const double loss = elbo.loss.item();
      if (!std::isfinite(loss) || !std::isfinite(elbo.kl) || !std::isfinite(elbo.recon_nll)) {
        throw NumericError("train: non-finite loss " + where);
      }
      const auto grads = ad::backward(tape, elbo.loss, model.parameters());
      adam_step(adam, model.parameters(), grads);
      rec.loss += loss;
      rec.recon_nll += elbo.recon_nll;
      rec.kl += elbo.kl;
    }
    const double nb = static_cast<double>(batches.size());
    rec.loss /= nb;
    rec.recon_nll /= nb;
    rec.kl /= nb;

    const auto preds = model.predict(val_set, reference, opt.validation_samples, val_seed);
    rec.val_nll = mean_nll(preds, val_set);
    if (!std::isfinite(rec.val_nll)) {
      throw NumericError("train: non-finite validation NLL at epoch " + std::to_string(epoch));
    }
    history.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);

    if (rec.val_nll < best_nll) {
      best_nll = rec.val_nll;
      best_params = snapshot(model.parameters());
      best_epoch = epoch;
      since_best = 0;
    } else if (opt.patience > 0 && ++since_best >= opt.patience) {
      break;
    }
  }
  restore(model.parameters(), best_params);
  return TrainResult{Checkpoint{std::move(model), std::move(reference)}, std::move(history),
                     best_epoch, std::move(train_idx), std::move(val_idx)};
}

void write_loss_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(9);
  out << "epoch,loss,recon_nll,kl\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.loss << ',' << r.recon_nll << ',' << r.kl << '\n';
  }
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace granp::train
