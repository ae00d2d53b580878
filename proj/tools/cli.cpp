#include "granp/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "granp/error.hpp"
#include "granp/gradcheck_suite.hpp"
#include "granp/train.hpp"

namespace granp::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  // synth
  std::size_t scenes = 100;
  double lane_keep = 0.7;
  // shared
  std::uint64_t seed = 0;
  std::string data, ckpt, out, report;
  // train
  std::size_t epochs = 200, batch_size = 32, hidden = 64, heads = 4, latent = 0, patience = 0;
  std::size_t reference = 64, val_samples = 10;
  double lr = 5e-4;
  // predict / attention
  long long scene = -1;
  std::size_t samples = 30;
};

nlohmann::json xy(const data::Position& p) { return nlohmann::json::array({p.x, p.y}); }

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  f << j.dump(1) << '\n';
  if (!f) throw IoError("cannot write " + path.string());
}

const data::TrajectoryScene& pick_scene(const std::vector<data::TrajectoryScene>& scenes,
                                        long long index) {
  if (index < 0 || static_cast<std::size_t>(index) >= scenes.size()) {
    throw UsageError("--scene " + std::to_string(index) + " is outside [0, " +
                     std::to_string(scenes.size()) + ")");
  }
  return scenes[static_cast<std::size_t>(index)];
}

int cmd_synth(const Options& o, std::ostream& out) {
  const auto scenes = data::synth_scenes(o.scenes, o.seed, o.lane_keep);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  data::write_scene_archive(dir / "scenes.json", scenes);
  out << "wrote " << scenes.size() << " scenes to " << (dir / "scenes.json").string() << '\n';
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const auto scenes = data::load_scenes(o.data);
  train::TrainOptions opt;
  opt.config.hidden = o.hidden;
  opt.config.heads = o.heads;
  opt.config.latent = o.latent;
  opt.epochs = o.epochs;
  opt.lr = o.lr;
  opt.batch_size = o.batch_size;
  opt.seed = o.seed;
  opt.patience = o.patience;
  opt.reference_size = o.reference;
  opt.validation_samples = o.val_samples;
  opt.on_epoch = [&](const train::EpochRecord& r) {
    err << "epoch " << r.epoch << "  loss " << r.loss << "  recon_nll " << r.recon_nll << "  kl "
        << r.kl << "  val_nll " << r.val_nll << '\n';
  };
  const auto result = train::train(scenes, opt);
  const fs::path dir(o.out);
  train::save_checkpoint(result.best, dir);
  train::write_loss_csv(dir / "loss.csv", result.history);
  out << "best epoch " << result.best_epoch << " of " << result.history.size()
      << ", validation NLL " << result.history[result.best_epoch - 1].val_nll << '\n'
      << "checkpoint written to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto ckpt = train::load_checkpoint(o.ckpt);
  const auto scenes = data::load_scenes(o.data);
  const auto report = train::evaluate(ckpt, scenes, o.samples, o.seed);
  const auto j = report.to_json();
  write_json(o.report, j);
  out << j["rmse_m"].dump() << '\n' << j["nll_nats"].dump() << '\n';
  return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
  const auto scenes = data::load_scenes(o.data);
  const auto& scene = pick_scene(scenes, o.scene);
  const auto ckpt = train::load_checkpoint(o.ckpt);
  const std::vector<data::TrajectoryScene> one{scene};
  const auto pred = ckpt.predict(one, o.samples, o.seed).front();

  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t t = 0; t < pred.mean.size(); ++t) {
    nlohmann::json s{{"step", t + 1},
                     {"t_s", static_cast<double>(t + 1) * data::kStepSeconds},
                     {"mean", xy(pred.mean[t])},
                     {"sigma", xy(pred.sigma[t])},
                     {"lower", xy(pred.lower[t])},
                     {"upper", xy(pred.upper[t])}};
    if (scene.has_future() && t < scene.future.size()) s["truth"] = xy(scene.future[t]);
    steps.push_back(std::move(s));
  }
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& traj : pred.samples) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : traj) pts.push_back(xy(p));
    samples.push_back(std::move(pts));
  }
  nlohmann::json history = nlohmann::json::array();
  for (const auto& st : scene.ego_history()) history.push_back(nlohmann::json::array({st.x, st.y}));
  write_json(o.out, {{"scene", o.scene},
                     {"ego_id", scene.ego_id},
                     {"interval_z", model::kCiZ},
                     {"history", history},
                     {"steps", steps},
                     {"samples", samples}});
  out << "wrote prediction for scene " << o.scene << " to " << o.out << '\n';
  return kExitOk;
}

int cmd_attention(const Options& o, std::ostream& out) {
  const auto scenes = data::load_scenes(o.data);
  const auto& scene = pick_scene(scenes, o.scene);
  const auto ckpt = train::load_checkpoint(o.ckpt);
  const auto a = model::export_attention(ckpt.model, scene);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    layers.push_back({{"layer", l}, {"heads", a.layers[l]}});
  }
  nlohmann::json top = nlohmann::json::array();
  for (const auto& [id, w] : a.top) top.push_back({{"id", id}, {"weight", w}});
  write_json(o.out, {{"scene", o.scene},
                     {"ego_id", a.ego_id},
                     {"node_ids", a.node_ids},
                     {"layers", layers},
                     {"top", top}});
  out << "wrote attention for scene " << o.scene << " to " << o.out << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  out << suite::format_header() << '\n';
  const auto rows = suite::run_gradcheck_suite(o.seed, [&](const suite::SuiteRow& r) {
    out << suite::format_row(r) << std::endl;
  });
  const auto failed = std::count_if(rows.begin(), rows.end(),
                                    [](const auto& r) { return !r.passed(); });
  double seconds = 0;
  for (const auto& r : rows) seconds += r.seconds;
  out << rows.size() - static_cast<std::size_t>(failed) << "/" << rows.size()
      << " rows below " << suite::kGradTolerance << " (h = " << suite::kGradStep << ", "
      << seconds << " s)\n";
  if (failed > 0) {
    out << "floor_rat <= 1 means every entry is within tolerance plus the rounding floor of the "
           "difference quotient\n";
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trajectory prediction with graph attention and neural processes", "granp"};
  app.require_subcommand(1);
  Options o;
  const auto hidden_set = CLI::IsMember({16, 32, 64, 128});
  const auto heads_set = CLI::IsMember({2, 4, 8});

  auto* synth = app.add_subcommand("synth", "generate synthetic highway scenes");
  synth->add_option("--scenes", o.scenes, "number of scenes")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", o.seed, "random seed");
  synth->add_option("--lane-keep", o.lane_keep, "fraction of lane-keeping egos")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--out", o.out, "output directory")->required();

  auto* trn = app.add_subcommand("train", "train a model and write a checkpoint");
  trn->add_option("--data", o.data, "scene archive, directory or tracks csv")->required();
  trn->add_option("--out", o.out, "checkpoint directory")->required();
  trn->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
  trn->add_option("--lr", o.lr)->check(CLI::PositiveNumber);
  trn->add_option("--batch-size", o.batch_size)->check(CLI::Range(3, 1 << 20));
  trn->add_option("--hidden", o.hidden)->check(hidden_set);
  trn->add_option("--heads", o.heads)->check(heads_set);
  trn->add_option("--latent", o.latent, "latent size, 0 for the hidden size");
  trn->add_option("--patience", o.patience, "epochs without improvement before stopping, 0 off");
  trn->add_option("--reference", o.reference, "reference context pairs kept with the checkpoint")
      ->check(CLI::PositiveNumber);
  trn->add_option("--val-samples", o.val_samples, "latent samples for validation")
      ->check(CLI::PositiveNumber);
  trn->add_option("--seed", o.seed);

  auto* ev = app.add_subcommand("eval", "RMSE and NLL at 1..5 s");
  ev->add_option("--data", o.data)->required();
  ev->add_option("--ckpt", o.ckpt)->required();
  ev->add_option("--report", o.report, "EvalReport JSON path")->required();
  ev->add_option("--samples", o.samples)->check(CLI::PositiveNumber);
  ev->add_option("--seed", o.seed);

  auto* pr = app.add_subcommand("predict", "predictive distribution for one scene");
  pr->add_option("--data", o.data)->required();
  pr->add_option("--ckpt", o.ckpt)->required();
  pr->add_option("--scene", o.scene, "archive index")->required();
  pr->add_option("--samples", o.samples)->check(CLI::PositiveNumber);
  pr->add_option("--out", o.out)->required();
  pr->add_option("--seed", o.seed);

  auto* at = app.add_subcommand("attention", "ego attention weights for one scene");
  at->add_option("--data", o.data)->required();
  at->add_option("--ckpt", o.ckpt)->required();
  at->add_option("--scene", o.scene, "archive index")->required();
  at->add_option("--out", o.out)->required();

  auto* gc = app.add_subcommand("gradcheck", "64-bit finite-difference suite");
  gc->add_option("--seed", o.seed);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    ad::set_precision(ad::precision_from_env());
    if (synth->parsed()) return cmd_synth(o, out);
    if (trn->parsed()) return cmd_train(o, out, err);
    if (ev->parsed()) return cmd_eval(o, out);
    if (pr->parsed()) return cmd_predict(o, out);
    if (at->parsed()) return cmd_attention(o, out);
    if (gc->parsed()) return cmd_gradcheck(o, out);
  } catch (const Error& e) {
    err << "granp: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::usage: return kExitUsage;
      case ErrorKind::numeric: return kExitNumeric;
      default: return kExitData;
    }
  } catch (const std::exception& e) {
    err << "granp: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace granp::cli
