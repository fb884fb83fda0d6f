#include "ldct/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>

#include "ldct/errors.hpp"
#include "ldct/report.hpp"

namespace ldct {
namespace {

namespace fs = std::filesystem;

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void say(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

EpochCallback epoch_logger(const LogFn& log, const std::string& stage) {
  if (!log) return {};
  return [log, stage](const EpochLog& e) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s: epoch %d train %.6f validation %.6f lr %.2e",
                  stage.c_str(), e.epoch, e.train_loss, e.validation_loss, e.learning_rate);
    log(buf);
  };
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void save_trained(const fs::path& path, const ModelHandle& model, TrainReport& report,
                  nlohmann::json extra) {
  extra["procedure"] = report.procedure;
  extra["best_epoch"] = report.best_epoch;
  extra["best_validation_loss"] = report.best_validation_loss;
  save_checkpoint(path, model, {static_cast<std::uint64_t>(report.steps),
                                report.loss_curve_digest(), std::move(extra)});
  report.checkpoint = path.filename().string();
}

void check_dataset_matches(const RunConfig& config, const DatasetManifest& manifest) {
  if (manifest.image_size != config.geometry().image_size) {
    throw ConfigError("dataset image size " + std::to_string(manifest.image_size) +
                      " differs from geometry.image_size " +
                      std::to_string(config.geometry().image_size));
  }
}

ModelHandle load_segmenter(const fs::path& path) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.model.config().head != Head::kClassProbs) {
    throw UsageError(path.string() + " is not a segmentation checkpoint");
  }
  ckpt.model.set_frozen(true);
  return std::move(ckpt.model);
}

/// Position of a row in the published tables.
std::pair<int, double> table_rank(const nlohmann::json& extra) {
  const std::string kind = extra.value("kind", "");
  if (kind == "task_adaptive") {
    const double alpha = extra.value("alpha", 0.0);
    return alpha == 0.0 ? std::pair{0, 0.0} : std::pair{2, alpha};
  }
  if (kind == "joint") return {1, extra.value("c", 0.0)};
  return {3, 0.0};
}

}  // namespace

std::string base_label() { return "Base U-Net"; }
std::string task_adaptive_label(double alpha) {
  return alpha == 0.0 ? base_label() : "Task-adaptive alpha=" + number(alpha);
}
std::string joint_label(double c) { return "Joint C=" + number(c); }

DatasetManifest run_simulate(const RunConfig& config, const fs::path& out, const LogFn& log) {
  const BuildOptions options = config.build_options();
  say(log, "simulate: building " + std::to_string(options.count) + " samples into " + out.string());
  DatasetManifest manifest = build_dataset(options, out);
  config.echo(out);
  return manifest;
}

TrainedModel run_pretrain(const RunConfig& config, const fs::path& data_dir, const fs::path& out,
                          const LogFn& log) {
  const TrainConfig tc = config.pretrain();
  const UNetConfig net = config.seg_net();
  const DatasetManifest manifest = DatasetManifest::load(data_dir);
  check_dataset_matches(config, manifest);
  const auto train = load_all(manifest, Split::kTrain);
  fs::create_directories(out);
  config.echo(out);
  TrainedModel result = pretrain_segmentation(train, net, tc, epoch_logger(log, "pretrain"));
  save_trained(out / "seg.ckpt", result.model, result.report, {{"kind", "segmentation"}});
  write_json(out / "report.json", result.report);
  return result;
}

namespace {

std::optional<ModelHandle> load_initial_recon(const fs::path& path) {
  if (path.empty()) return std::nullopt;
  return load_checkpoint(path).model;
}

}  // namespace

TrainedModel run_task_adaptive(const RunConfig& config, const fs::path& data_dir,
                               const fs::path& task_checkpoint, const fs::path& out,
                               const LogFn& log, const fs::path& initial_recon) {
  const TrainConfig tc = config.train();
  const UNetConfig net = config.recon_net();
  const ModelHandle task = load_segmenter(task_checkpoint);
  const DatasetManifest manifest = DatasetManifest::load(data_dir);
  check_dataset_matches(config, manifest);
  const auto train = load_all(manifest, Split::kTrain);
  fs::create_directories(out);
  config.echo(out);
  const std::string label = task_adaptive_label(tc.alpha);
  const auto init = load_initial_recon(initial_recon);
  TrainedModel result =
      train_task_adaptive(train, task, net, tc, epoch_logger(log, label), init ? &*init : nullptr);
  save_trained(out / "recon.ckpt", result.model, result.report,
               {{"kind", "task_adaptive"}, {"alpha", tc.alpha}, {"method", label}});
  write_json(out / "report.json", result.report);
  return result;
}

JointModels run_joint(const RunConfig& config, const fs::path& data_dir,
                      const fs::path& task_checkpoint, const fs::path& out, const LogFn& log,
                      const fs::path& initial_recon) {
  const TrainConfig tc = config.train();
  const UNetConfig net = config.recon_net();
  const ModelHandle pretrained = load_segmenter(task_checkpoint);
  const DatasetManifest manifest = DatasetManifest::load(data_dir);
  check_dataset_matches(config, manifest);
  const auto train = load_all(manifest, Split::kTrain);
  fs::create_directories(out);
  config.echo(out);
  const std::string label = joint_label(tc.c);
  const auto init = load_initial_recon(initial_recon);
  JointModels result =
      train_joint(train, pretrained, net, tc, epoch_logger(log, label), init ? &*init : nullptr);
  const nlohmann::json extra = {{"kind", "joint"}, {"c", tc.c}, {"method", label}};
  save_checkpoint(out / "task.ckpt", result.task,
                  {static_cast<std::uint64_t>(result.report.steps),
                   result.report.loss_curve_digest(),
                   {{"kind", "joint_task"}, {"c", tc.c}}});
  save_trained(out / "recon.ckpt", result.recon, result.report, extra);
  write_json(out / "report.json", result.report);
  return result;
}

BenchmarkResult run_evaluate(const RunConfig& config, const fs::path& data_dir,
                             const fs::path& seg_checkpoint,
                             const std::vector<fs::path>& recon_checkpoints, const fs::path& out,
                             const LogFn& log) {
  const EvalSettings eval = config.eval();
  const ModelHandle seg = load_segmenter(seg_checkpoint);
  const DatasetManifest manifest = DatasetManifest::load(data_dir);
  const auto test = load_all(manifest, Split::kTest);
  if (test.empty()) throw ConfigError("evaluate: the dataset has no test samples");

  struct Network {
    std::pair<int, double> rank;
    std::string label;
    std::shared_ptr<const ModelHandle> model;
  };
  std::vector<Network> networks;
  for (const auto& path : recon_checkpoints) {
    LoadedCheckpoint ckpt = load_checkpoint(path);
    if (ckpt.model.config().head != Head::kUnitSquash) {
      throw UsageError(path.string() + " is not a reconstruction checkpoint");
    }
    const std::string label = ckpt.meta.extra.value("method", path.parent_path().filename().string());
    networks.push_back({table_rank(ckpt.meta.extra), label,
                        std::make_shared<const ModelHandle>(std::move(ckpt.model))});
  }
  std::stable_sort(networks.begin(), networks.end(),
                   [](const Network& a, const Network& b) { return a.rank < b.rank; });

  std::vector<MethodAdapter> methods = {low_dose_adapter(), fbp_adapter(manifest.geometry, eval.fbp_filter),
                                        denoiser_adapter(eval.denoiser)};
  for (const auto& n : networks) methods.push_back(network_adapter(n.label, n.model));
  methods.push_back(full_dose_adapter());

  BenchmarkOptions options;
  options.roi_radius = eval.roi_radius;
  options.workers = config.workers();
  for (int i = 0; i < std::min<int>(eval.gallery_count, static_cast<int>(test.size())); ++i) {
    options.gallery_ids.push_back(test[i].sample_id);
  }
  say(log, "evaluate: " + std::to_string(methods.size()) + " methods on " +
               std::to_string(test.size()) + " test samples");
  BenchmarkResult result = run_benchmark(methods, test, seg, options);
  fs::create_directories(out);
  config.echo(out);
  render_report(result, out);
  return result;
}

void run_report(const fs::path& results_json, const fs::path& out) {
  std::ifstream in(results_json);
  if (!in) throw UsageError("cannot read " + results_json.string());
  nlohmann::json results;
  try {
    in >> results;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(results_json.string() + ": " + e.what());
  }
  render_tables(results, out);
}

void apply_repro_toy_preset(RunConfig& config) {
  config.merge({{"data", {{"count", 600}, {"split_ratio", 500.0 / 600.0}}},
                {"noise", {{"photon_count", 1024}}},
                {"phantom", {{"tumor_band", {0.42, 0.46}}}},
                {"pretrain", {{"max_epochs", 20}}},
                {"train", {{"max_epochs", 20}}},
                {"repro", {{"warm_start", true}}}});
}

BenchmarkResult run_repro_toy(const RunConfig& config, const fs::path& out, const LogFn& log) {
  config.validate();
  const ReproSettings repro = config.repro();
  fs::create_directories(out);
  config.echo(out);

  const fs::path data_dir = out / "dataset";
  run_simulate(config, data_dir, log);
  run_pretrain(config, data_dir, out / "pretrain", log);
  const fs::path seg_ckpt = out / "pretrain" / "seg.ckpt";

  // With warm_start the alpha = 0 model trains first and seeds every other run.
  std::vector<double> alphas = repro.alphas;
  std::stable_partition(alphas.begin(), alphas.end(), [](double a) { return a == 0.0; });
  fs::path base_ckpt;
  std::vector<fs::path> checkpoints;
  for (double alpha : alphas) {
    RunConfig run = config;
    run.set_json("train.alpha", alpha);
    const fs::path dir = out / ("task_adaptive_alpha_" + number(alpha));
    run_task_adaptive(run, data_dir, seg_ckpt, dir, log, alpha == 0.0 ? fs::path() : base_ckpt);
    if (alpha == 0.0 && repro.warm_start) base_ckpt = dir / "recon.ckpt";
    checkpoints.push_back(dir / "recon.ckpt");
  }
  for (double c : repro.joint_c) {
    RunConfig run = config;
    run.set_json("train.c", c);
    const fs::path dir = out / ("joint_c_" + number(c));
    run_joint(run, data_dir, seg_ckpt, dir, log, base_ckpt);
    checkpoints.push_back(dir / "recon.ckpt");
  }
  return run_evaluate(config, data_dir, seg_ckpt, checkpoints, out, log);
}

}  // namespace ldct
