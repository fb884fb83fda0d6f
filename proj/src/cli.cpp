#include "ldct/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "ldct/config.hpp"
#include "ldct/errors.hpp"
#include "ldct/pipeline.hpp"

namespace ldct {
namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
};

struct Options {
  Common common;
  std::string data, task_model, seg_model, results, source, volume_dir, init_recon;
  std::vector<std::string> recon;
  std::optional<int> count;
  std::optional<double> alpha, c, photon_count, split_ratio;
  bool init_from_pretrained = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config field: section.key=value")
      ->allow_extra_args(false);
  cmd->add_option("--out", c.out, "output directory (default: $" + std::string(kOutputRootEnv) +
                                      "/<subcommand>)");
  cmd->add_option("--workers", c.workers, "parallel workers for data and evaluation")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "experiment seed");
}

RunConfig make_config(const std::string& subcommand, const Options& o) {
  RunConfig config;
  if (subcommand == "repro-toy") apply_repro_toy_preset(config);
  if (!o.common.config_file.empty()) config.merge_file(o.common.config_file);
  if (o.common.seed) config.set_json("seed", *o.common.seed);
  if (o.common.workers) config.set_json("workers", *o.common.workers);
  if (o.count) config.set_json("data.count", *o.count);
  if (!o.source.empty()) config.set_json("data.source", o.source);
  if (!o.volume_dir.empty()) config.set_json("data.volume_dir", o.volume_dir);
  if (o.photon_count) config.set_json("noise.photon_count", *o.photon_count);
  if (o.split_ratio) config.set_json("data.split_ratio", *o.split_ratio);
  if (subcommand == "train-base") config.set_json("train.alpha", 0.0);
  if (o.alpha) config.set_json("train.alpha", *o.alpha);
  if (o.c) config.set_json("train.c", *o.c);
  if (o.init_from_pretrained) config.set_json("train.joint_init_from_pretrained", true);
  for (const auto& kv : o.common.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    }
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();
  return config;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task-adaptive low-dose CT reconstruction toolkit", "ldct"};
  app.require_subcommand(1);
  Options o;

  auto* simulate = app.add_subcommand("simulate", "build a paired low/full-dose dataset");
  add_common(simulate, o.common);
  simulate->add_option("--count", o.count, "number of samples")->check(CLI::PositiveNumber);
  simulate->add_option("--source", o.source, "phantom or volumes");
  simulate->add_option("--volume-dir", o.volume_dir, "directory of slab volumes");
  simulate->add_option("--photon-count", o.photon_count, "incident photons per bin");
  simulate->add_option("--split-ratio", o.split_ratio, "training fraction");

  auto* pretrain = app.add_subcommand("pretrain-seg", "pretrain the segmentation network");
  add_common(pretrain, o.common);
  pretrain->add_option("--data", o.data, "dataset directory")->required();

  auto* base = app.add_subcommand("train-base", "train the base network (alpha = 0)");
  auto* adaptive = app.add_subcommand("train-task-adaptive", "task-adaptive reconstruction training");
  for (auto* cmd : {base, adaptive}) {
    add_common(cmd, o.common);
    cmd->add_option("--data", o.data, "dataset directory")->required();
    cmd->add_option("--task-model", o.task_model, "pretrained segmentation checkpoint")->required();
  }
  adaptive->add_option("--alpha", o.alpha, "task weight in [0, 1]");
  adaptive->add_option("--init-recon", o.init_recon, "start from this reconstruction checkpoint");

  auto* joint = app.add_subcommand("train-joint", "joint reconstruction and task training");
  add_common(joint, o.common);
  joint->add_option("--data", o.data, "dataset directory")->required();
  joint->add_option("--task-model", o.task_model,
                    "pretrained segmentation checkpoint (architecture, optional init)")
      ->required();
  joint->add_option("--c", o.c, "interpolation constant in [0, 1]");
  joint->add_flag("--init-from-pretrained", o.init_from_pretrained,
                  "start the task network from the pretrained weights");
  joint->add_option("--init-recon", o.init_recon, "start from this reconstruction checkpoint");

  auto* evaluate = app.add_subcommand("evaluate", "benchmark all methods on the test split");
  add_common(evaluate, o.common);
  evaluate->add_option("--data", o.data, "dataset directory")->required();
  evaluate->add_option("--seg-model", o.seg_model, "pretrained segmentation checkpoint")->required();
  evaluate->add_option("--recon", o.recon, "reconstruction checkpoints");

  auto* report = app.add_subcommand("report", "re-render tables from results.json");
  add_common(report, o.common);
  report->add_option("--results", o.results, "results.json")->required();

  auto* repro = app.add_subcommand("repro-toy", "run the complete desk-scale experiment");
  add_common(repro, o.common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  const fs::path out_dir = o.common.out.empty() ? default_output_root() / name : fs::path(o.common.out);
  const LogFn log = [&err](const std::string& msg) { err << msg << std::endl; };

  try {
    const RunConfig config = make_config(name, o);
    if (name == "simulate") {
      const auto m = run_simulate(config, out_dir, log);
      out << "wrote " << m.samples.size() << " samples (" << m.ids(Split::kTrain).size()
          << " train / " << m.ids(Split::kTest).size() << " test) to " << out_dir.string() << "\n";
    } else if (name == "pretrain-seg") {
      run_pretrain(config, o.data, out_dir, log);
      out << "wrote " << (out_dir / "seg.ckpt").string() << "\n";
    } else if (name == "train-base" || name == "train-task-adaptive") {
      run_task_adaptive(config, o.data, o.task_model, out_dir, log, o.init_recon);
      out << "wrote " << (out_dir / "recon.ckpt").string() << "\n";
    } else if (name == "train-joint") {
      run_joint(config, o.data, o.task_model, out_dir, log, o.init_recon);
      out << "wrote " << (out_dir / "recon.ckpt").string() << " and "
          << (out_dir / "task.ckpt").string() << "\n";
    } else if (name == "evaluate") {
      std::vector<fs::path> recon(o.recon.begin(), o.recon.end());
      run_evaluate(config, o.data, o.seg_model, recon, out_dir, log);
      out << "wrote " << (out_dir / "results.csv").string() << "\n";
    } else if (name == "report") {
      run_report(o.results, out_dir);
      config.echo(out_dir);
      out << "wrote " << (out_dir / "tables.txt").string() << "\n";
    } else if (name == "repro-toy") {
      run_repro_toy(config, out_dir, log);
      out << "wrote " << (out_dir / "results.csv").string() << "\n";
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace ldct
