#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ldct/benchmark.hpp"
#include "ldct/checkpoint.hpp"
#include "ldct/config.hpp"
#include "ldct/data.hpp"
#include "ldct/train.hpp"

namespace ldct {

using LogFn = std::function<void(const std::string&)>;

/// Table label of a trained reconstruction network.
std::string base_label();
std::string task_adaptive_label(double alpha);
std::string joint_label(double c);

/// Each stage writes its artifacts plus the effective `config.json` into `out`.
DatasetManifest run_simulate(const RunConfig& config, const std::filesystem::path& out,
                             const LogFn& log = {});

/// Writes `seg.ckpt` and `report.json`.
TrainedModel run_pretrain(const RunConfig& config, const std::filesystem::path& data_dir,
                          const std::filesystem::path& out, const LogFn& log = {});

/// Writes `recon.ckpt` and `report.json`. Uses config train.alpha. A non-empty
/// `initial_recon` names a reconstruction checkpoint to start from.
TrainedModel run_task_adaptive(const RunConfig& config, const std::filesystem::path& data_dir,
                               const std::filesystem::path& task_checkpoint,
                               const std::filesystem::path& out, const LogFn& log = {},
                               const std::filesystem::path& initial_recon = {});

/// Writes `recon.ckpt`, `task.ckpt` and `report.json`. Uses config train.c.
JointModels run_joint(const RunConfig& config, const std::filesystem::path& data_dir,
                      const std::filesystem::path& task_checkpoint,
                      const std::filesystem::path& out, const LogFn& log = {},
                      const std::filesystem::path& initial_recon = {});

/// Benchmarks Low-dose, FBP, the reference denoiser, every reconstruction
/// checkpoint in `recon_checkpoints` and Full-dose on the test split, then
/// renders the report into `out`. Rows follow the published table order.
BenchmarkResult run_evaluate(const RunConfig& config, const std::filesystem::path& data_dir,
                             const std::filesystem::path& seg_checkpoint,
                             const std::vector<std::filesystem::path>& recon_checkpoints,
                             const std::filesystem::path& out, const LogFn& log = {});

/// Re-renders tables from an existing `results.json`.
void run_report(const std::filesystem::path& results_json, const std::filesystem::path& out);

/// Overrides used by `repro-toy`: 500 training and 100 test phantoms.
void apply_repro_toy_preset(RunConfig& config);

/// Whole desk-scale experiment: dataset, pretraining, the configured
/// task-adaptive and joint runs, evaluation and report.
BenchmarkResult run_repro_toy(const RunConfig& config, const std::filesystem::path& out,
                              const LogFn& log = {});

}  // namespace ldct
