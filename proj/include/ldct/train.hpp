#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldct/data.hpp"
#include "ldct/unet.hpp"

namespace ldct {

enum class SchedulerKind { kPlateauDecay, kNone };

SchedulerKind parse_scheduler(std::string_view name);
std::string_view scheduler_name(SchedulerKind kind);

struct TrainConfig {
  int max_epochs = 20;
  int batch_size = 8;
  double learning_rate = 1e-3;
  SchedulerKind scheduler = SchedulerKind::kPlateauDecay;
  double scheduler_factor = 0.5;
  int scheduler_patience = 2;
  int early_stop_patience = 5;
  std::uint64_t seed = 0;
  double alpha = 0.5;  ///< task-adaptive weight
  double c = 0.5;      ///< joint-training interpolation constant
  double validation_fraction = 0.1;
  /// Stop after this many optimizer steps (0: no limit). Mostly for tests.
  long max_steps = 0;
  /// Joint training starts its task network from the pretrained weights.
  bool joint_init_from_pretrained = false;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainReport {
  std::string procedure;
  std::vector<double> train_loss;       ///< per epoch
  std::vector<double> validation_loss;  ///< per epoch
  std::vector<double> learning_rate;    ///< per epoch, the rate used during it
  std::vector<double> step_loss;        ///< mean batch loss of every optimizer step
  int best_epoch = -1;
  double best_validation_loss = 0.0;
  long steps = 0;
  std::string stop_reason;
  double wall_seconds = 0.0;
  std::string checkpoint;  ///< filled in by whoever persists the model
  nlohmann::json config;

  /// Digest of the per-step loss curve (stable across runs with equal losses).
  std::string loss_curve_digest() const;
};

void to_json(nlohmann::json& j, const TrainReport& r);

/// Learning-rate decay on validation plateaus: the rate is multiplied by
/// `factor` once the number of consecutive non-improving epochs exceeds
/// `patience`, after which the count restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience);
  /// Returns the learning rate for the next epoch.
  double update(double validation_loss, double current_lr);
  int bad_epochs() const { return bad_epochs_; }

 private:
  double factor_;
  int patience_;
  double best_;
  int bad_epochs_ = 0;
};

/// Halts once `patience` consecutive epochs fail to beat the best validation loss.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);
  /// Records one epoch; returns true if training should stop.
  bool update(double validation_loss);
  bool improved() const { return improved_; }

 private:
  int patience_;
  double best_;
  int since_best_ = 0;
  bool improved_ = false;
};

/// One optimization problem driven by fit_loop.
class Procedure {
 public:
  virtual ~Procedure() = default;
  /// Forward, backward and one optimizer step on a batch; returns the mean
  /// per-sample loss.
  virtual double train_step(std::span<const SamplePair* const> batch, double learning_rate) = 0;
  /// Mean per-sample loss without updates.
  virtual double evaluate(std::span<const SamplePair* const> batch) const = 0;
  virtual void snapshot() = 0;
  virtual void restore() = 0;
};

struct EpochLog {
  int epoch;
  double train_loss;
  double validation_loss;
  double learning_rate;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Seeded train/validation partition of `n` samples: returns (train, validation)
/// index lists, each in ascending order.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(
    std::size_t n, double fraction, std::uint64_t seed);

/// Visiting order of the training samples in `epoch`.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// Shared optimization loop: seeded shuffling, per-epoch validation, plateau
/// decay, early stopping and best-validation restore. Throws TrainingError on
/// a non-finite loss after restoring the last good state.
TrainReport fit_loop(Procedure& procedure, const std::vector<SamplePair>& samples,
                     const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Seeds used for fresh network weights.
std::uint64_t recon_init_seed(const TrainConfig& config);
std::uint64_t task_init_seed(const TrainConfig& config);

struct TrainedModel {
  ModelHandle model;
  TrainReport report;
};

struct JointModels {
  ModelHandle recon;
  ModelHandle task;
  TrainReport report;
};

/// Trains a class-probability network with the Dice loss on full-dose inputs.
/// The returned model is frozen.
TrainedModel pretrain_segmentation(const std::vector<SamplePair>& train,
                                   const UNetConfig& net, const TrainConfig& config,
                                   const EpochCallback& on_epoch = {});

/// Trains a reconstruction network against
/// (1 - alpha) * MSE(f(low), full) + alpha * DiceLoss(task(f(low)), seg)
/// with `task_model` held fixed. alpha = 0 skips the task branch entirely.
/// The reconstruction network starts from `initial_recon` when given (its
/// architecture must equal `net`), otherwise from seeded random weights.
TrainedModel train_task_adaptive(const std::vector<SamplePair>& train,
                                 const ModelHandle& task_model, const UNetConfig& net,
                                 const TrainConfig& config, const EpochCallback& on_epoch = {},
                                 const ModelHandle* initial_recon = nullptr);

/// Optimizes a reconstruction network and a task network together on the
/// joint loss with weight c. The task network starts from random weights
/// unless config.joint_init_from_pretrained, in which case `pretrained`
/// supplies them. The task update is skipped when c = 0. `initial_recon`
/// works as in train_task_adaptive.
JointModels train_joint(const std::vector<SamplePair>& train, const ModelHandle& pretrained,
                        const UNetConfig& recon_net, const TrainConfig& config,
                        const EpochCallback& on_epoch = {},
                        const ModelHandle* initial_recon = nullptr);

/// Raises the allocator's mmap and trim thresholds so large activation
/// buffers are recycled instead of returned to the kernel. Idempotent.
void tune_allocator();

}  // namespace ldct
