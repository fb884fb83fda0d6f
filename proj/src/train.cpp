#include "ldct/train.hpp"

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <random>
#include <sstream>

#include "ldct/errors.hpp"
#include "ldct/losses.hpp"
#include "ldct/optim.hpp"

namespace ldct {
namespace {

using Batch = std::span<const SamplePair* const>;

Tensor<float> stack_field(Batch batch, Image SamplePair::*field) {
  std::vector<const Image*> images;
  images.reserve(batch.size());
  for (const SamplePair* s : batch) images.push_back(&(s->*field));
  return stack_images<float>(images);
}

std::span<const float> sample_span(const Tensor<float>& t, int b) {
  return {t.data.data() + static_cast<std::ptrdiff_t>(b) * t.pixels(),
          static_cast<std::size_t>(t.pixels())};
}

std::span<float> sample_span(Tensor<float>& t, int b) {
  return {t.data.data() + static_cast<std::ptrdiff_t>(b) * t.pixels(),
          static_cast<std::size_t>(t.pixels())};
}

std::span<const std::uint8_t> seg_span(const SamplePair& s) {
  return {s.seg.data(), static_cast<std::size_t>(s.seg.size())};
}

std::vector<Mat<float>> copy_params(const ModelHandle& model) {
  std::vector<Mat<float>> out;
  for (const auto& p : model.params()) out.push_back(p.value);
  return out;
}

void load_params(ModelHandle& model, const std::vector<Mat<float>>& values) {
  auto& params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = values[i];
}

/// Mean MSE of a reconstruction batch; writes `scale`-weighted gradients into `grad`.
double batch_mse(const Tensor<float>& recon, const Tensor<float>& full, Tensor<float>* grad,
                 float scale) {
  double total = 0.0;
  for (int b = 0; b < recon.batch; ++b) {
    std::span<float> g = grad ? sample_span(*grad, b) : std::span<float>{};
    total += mse_loss<float>(sample_span(recon, b), sample_span(full, b), g, scale);
  }
  return total / recon.batch;
}

/// Mean Dice loss of a probability batch; accumulates `scale`-weighted
/// gradients into `grad` when given.
double batch_dice(const Tensor<float>& probs, Batch batch, Tensor<float>* grad, float scale) {
  const auto eps = static_cast<float>(kDefaultDiceEpsilon);
  double total = 0.0;
  for (int b = 0; b < probs.batch; ++b) {
    const ProbView<float> view(probs.sample(b));
    if (grad) {
      total += dice_loss_grad<float>(view, seg_span(*batch[b]), eps, ProbGradView<float>(grad->sample(b)),
                                     scale);
    } else {
      total += dice_loss<float>(view, seg_span(*batch[b]), eps);
    }
  }
  return total / probs.batch;
}

class SegmentationProcedure final : public Procedure {
 public:
  explicit SegmentationProcedure(ModelHandle& model) : model_(model), adam_(model) {
    grads_ = model.make_gradients();
  }

  double train_step(Batch batch, double lr) override {
    const Tensor<float> x = stack_field(batch, &SamplePair::full_dose);
    ForwardTape<float> tape;
    const Tensor<float> probs = model_.forward(x, &tape);
    Tensor<float> grad = Tensor<float>::zeros(probs.channels(), probs.batch, probs.height, probs.width);
    const double loss = batch_dice(probs, batch, &grad, 1.0f / probs.batch);
    grads_.zero();
    model_.backward(tape, grad, &grads_);
    adam_.step(model_, grads_, lr);
    return loss;
  }

  double evaluate(Batch batch) const override {
    return batch_dice(model_.forward(stack_field(batch, &SamplePair::full_dose)), batch, nullptr, 0);
  }

  void snapshot() override { saved_ = copy_params(model_); }
  void restore() override { load_params(model_, saved_); }

 private:
  ModelHandle& model_;
  Adam<float> adam_;
  Gradients<float> grads_;
  std::vector<Mat<float>> saved_;
};

/// Reconstruction network trained on (1 - w) * MSE + w * DiceLoss(task(recon)).
/// When `trainable_task` is non-null (joint training) the task network is
/// optimized too; otherwise it is only read.
class ReconstructionProcedure final : public Procedure {
 public:
  ReconstructionProcedure(ModelHandle& recon, const ModelHandle& task, double weight,
                          ModelHandle* trainable_task)
      : recon_(recon),
        task_(task),
        trainable_task_(trainable_task),
        weight_(weight),
        task_trainable_(trainable_task != nullptr),
        recon_adam_(recon),
        task_adam_(task) {
    recon_grads_ = recon.make_gradients();
    if (task_trainable_) task_grads_ = task.make_gradients();
  }

  double train_step(Batch batch, double lr) override {
    const Tensor<float> x = stack_field(batch, &SamplePair::low_dose);
    const Tensor<float> y = stack_field(batch, &SamplePair::full_dose);
    ForwardTape<float> recon_tape;
    const Tensor<float> recon = recon_.forward(x, &recon_tape);
    Tensor<float> grad = Tensor<float>::zeros(1, recon.batch, recon.height, recon.width);
    const auto inv_b = 1.0f / static_cast<float>(recon.batch);
    const double mse = batch_mse(recon, y, &grad, static_cast<float>(1.0 - weight_) * inv_b);
    double loss = mse;
    const bool use_task = weight_ > 0.0;
    if (use_task) {
      ForwardTape<float> task_tape;
      const Tensor<float> probs = task_.forward(recon, &task_tape);
      Tensor<float> grad_probs =
          Tensor<float>::zeros(probs.channels(), probs.batch, probs.height, probs.width);
      const double dice =
          batch_dice(probs, batch, &grad_probs, static_cast<float>(weight_) * inv_b);
      if (task_trainable_) task_grads_.zero();
      const Tensor<float> through =
          task_.backward(task_tape, grad_probs, task_trainable_ ? &task_grads_ : nullptr);
      grad.data += through.data;
      loss = convex_combination(mse, dice, weight_);
    }
    recon_grads_.zero();
    recon_.backward(recon_tape, grad, &recon_grads_);
    recon_adam_.step(recon_, recon_grads_, lr);
    if (use_task && task_trainable_) task_adam_.step(*trainable_task_, task_grads_, lr);
    return loss;
  }

  double evaluate(Batch batch) const override {
    const Tensor<float> recon = recon_.forward(stack_field(batch, &SamplePair::low_dose));
    const double mse = batch_mse(recon, stack_field(batch, &SamplePair::full_dose), nullptr, 0);
    if (weight_ == 0.0) return mse;
    return convex_combination(mse, batch_dice(task_.forward(recon), batch, nullptr, 0), weight_);
  }

  void snapshot() override {
    saved_recon_ = copy_params(recon_);
    if (task_trainable_) saved_task_ = copy_params(task_);
  }

  void restore() override {
    load_params(recon_, saved_recon_);
    if (task_trainable_) load_params(*trainable_task_, saved_task_);
  }

 private:
  ModelHandle& recon_;
  const ModelHandle& task_;
  ModelHandle* trainable_task_;
  double weight_;
  bool task_trainable_;
  Adam<float> recon_adam_;
  Adam<float> task_adam_;
  Gradients<float> recon_grads_, task_grads_;
  std::vector<Mat<float>> saved_recon_, saved_task_;
};

void require_samples(const std::vector<SamplePair>& samples) {
  if (samples.size() < 2) {
    throw ConfigError("training needs at least 2 samples (one is held out for validation)");
  }
}

double mean_loss(Procedure& procedure, const std::vector<SamplePair>& samples,
                 const std::vector<std::size_t>& indices, int batch_size) {
  double total = 0.0;
  std::vector<const SamplePair*> batch;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    batch.clear();
    for (std::size_t i = start; i < std::min(indices.size(), start + batch_size); ++i) {
      batch.push_back(&samples[indices[i]]);
    }
    total += procedure.evaluate(batch) * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(indices.size());
}

}  // namespace

SchedulerKind parse_scheduler(std::string_view name) {
  if (name == "plateau_decay") return SchedulerKind::kPlateauDecay;
  if (name == "none") return SchedulerKind::kNone;
  throw ConfigError("unknown scheduler '" + std::string(name) + "'");
}

std::string_view scheduler_name(SchedulerKind kind) {
  return kind == SchedulerKind::kPlateauDecay ? "plateau_decay" : "none";
}

void TrainConfig::validate() const {
  if (max_epochs <= 0) throw ConfigError("train.max_epochs must be positive");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate must be positive");
  }
  if (!(scheduler_factor > 0.0 && scheduler_factor < 1.0)) {
    throw ConfigError("train.scheduler_factor must lie in (0, 1)");
  }
  if (scheduler_patience < 0) throw ConfigError("train.scheduler_patience must be >= 0");
  if (early_stop_patience <= 0) throw ConfigError("train.early_stop_patience must be positive");
  require_unit_interval(alpha, "alpha");
  require_unit_interval(c, "c");
  if (!(validation_fraction > 0.0 && validation_fraction <= 0.5)) {
    throw ConfigError("train.validation_fraction must lie in (0, 0.5]");
  }
  if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"max_epochs", c.max_epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"scheduler", scheduler_name(c.scheduler)},
       {"scheduler_factor", c.scheduler_factor},
       {"scheduler_patience", c.scheduler_patience},
       {"early_stop_patience", c.early_stop_patience},
       {"seed", c.seed},
       {"alpha", c.alpha},
       {"c", c.c},
       {"validation_fraction", c.validation_fraction},
       {"max_steps", c.max_steps},
       {"joint_init_from_pretrained", c.joint_init_from_pretrained}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("max_epochs").get_to(c.max_epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  c.scheduler = parse_scheduler(j.at("scheduler").get<std::string>());
  j.at("scheduler_factor").get_to(c.scheduler_factor);
  j.at("scheduler_patience").get_to(c.scheduler_patience);
  j.at("early_stop_patience").get_to(c.early_stop_patience);
  j.at("seed").get_to(c.seed);
  j.at("alpha").get_to(c.alpha);
  j.at("c").get_to(c.c);
  j.at("validation_fraction").get_to(c.validation_fraction);
  j.at("max_steps").get_to(c.max_steps);
  j.at("joint_init_from_pretrained").get_to(c.joint_init_from_pretrained);
}

std::string TrainReport::loss_curve_digest() const {
  return fnv1a_hex(step_loss.data(), step_loss.size() * sizeof(double));
}

void to_json(nlohmann::json& j, const TrainReport& r) {
  j = {{"procedure", r.procedure},
       {"train_loss", r.train_loss},
       {"validation_loss", r.validation_loss},
       {"learning_rate", r.learning_rate},
       {"best_epoch", r.best_epoch},
       {"best_validation_loss", r.best_validation_loss},
       {"steps", r.steps},
       {"stop_reason", r.stop_reason},
       {"wall_seconds", r.wall_seconds},
       {"checkpoint", r.checkpoint},
       {"loss_curve_digest", r.loss_curve_digest()},
       {"config", r.config}};
}

PlateauScheduler::PlateauScheduler(double factor, int patience)
    : factor_(factor), patience_(patience), best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::update(double validation_loss, double current_lr) {
  if (validation_loss < best_) {
    best_ = validation_loss;
    bad_epochs_ = 0;
    return current_lr;
  }
  if (++bad_epochs_ > patience_) {
    bad_epochs_ = 0;
    return current_lr * factor_;
  }
  return current_lr;
}

EarlyStopper::EarlyStopper(int patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {}

bool EarlyStopper::update(double validation_loss) {
  improved_ = validation_loss < best_;
  if (improved_) {
    best_ = validation_loss;
    since_best_ = 0;
    return false;
  }
  return ++since_best_ >= patience_;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(
    std::size_t n, double fraction, std::uint64_t seed) {
  if (n < 2) throw ConfigError("validation_split: need at least 2 samples");
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n - 1);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(derive_seed(seed, "validation"));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(val)};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(seed, "epoch/" + std::to_string(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainReport fit_loop(Procedure& procedure, const std::vector<SamplePair>& samples,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  require_samples(samples);
  tune_allocator();
  const auto started = std::chrono::steady_clock::now();

  const auto [train_idx, val_idx] =
      validation_split(samples.size(), config.validation_fraction, config.seed);
  TrainReport report;
  report.config = config;
  report.stop_reason = "max_epochs";

  PlateauScheduler scheduler(config.scheduler_factor, config.scheduler_patience);
  EarlyStopper stopper(config.early_stop_patience);
  double lr = config.learning_rate;
  procedure.snapshot();

  auto diverged = [&](const std::string& where) {
    procedure.restore();
    std::ostringstream msg;
    msg << "non-finite loss " << where << " (epoch " << report.train_loss.size() << ", step "
        << report.steps << ", learning rate " << lr
        << "); parameters restored to the last good state";
    throw TrainingError(msg.str());
  };

  std::vector<const SamplePair*> batch;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto order = epoch_order(train_idx.size(), config.seed, epoch);
    double sum = 0.0;
    std::size_t seen = 0;
    bool step_limit = false;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(&samples[train_idx[order[i]]]);
      }
      const double loss = procedure.train_step(batch, lr);
      if (!std::isfinite(loss)) diverged("in training step");
      report.step_loss.push_back(loss);
      ++report.steps;
      sum += loss * static_cast<double>(batch.size());
      seen += batch.size();
      if (config.max_steps > 0 && report.steps >= config.max_steps) {
        step_limit = true;
        break;
      }
    }
    const double val = mean_loss(procedure, samples, val_idx, config.batch_size);
    if (!std::isfinite(val)) diverged("in validation");
    report.train_loss.push_back(sum / static_cast<double>(seen));
    report.validation_loss.push_back(val);
    report.learning_rate.push_back(lr);

    const bool stop = stopper.update(val);
    if (stopper.improved()) {
      procedure.snapshot();
      report.best_epoch = epoch;
      report.best_validation_loss = val;
    }
    if (on_epoch) on_epoch({epoch, report.train_loss.back(), val, lr});
    if (config.scheduler == SchedulerKind::kPlateauDecay) lr = scheduler.update(val, lr);
    if (stop) {
      report.stop_reason = "early_stop";
      break;
    }
    if (step_limit) {
      report.stop_reason = "max_steps";
      break;
    }
  }
  procedure.restore();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

std::uint64_t recon_init_seed(const TrainConfig& config) {
  return derive_seed(config.seed, "init/recon");
}

std::uint64_t task_init_seed(const TrainConfig& config) {
  return derive_seed(config.seed, "init/task");
}

namespace {

ModelHandle initial_recon_model(const UNetConfig& net, const TrainConfig& config,
                                const ModelHandle* initial, const char* who) {
  if (initial == nullptr) return ModelHandle(net, recon_init_seed(config));
  if (!(initial->config() == net)) {
    throw ConfigError(std::string(who) + ": initial reconstruction model has a different architecture");
  }
  ModelHandle recon = *initial;
  recon.set_frozen(false);
  return recon;
}

}  // namespace

TrainedModel pretrain_segmentation(const std::vector<SamplePair>& train, const UNetConfig& net,
                                   const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  net.validate();
  if (train.empty()) throw ConfigError("pretrain_segmentation: empty dataset");
  if (net.head != Head::kClassProbs || net.out_channels != kNumClasses) {
    throw ConfigError("pretrain_segmentation: network must have a 3-class class_probs head");
  }
  ModelHandle model(net, task_init_seed(config));
  SegmentationProcedure procedure(model);
  TrainReport report = fit_loop(procedure, train, config, on_epoch);
  report.procedure = "pretrain_segmentation";
  model.set_frozen(true);
  return {std::move(model), std::move(report)};
}

TrainedModel train_task_adaptive(const std::vector<SamplePair>& train,
                                 const ModelHandle& task_model, const UNetConfig& net,
                                 const TrainConfig& config, const EpochCallback& on_epoch,
                                 const ModelHandle* initial_recon) {
  config.validate();
  net.validate();
  if (!task_model.frozen()) {
    throw UsageError("train_task_adaptive: the task model must be frozen");
  }
  if (task_model.config().head != Head::kClassProbs) {
    throw UsageError("train_task_adaptive: the task model must have a class_probs head");
  }
  if (net.head != Head::kUnitSquash || net.out_channels != 1) {
    throw ConfigError("train_task_adaptive: reconstruction network must have a unit_squash head");
  }
  if (train.empty()) throw ConfigError("train_task_adaptive: empty dataset");
  ModelHandle recon = initial_recon_model(net, config, initial_recon, "train_task_adaptive");
  ReconstructionProcedure procedure(recon, task_model, config.alpha, nullptr);
  TrainReport report = fit_loop(procedure, train, config, on_epoch);
  report.procedure = "train_task_adaptive";
  return {std::move(recon), std::move(report)};
}

JointModels train_joint(const std::vector<SamplePair>& train, const ModelHandle& pretrained,
                        const UNetConfig& recon_net, const TrainConfig& config,
                        const EpochCallback& on_epoch, const ModelHandle* initial_recon) {
  config.validate();
  recon_net.validate();
  if (pretrained.config().head != Head::kClassProbs) {
    throw UsageError("train_joint: the task architecture must have a class_probs head");
  }
  if (recon_net.head != Head::kUnitSquash || recon_net.out_channels != 1) {
    throw ConfigError("train_joint: reconstruction network must have a unit_squash head");
  }
  if (train.empty()) throw ConfigError("train_joint: empty dataset");
  ModelHandle recon = initial_recon_model(recon_net, config, initial_recon, "train_joint");
  ModelHandle task = config.joint_init_from_pretrained
                         ? pretrained
                         : ModelHandle(pretrained.config(), task_init_seed(config));
  task.set_frozen(false);
  ReconstructionProcedure procedure(recon, task, config.c, &task);
  TrainReport report = fit_loop(procedure, train, config, on_epoch);
  report.procedure = "train_joint";
  task.set_frozen(true);
  return {std::move(recon), std::move(task), std::move(report)};
}

void tune_allocator() {
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  });
}

}  // namespace ldct
