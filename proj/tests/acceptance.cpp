// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   ldct_acceptance [--quick] [--work DIR]
//
// --quick skips the two toy-experiment criteria; --work keeps their outputs.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ldct/ct_sim.hpp"
#include "ldct/losses.hpp"
#include "ldct/metrics.hpp"
#include "ldct/pipeline.hpp"
#include "ldct/report.hpp"
#include "ldct/train.hpp"
#include "ldct/unet.hpp"
#include "support.hpp"

using namespace ldct;
using ldct::testing::random_image;
using ldct::testing::random_labels;

namespace {

namespace fs = std::filesystem;

// Pinned tolerances.
constexpr double kLossIdentityTol = 1e-12;
constexpr double kGradRelTol = 1e-4;
constexpr double kTrajectoryTol = 1e-12;
constexpr double kFbpPsnrMin = 30.0;
constexpr double kLinearityRelTol = 1e-6;
constexpr double kPoissonMeanTol = 0.3;
constexpr double kPsnrOffsetTol = 1e-9;
constexpr double kSsimSelfTol = 1e-9;
constexpr double kDiceOracleTol = 1e-6;
constexpr double kToySegDiceMin = 0.90;
constexpr double kToyDiceGainMin = 0.05;
constexpr double kToyPsnrSlack = 1.0;
constexpr double kToyPsnrGainMin = 3.0;
constexpr std::uint64_t kToySeed = 7;

// Criteria runtime budgets, seconds.
constexpr double kBudgetLoss = 1.0;
constexpr double kBudgetMinute = 60.0;
constexpr double kBudgetToy = 30.0 * 60.0;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

bool report_line(int id, const std::string& title, double budget,
                 const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  o.require(secs < budget, "runtime over budget");
  std::printf("%s criterion %d (%s): %s; %.2f s of %.0f s\n", o.pass ? "PASS" : "FAIL", id,
              title.c_str(), o.detail.str().c_str(), secs, budget);
  std::fflush(stdout);
  return o.pass;
}

ProbMap<double> random_probs(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  ProbMap<double> p(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) p(c, i) = u(rng);
    p.col(i) /= p.col(i).sum();
  }
  return p;
}

void loss_identities(Outcome& o) {
  double worst_mse = 0.0, worst_dice = 0.0, worst_joint = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Image recon = random_image(16, 16, s);
    const Image full = random_image(16, 16, s + 10000);
    const SegMap gt = random_labels(16, 16, s + 20000);
    const ProbMap<double> p = random_probs(256, s + 30000);
    worst_mse = std::max(worst_mse, std::abs(task_adaptive_loss(recon, full, p, gt, 0.0) - mse_loss(recon, full)));
    worst_dice = std::max(worst_dice, std::abs(task_adaptive_loss(recon, full, p, gt, 1.0) - dice_loss(p, gt)));
    const double t = static_cast<double>(s) / 99.0;
    worst_joint = std::max(worst_joint, std::abs(joint_loss(recon, full, p, gt, t) -
                                                 task_adaptive_loss(recon, full, p, gt, t)));
  }
  o.detail << "max |TA(0)-MSE| " << worst_mse << ", |TA(1)-Dice| " << worst_dice
           << ", |joint-TA| " << worst_joint;
  o.require(worst_mse <= kLossIdentityTol, "alpha=0 identity");
  o.require(worst_dice <= kLossIdentityTol, "alpha=1 identity");
  o.require(worst_joint <= kLossIdentityTol, "joint/task-adaptive identity");
}

double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-7});
}

void gradient_correctness(Outcome& o) {
  const int size = 16, n = size * size;
  const double h = 1e-6, alpha = 0.5;
  const Image x = random_image(size, size, 1);
  const Image full = random_image(size, size, 2);
  const SegMap gt = random_labels(size, size, 3);
  const std::span<const std::uint8_t> g(gt.data(), n);
  const UNet<double> net(UNetConfig::segmentation(1, 8), 4);

  // MSE w.r.t. its prediction.
  std::vector<double> gm(n);
  mse_loss<double>(std::span<const double>(x.data(), n), std::span<const double>(full.data(), n), gm, 1.0);
  double worst_mse = 0.0;
  for (int k = 0; k < n; k += 5) {
    Image xp = x, xm = x;
    xp.data()[k] += h;
    xm.data()[k] -= h;
    worst_mse = std::max(worst_mse, rel_err(gm[k], (mse_loss(xp, full) - mse_loss(xm, full)) / (2 * h)));
  }

  // Dice loss w.r.t. probabilities.
  const ProbMap<double> p = random_probs(n, 5);
  ProbMap<double> gp = ProbMap<double>::Zero(3, n);
  dice_loss_grad<double>(ProbView<double>(p), g, kDefaultDiceEpsilon, ProbGradView<double>(gp), 1.0);
  double worst_dice = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int k = c; k < n; k += 9) {
      ProbMap<double> pp = p, pm = p;
      pp(c, k) += h;
      pm(c, k) -= h;
      worst_dice = std::max(worst_dice, rel_err(gp(c, k), (dice_loss(pp, gt) - dice_loss(pm, gt)) / (2 * h)));
    }
  }

  // Composite w.r.t. the reconstruction, through the segmentation net.
  auto composite = [&](const Image& r) {
    return task_adaptive_loss(r, full, segment(net, r), gt, alpha);
  };
  const Image* ptr = &x;
  const Tensor<double> xt = stack_images<double>(std::span<const Image* const>(&ptr, 1));
  ForwardTape<double> tape;
  const Tensor<double> probs = net.forward(xt, &tape);
  Tensor<double> gprobs = Tensor<double>::zeros(3, 1, size, size);
  dice_loss_grad<double>(ProbView<double>(probs.data), g, kDefaultDiceEpsilon,
                         ProbGradView<double>(gprobs.data), alpha);
  const Tensor<double> through = net.backward(tape, gprobs, nullptr);
  std::vector<double> gc(n);
  mse_loss<double>(std::span<const double>(x.data(), n), std::span<const double>(full.data(), n), gc,
                   1.0 - alpha);
  double worst_comp = 0.0;
  for (int k = 0; k < n; k += 5) {
    Image xp = x, xm = x;
    xp.data()[k] += h;
    xm.data()[k] -= h;
    const double analytic = gc[k] + through.data(0, k);
    worst_comp = std::max(worst_comp, rel_err(analytic, (composite(xp) - composite(xm)) / (2 * h)));
  }
  o.detail << "max rel err MSE " << worst_mse << ", Dice " << worst_dice << ", composite "
           << worst_comp;
  o.require(worst_mse <= kGradRelTol, "MSE gradient");
  o.require(worst_dice <= kGradRelTol, "Dice gradient");
  o.require(worst_comp <= kGradRelTol, "composite gradient");
}

void freeze_contract(Outcome& o) {
  const auto data = ldct::testing::phantom_samples(24, 32, 11);
  const UNetConfig net = UNetConfig::reconstruction(2, 8);
  ModelHandle task(UNetConfig::segmentation(2, 8), 12);
  task.set_frozen(true);
  const ModelHandle task_before = task;
  TrainConfig c;
  c.seed = 13;
  c.batch_size = 4;
  c.max_epochs = 1;
  c.max_steps = 5;
  c.learning_rate = 2e-3;
  c.alpha = 0.5;
  const TrainedModel ta = train_task_adaptive(data, task, net, c);
  const bool task_same = ldct::testing::same_params(task, task_before);
  const bool recon_moved = !ldct::testing::same_params(ta.model, ModelHandle(net, recon_init_seed(c)));

  c.alpha = 0.0;
  const TrainedModel base = train_task_adaptive(data, task, net, c);
  const auto oracle = ldct::testing::mse_only_steps(data, net, c, 5);
  double worst = 0.0;
  for (std::size_t i = 0; i < oracle.step_loss.size(); ++i) {
    worst = std::max(worst, std::abs(base.report.step_loss.at(i) - oracle.step_loss[i]));
  }
  o.detail << "steps " << ta.report.steps << ", task bitwise unchanged " << task_same
           << ", recon changed " << recon_moved << ", max |alpha=0 - MSE-only| per step " << worst;
  o.require(ta.report.steps == 5 && base.report.steps == 5, "five steps");
  o.require(task_same, "task model unchanged");
  o.require(recon_moved, "reconstruction model changed");
  o.require(worst <= kTrajectoryTol, "alpha=0 trajectory");
  o.require(ldct::testing::same_params(base.model, oracle.model), "alpha=0 final parameters");
}

void tomography(Outcome& o) {
  const Geometry g{360, 363, 256};
  const Image disk = ldct::testing::smooth_disk(256, 80.0, 0.5, 8.0);
  const double psnr = psnr_roi(fbp(radon(disk, g), FbpFilter::kRamp), disk, roi_mask(256, 128));

  const Geometry small = Geometry::desk(64);
  const Image a = random_image(64, 64, 1), b = random_image(64, 64, 2);
  const SinogramValues lhs = radon(0.7 * a + b, small).values;
  const SinogramValues rhs = 0.7 * radon(a, small).values + radon(b, small).values;
  const double lin = (lhs - rhs).abs().maxCoeff() / rhs.abs().maxCoeff();

  const Eigen::ArrayXd counts = sample_poisson(Eigen::ArrayXd::Constant(10000, 100.0), 3);
  const double mean = counts.mean();
  o.detail << "FBP ROI PSNR " << psnr << " dB, linearity rel err " << lin << ", Poisson mean " << mean;
  o.require(psnr >= kFbpPsnrMin, "FBP PSNR");
  o.require(lin <= kLinearityRelTol, "linearity");
  o.require(std::abs(mean - 100.0) <= kPoissonMeanTol, "Poisson mean");
}

double set_dice(const SegMap& a, const SegMap& b, int cls) {
  long inter = 0, na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const bool in_a = a.data()[i] == cls, in_b = b.data()[i] == cls;
    na += in_a;
    nb += in_b;
    inter += in_a && in_b;
  }
  return na + nb == 0 ? 1.0 : 2.0 * inter / static_cast<double>(na + nb);
}

void metrics(Outcome& o) {
  const Image ref = random_image(64, 64, 1, 0.0, 0.8);
  const BoolMask mask = roi_mask(64, 32);
  const double psnr = psnr_roi(ref + 0.1, ref, mask);
  const double ssim = ssim_roi(ref, ref, mask);

  ModelHandle seg(UNetConfig::segmentation(2, 8), 5);
  seg.set_frozen(true);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Image img = random_image(32, 32, s);
    const SegMap gt = random_labels(32, 32, s + 1000);
    const SegMap pred = argmax_labels(segment(seg, img), 32, 32);
    const double oracle = 0.5 * (set_dice(pred, gt, 1) + set_dice(pred, gt, 2));
    worst = std::max(worst, std::abs(dice_eval(img, gt, seg) - oracle));
  }

  const Image x = random_image(64, 64, 3);
  const BoolMask small = roi_mask(64, 20);
  Image corrupted = x;
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      if (std::hypot(r - 31.5, c - 31.5) > 20.0 + 5.0 * std::sqrt(2.0) + 0.01) corrupted(r, c) = 1.0 - x(r, c);
    }
  }
  const bool psnr_local = psnr_roi(corrupted, ref, small) == psnr_roi(x, ref, small);
  const bool ssim_local = ssim_roi(corrupted, ref, small) == ssim_roi(x, ref, small);
  o.detail << "PSNR(offset 0.1) " << std::setprecision(12) << psnr << " dB, SSIM(x,x) " << ssim
           << std::setprecision(6) << ", max |dice_eval - set oracle| " << worst
           << ", out-of-mask invariant " << (psnr_local && ssim_local);
  o.require(std::abs(psnr - 20.0) <= kPsnrOffsetTol, "PSNR offset");
  o.require(std::abs(ssim - 1.0) <= kSsimSelfTol, "SSIM identity");
  o.require(worst <= kDiceOracleTol, "Dice oracle");
  o.require(psnr_local && ssim_local, "mask locality");
}

RunConfig toy_config() {
  RunConfig c;
  apply_repro_toy_preset(c);
  c.set_json("seed", kToySeed);
  return c;
}

const MetricRecord& row(const std::vector<MetricRecord>& rows, const std::string& name) {
  for (const auto& r : rows) {
    if (r.method == name) return r;
  }
  throw std::runtime_error("results lack the row '" + name + "'");
}

void toy_ordering(Outcome& o, const fs::path& out) {
  fs::remove_all(out);
  run_repro_toy(toy_config(), out);
  const auto rows = records_from_json(nlohmann::json::parse(ldct::testing::read_bytes(out / "results.json")));
  const auto& full = row(rows, "Full-dose");
  const auto& low = row(rows, "Low-dose");
  const auto& fbp_row = row(rows, "FBP");
  const auto& base = row(rows, base_label());
  const auto& ta5 = row(rows, task_adaptive_label(0.5));
  const auto& ta9 = row(rows, task_adaptive_label(0.9));
  const auto& joint9 = row(rows, joint_label(0.9));

  o.detail << std::fixed << std::setprecision(4) << "Dice full " << full.dice_mean << ", base "
           << base.dice_mean << ", TA0.5 " << ta5.dice_mean << ", FBP " << fbp_row.dice_mean
           << "; PSNR low " << low.psnr_mean << ", base " << base.psnr_mean << ", TA0.5 "
           << ta5.psnr_mean << ", TA0.9 " << ta9.psnr_mean << ", joint0.9 " << joint9.psnr_mean;
  int n_train = 0, n_test = 0;
  for (const auto& r : DatasetManifest::load(out / "dataset").samples) {
    (r.split == Split::kTrain ? n_train : n_test)++;
  }
  o.require(n_train == 500 && n_test == 100, "500/100 split");
  o.require(full.dice_mean >= kToySegDiceMin, "(a) segmentation Dice");
  o.require(ta5.dice_mean >= base.dice_mean + kToyDiceGainMin, "(b) TA0.5 Dice gain over base");
  o.require(ta5.dice_mean > fbp_row.dice_mean, "(b) TA0.5 Dice over FBP");
  for (const auto& r : rows) {
    if (!r.dice_only) o.require(full.dice_mean >= r.dice_mean, "(b) full-dose Dice >= " + r.method);
  }
  o.require(base.psnr_mean >= ta5.psnr_mean - kToyPsnrSlack, "(c) base PSNR vs TA0.5");
  o.require(base.psnr_mean >= low.psnr_mean + kToyPsnrGainMin, "(c) base PSNR over low-dose");
  o.require(ta5.psnr_mean >= low.psnr_mean + kToyPsnrGainMin, "(c) TA0.5 PSNR over low-dose");
  o.require(joint9.psnr_mean < ta9.psnr_mean, "(d) joint C=0.9 PSNR below TA0.9");
}

void toy_determinism(Outcome& o, const fs::path& first, const fs::path& second) {
  fs::remove_all(second);
  run_repro_toy(toy_config(), second);
  const std::string a = ldct::testing::read_bytes(first / "results.csv");
  const std::string b = ldct::testing::read_bytes(second / "results.csv");
  o.detail << "results.csv " << a.size() << " bytes, identical " << (a == b && !a.empty());
  o.require(!a.empty(), "first run produced results.csv");
  o.require(a == b, "byte-identical results.csv");
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = false;
  fs::path work = fs::temp_directory_path() / ("ldct_acceptance_" + std::to_string(::getpid()));
  bool keep = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--quick") {
      quick = true;
    } else if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
      keep = true;
    } else {
      std::cerr << "usage: ldct_acceptance [--quick] [--work DIR]\n";
      return 2;
    }
  }

  bool ok = true;
  ok &= report_line(1, "loss identities", kBudgetLoss, loss_identities);
  ok &= report_line(2, "gradient correctness", kBudgetMinute, gradient_correctness);
  ok &= report_line(3, "freeze contract", kBudgetMinute, freeze_contract);
  ok &= report_line(4, "tomography oracle", kBudgetMinute, tomography);
  ok &= report_line(5, "metric oracles", kBudgetMinute, metrics);
  if (quick) {
    std::printf("SKIP criterion 6 (toy-scale ordering): --quick\n");
    std::printf("SKIP criterion 7 (determinism): --quick\n");
  } else {
    const fs::path run_a = work / "run_a", run_b = work / "run_b";
    ok &= report_line(6, "toy-scale ordering", kBudgetToy,
                      [&](Outcome& o) { toy_ordering(o, run_a); });
    ok &= report_line(7, "determinism", kBudgetToy,
                      [&](Outcome& o) { toy_determinism(o, run_a, run_b); });
    if (!keep) fs::remove_all(work);
  }
  std::printf("%s\n", ok ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED");
  return ok ? 0 : 1;
}
