#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "mvbev/error.hpp"
#include "mvbev/geometry.hpp"
#include "mvbev/losses.hpp"
#include "mvbev/optim.hpp"
#include "mvbev/pseudolabel.hpp"
#include "mvbev/rng.hpp"
#include "mvbev/synthworld.hpp"
#include "mvbev/tinynet.hpp"

namespace mvbev {

// ---------------------------------------------------------------------------
// Mean teacher

/// phi <- alpha phi + (1 - alpha) theta, elementwise.
template <typename Real>
void ema_update(ParameterSet<Real>& phi, const ParameterSet<Real>& theta, double alpha) {
  require_same_layout(phi, theta, "ema_update");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
  const Real a = static_cast<Real>(alpha);
  const Real b = static_cast<Real>(1.0 - alpha);
  for (std::size_t t = 0; t < phi.size(); ++t) {
    auto& p = phi.tensors[t];
    const auto& q = theta.tensors[t];
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = a * p[k] + b * q[k];
  }
}

// ---------------------------------------------------------------------------
// Augmentation: DropView and 3D random occluders

struct AugmentationSpec {
  double dropview_prob = 0.0;
  int occluder_count_min = 0;
  int occluder_count_max = 0;
  double occluder_width_min = 0.3, occluder_width_max = 0.8;    // meters
  double occluder_height_min = 0.5, occluder_height_max = 1.5;  // meters
  double occluder_intensity_min = 0.0, occluder_intensity_max = 1.0;

  void validate() const {
    if (!(dropview_prob >= 0 && dropview_prob <= 1))
      throw InvalidArgument("dropview_prob must lie in [0, 1]");
    if (occluder_count_min < 0 || occluder_count_max < occluder_count_min)
      throw InvalidArgument("occluder count range must satisfy 0 <= min <= max");
  }
  bool is_identity() const { return dropview_prob == 0 && occluder_count_max == 0; }
};

/// Vertical rectangle standing on the ground, aligned with world X or Y.
struct Occluder {
  double x = 0, y = 0;  // ground center
  double width = 0, height = 0;
  bool along_x = true;
  double intensity = 0;

  std::vector<Eigen::Vector3d> corners() const {
    const Eigen::Vector3d half = along_x ? Eigen::Vector3d(width / 2, 0, 0)
                                         : Eigen::Vector3d(0, width / 2, 0);
    const Eigen::Vector3d base(x, y, 0), up(0, 0, height);
    return {base - half, base + half, base + half + up, base - half + up};
  }
};

struct AugmentedFrame {
  FrameRecord frame;
  std::vector<bool> active;
  std::vector<Occluder> occluders;
};

/// Student-side augmentation A(x). Labels are never modified.
inline AugmentedFrame augment(const FrameRecord& frame, Rng& rng, const AugmentationSpec& spec,
                              const std::vector<CameraCalibration>& cameras, const BevGrid& grid) {
  spec.validate();
  if (cameras.size() != frame.views.size())
    throw ShapeMismatch("one camera per view required for augmentation");
  AugmentedFrame out{frame, std::vector<bool>(frame.views.size(), true), {}};
  if (spec.is_identity()) return out;

  const int n_views = static_cast<int>(frame.views.size());
  if (spec.dropview_prob > 0 && n_views > 1 && uniform(rng, 0.0, 1.0) < spec.dropview_prob)
    out.active[static_cast<std::size_t>(uniform_int(rng, 0, n_views - 1))] = false;

  const int count = uniform_int(rng, spec.occluder_count_min, spec.occluder_count_max);
  const double gx1 = grid.origin_x + grid.h_g * grid.cell_size;
  const double gy1 = grid.origin_y + grid.w_g * grid.cell_size;
  for (int k = 0; k < count; ++k) {
    Occluder o;
    o.x = uniform(rng, grid.origin_x, gx1);
    o.y = uniform(rng, grid.origin_y, gy1);
    o.width = uniform(rng, spec.occluder_width_min, spec.occluder_width_max);
    o.height = uniform(rng, spec.occluder_height_min, spec.occluder_height_max);
    o.along_x = uniform(rng, 0.0, 1.0) < 0.5;
    o.intensity = uniform(rng, spec.occluder_intensity_min, spec.occluder_intensity_max);
    out.occluders.push_back(o);
  }
  for (const auto& o : out.occluders) {
    const auto world = o.corners();
    for (int v = 0; v < n_views; ++v) {
      const auto poly = raster::project_polygon(cameras[static_cast<std::size_t>(v)], world);
      if (poly)
        raster::fill_convex(out.frame.views[static_cast<std::size_t>(v)], *poly,
                            [&](int) { return o.intensity; });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training configuration and per-domain context

enum class Domain : std::uint64_t { Source = 0, Target = 1 };

struct AdaptConfig {
  double alpha = 0.99;
  double lambda = 1.0;
  int epochs = 5;
  PostprocessConfig pseudo{PostprocessMethod::LocalMax, 0.3, 5.0, 3};
  AugmentationSpec aug;
  bool use_perspective_supervision = false;
  double max_lr = 0.1;
  SgdConfig sgd;
  double sigma = 2.0;     // BEV soft-target sigma (cells)
  double sigma_px = 3.0;  // perspective soft-target sigma (feature pixels)
  double ped_height = 1.8;
  int patience = 2;

  void validate() const {
    if (!(alpha >= 0 && alpha <= 1)) throw InvalidArgument("alpha must lie in [0, 1]");
    if (!(lambda >= 0)) throw InvalidArgument("lambda must be non-negative");
    if (epochs < 0) throw InvalidArgument("epochs must be non-negative");
    aug.validate();
  }
};

/// Supervised training settings (baseline and oracle).
struct TrainConfig {
  int epochs = 20;
  double max_lr = 0.1;
  SgdConfig sgd;
  double sigma = 2.0;
  double sigma_px = 3.0;
  double ped_height = 1.8;
  AugmentationSpec aug;
  bool use_perspective_supervision = false;
};

/// A dataset together with the projection tables of its rig.
struct DomainData {
  const Dataset* data = nullptr;
  std::vector<ProjectionTable> tables;

  DomainData() = default;
  DomainData(const NetConfig& cfg, const Dataset& ds)
      : data(&ds), tables(build_tables(cfg, ds.rig.cameras, ds.grid)) {}
  const std::vector<CameraCalibration>& cameras() const { return data->rig.cameras; }
  const BevGrid& grid() const { return data->grid; }
  const FrameRecord& frame(int idx) const { return data->frames.at(static_cast<std::size_t>(idx)); }
};

// ---------------------------------------------------------------------------
// Pseudo-labels

/// Teacher pass on the clean, fully-active frame followed by h(.). Reads
/// only the teacher parameters; no augmentation randomness is involved.
inline std::vector<Cell> make_pseudo_label(const NetConfig& net, const ParameterSet<float>& teacher,
                                           const FrameRecord& frame,
                                           std::span<const ProjectionTable> tables,
                                           const PostprocessConfig& post) {
  const auto res = forward<float>(net, teacher, std::span<const Tensor<float>>(frame.views), tables);
  return to_pseudo_label(postprocess(res.occupancy, post));
}

// ---------------------------------------------------------------------------
// One optimisation step

/// Loss and gradient of one (augmented) labelled sample.
struct SampleTerm {
  double loss_bev = 0.0;
  double loss_persp = 0.0;
  ParameterSet<float> grads;
  Tensor<float> prediction;  // student occupancy map
  Tensor<float> target;      // G(y)
  std::vector<bool> active;
};

inline SampleTerm supervised_term(const NetConfig& net, const ParameterSet<float>& theta,
                                  const DomainData& dom, const FrameRecord& frame,
                                  std::span<const Cell> labels, const AugmentationSpec& aug,
                                  Rng& rng, double sigma, bool use_persp, double sigma_px,
                                  double ped_height) {
  AugmentedFrame a = augment(frame, rng, aug, dom.cameras(), dom.grid());
  auto res = forward<float>(net, theta, std::span<const Tensor<float>>(a.frame.views), dom.tables,
                            a.active, use_persp);
  SampleTerm term;
  term.target = gaussian_soft_target<float>(labels, sigma, dom.grid());
  auto bev = mse_loss(term.target, res.occupancy);
  term.loss_bev = bev.loss;
  if (use_persp) {
    auto persp = perspective_loss(res.aux, labels, dom.cameras(), dom.grid(), sigma_px, ped_height,
                                  NetConfig::feature_scale());
    term.loss_persp = persp.loss;
    term.grads = backward(net, res.cache, bev.grad, &persp.grads);
  } else {
    term.grads = backward(net, res.cache, bev.grad);
  }
  term.prediction = std::move(res.occupancy);
  term.active = std::move(a.active);
  return term;
}

struct StepLog {
  int step = 0;
  double lr = 0.0;
  double loss_src = 0.0;  // BEV + perspective terms, source
  double loss_tgt = 0.0;  // BEV + perspective terms, target (before lambda)
  double loss_total = 0.0;
  double grad_norm = 0.0;  // before clipping
  int target_frame = -1;
  std::vector<Cell> pseudo_labels;
  // Intermediates for independent re-evaluation of the combined loss.
  Tensor<float> pred_src, target_src, pred_tgt, target_tgt;
};

/// L = L_S(G(y_S), f(A(x_S))) + lambda L_T(G(h(f_phi(x_T))), f(A(x_T))), one
/// SGD step on theta, then one EMA update of phi. `target_frame` may be null
/// (source-only step). Augmentation streams derive from (step_seed, domain).
inline StepLog train_step(const NetConfig& net, ParameterSet<float>& theta, ParameterSet<float>& phi,
                          const DomainData& src, const FrameRecord& src_frame,
                          const DomainData* tgt, const FrameRecord* tgt_frame,
                          const AdaptConfig& cfg, ParameterSet<float>& velocity, double lr,
                          std::uint64_t step_seed) {
  if (!src_frame.gt) throw InvalidArgument("source frame must be labelled");
  StepLog log;
  log.lr = lr;

  Rng rng_src = derive_rng(step_seed, {static_cast<std::uint64_t>(Domain::Source)});
  SampleTerm s = supervised_term(net, theta, src, src_frame, *src_frame.gt, cfg.aug, rng_src,
                                 cfg.sigma, cfg.use_perspective_supervision, cfg.sigma_px,
                                 cfg.ped_height);
  log.loss_src = s.loss_bev + s.loss_persp;
  ParameterSet<float> grads = std::move(s.grads);
  log.pred_src = std::move(s.prediction);
  log.target_src = std::move(s.target);

  if (tgt && tgt_frame) {
    log.target_frame = tgt_frame->frame_id;
    log.pseudo_labels = make_pseudo_label(net, phi, *tgt_frame, tgt->tables, cfg.pseudo);
    if (cfg.lambda != 0.0) {
      Rng rng_tgt = derive_rng(step_seed, {static_cast<std::uint64_t>(Domain::Target)});
      SampleTerm t = supervised_term(net, theta, *tgt, *tgt_frame, log.pseudo_labels, cfg.aug,
                                     rng_tgt, cfg.sigma, cfg.use_perspective_supervision,
                                     cfg.sigma_px, cfg.ped_height);
      log.loss_tgt = t.loss_bev + t.loss_persp;
      const float lam = static_cast<float>(cfg.lambda);
      for (std::size_t k = 0; k < grads.size(); ++k) {
        auto& g = grads.tensors[k];
        const auto& gt = t.grads.tensors[k];
        for (std::size_t e = 0; e < g.size(); ++e) g[e] += lam * gt[e];
      }
      log.pred_tgt = std::move(t.prediction);
      log.target_tgt = std::move(t.target);
    }
  }
  log.loss_total = log.loss_src + cfg.lambda * log.loss_tgt;

  log.grad_norm = grad_norm(grads);
  sgd_step(theta, grads, lr, cfg.sgd, velocity);
  ema_update(phi, theta, cfg.alpha);
  return log;
}

// ---------------------------------------------------------------------------
// Training loops

/// Mean clean-frame BEV loss over the given frames.
inline double heldout_loss(const NetConfig& net, const ParameterSet<float>& params,
                           const DomainData& dom, std::span<const int> ids, double sigma) {
  if (ids.empty()) return 0.0;
  std::vector<double> losses(ids.size());
  parallel_for(static_cast<int>(ids.size()), [&](int k) {
    const auto& f = dom.frame(ids[static_cast<std::size_t>(k)]);
    if (!f.gt) throw NoGroundTruth("held-out frame " + std::to_string(f.frame_id) + " unlabelled");
    const auto res = forward<float>(net, params, std::span<const Tensor<float>>(f.views), dom.tables);
    losses[static_cast<std::size_t>(k)] =
        mse_loss(gaussian_soft_target<float>(*f.gt, sigma, dom.grid()), res.occupancy).loss;
  });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(ids.size());
}

inline std::vector<int> shuffled(std::vector<int> ids, Rng& rng) {
  std::shuffle(ids.begin(), ids.end(), rng);
  return ids;
}

struct TrainOutcome {
  ParameterSet<float> best;
  int best_epoch = -1;  // -1: returned parameters are the initial ones
  std::vector<double> heldout;           // per completed epoch
  std::vector<int> pseudo_label_counts;  // per epoch (adaptation only)
  int epochs_run = 0;
};

using StepObserver = std::function<void(const StepLog&)>;
using EpochObserver = std::function<void(int epoch, const ParameterSet<float>&)>;

/// Supervised training on labelled data (baseline on source, oracle on
/// target). One-cycle schedule over the whole run; keeps the epoch with the
/// lowest held-out loss on `heldout_ids` (the train split itself when empty).
inline TrainOutcome supervised_train(const NetConfig& net, ParameterSet<float> init,
                                     const DomainData& dom, std::span<const int> train_ids,
                                     std::span<const int> heldout_ids, const TrainConfig& cfg,
                                     std::uint64_t seed, const StepObserver& observer = {},
                                     const EpochObserver& on_epoch = {}) {
  if (train_ids.empty()) throw EmptyDataset("no labelled training frames");
  if (cfg.epochs < 1) throw InvalidArgument("supervised training needs at least one epoch");
  AdaptConfig step_cfg;
  step_cfg.alpha = 1.0;
  step_cfg.lambda = 0.0;
  step_cfg.aug = cfg.aug;
  step_cfg.sgd = cfg.sgd;
  step_cfg.sigma = cfg.sigma;
  step_cfg.sigma_px = cfg.sigma_px;
  step_cfg.ped_height = cfg.ped_height;
  step_cfg.use_perspective_supervision = cfg.use_perspective_supervision;

  const std::vector<int> ids(train_ids.begin(), train_ids.end());
  const std::span<const int> holdout = heldout_ids.empty() ? train_ids : heldout_ids;
  const int steps_per_epoch = static_cast<int>(ids.size());
  const int total = steps_per_epoch * cfg.epochs;

  ParameterSet<float> theta = std::move(init), phi = theta, velocity;
  TrainOutcome out;
  double best_loss = std::numeric_limits<double>::infinity();
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng = derive_rng(seed, {0x0e70c4, static_cast<std::uint64_t>(epoch)});
    const auto order = shuffled(ids, order_rng);
    for (int idx : order) {
      const double lr = one_cycle_lr(step, total, cfg.max_lr);
      StepLog log = train_step(net, theta, phi, dom, dom.frame(idx), nullptr, nullptr, step_cfg,
                               velocity, lr, derive_seed(seed, {0x57e9, static_cast<std::uint64_t>(step)}));
      log.step = step++;
      if (observer) observer(log);
    }
    if (on_epoch) on_epoch(epoch, theta);
    const double h = heldout_loss(net, theta, dom, holdout, cfg.sigma);
    out.heldout.push_back(h);
    if (h < best_loss) {
      best_loss = h;
      out.best = theta;
      out.best_epoch = epoch;
    }
    ++out.epochs_run;
  }
  return out;
}

/// Source-only baseline: fresh Kaiming init, supervised on the source train
/// split, checkpoint chosen by held-out (source test split) loss.
inline TrainOutcome pretrain_baseline(const NetConfig& net, const DomainData& source,
                                      const TrainConfig& cfg, std::uint64_t seed,
                                      const StepObserver& observer = {},
                                      const EpochObserver& on_epoch = {}) {
  return supervised_train(net, init_parameters<float>(net, seed), source, source.data->train,
                          source.data->test, cfg, seed, observer, on_epoch);
}

/// Mean-teacher self-training from a baseline. Each epoch pairs shuffled
/// source and target train frames, cycling the shorter list; early stopping
/// on held-out source loss with cfg.patience epochs of patience. Returns the
/// best student checkpoint (the baseline itself when epochs == 0).
inline TrainOutcome adapt(const NetConfig& net, const ParameterSet<float>& baseline,
                          const DomainData& source, const DomainData& target,
                          const AdaptConfig& cfg, std::uint64_t seed,
                          const StepObserver& observer = {}, const EpochObserver& on_epoch = {}) {
  cfg.validate();
  TrainOutcome out;
  out.best = baseline;
  if (cfg.epochs == 0) return out;
  const auto& src_ids = source.data->train;
  const auto& tgt_ids = target.data->train;
  if (src_ids.empty() || tgt_ids.empty()) throw EmptyDataset("adaptation needs source and target frames");

  const int steps_per_epoch = static_cast<int>(std::max(src_ids.size(), tgt_ids.size()));
  const int total = steps_per_epoch * cfg.epochs;
  ParameterSet<float> theta = baseline, phi = baseline, velocity;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng = derive_rng(seed, {0xada97, static_cast<std::uint64_t>(epoch)});
    const auto s_order = shuffled(src_ids, order_rng);
    const auto t_order = shuffled(tgt_ids, order_rng);
    int pseudo_count = 0;
    for (int k = 0; k < steps_per_epoch; ++k) {
      const double lr = one_cycle_lr(step, total, cfg.max_lr);
      const auto& sf = source.frame(s_order[static_cast<std::size_t>(k) % s_order.size()]);
      const auto& tf = target.frame(t_order[static_cast<std::size_t>(k) % t_order.size()]);
      StepLog log = train_step(net, theta, phi, source, sf, &target, &tf, cfg, velocity, lr,
                               derive_seed(seed, {0x57e9, static_cast<std::uint64_t>(step)}));
      log.step = step++;
      pseudo_count += static_cast<int>(log.pseudo_labels.size());
      if (observer) observer(log);
    }
    out.pseudo_label_counts.push_back(pseudo_count);
    if (on_epoch) on_epoch(epoch, theta);
    const double h = heldout_loss(net, theta, source, source.data->test, cfg.sigma);
    out.heldout.push_back(h);
    ++out.epochs_run;
    if (h < best_loss) {
      best_loss = h;
      out.best = theta;
      out.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return out;
}

}  // namespace mvbev
