#ifndef XVIEW_TRAINER_HPP_
#define XVIEW_TRAINER_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xview/data.hpp"
#include "xview/losses.hpp"
#include "xview/model.hpp"

namespace xview::trainer {

/// Step schedule: base_lr * decay^(number of milestones <= epoch).
struct ScheduleConfig {
  double base_lr = 3.5e-4;
  std::vector<std::uint32_t> milestones{225, 375};
  double decay = 0.1;
  std::uint32_t total_epochs = 600;

  bool operator==(const ScheduleConfig&) const = default;
};

/// 120 epochs, /10 at 40 and 70.
ScheduleConfig reference_main_schedule();
/// 60 epochs, /10 at 20 and 35.
ScheduleConfig reference_wcvl_schedule();
/// Same learning rates, but sized by optimizer steps: a desk-scale epoch is only
/// ceil(400 / 64) = 7 batches, so 600 epochs (225, 375) and 300 epochs (105, 180).
ScheduleConfig desk_main_schedule();
ScheduleConfig desk_wcvl_schedule();

void validate(const ScheduleConfig& s);

/// Throws EpochOutOfRange outside [0, total_epochs).
double lr_at(std::uint32_t epoch, const ScheduleConfig& s);

struct StageConfig {
  model::Stage stage = model::Stage::Main;
  /// Present iff stage == Wcvl.
  std::optional<model::WcvlMode> mode;
  ScheduleConfig schedule;
  std::size_t p = 16;
  std::size_t k = 4;
  losses::TripletConfig triplet;
  losses::MseVariant mse_variant = losses::MseVariant::AsWritten;
  /// Weight of the cross-view term in end-to-end mode.
  double mse_weight = 1.0;
  std::uint64_t seed = 0;
};

void validate(const StageConfig& cfg);

struct EpochLog {
  std::uint32_t epoch = 0;
  double lr = 0.0;
  double loss_ce = 0.0;
  double loss_tri = 0.0;
  double loss_mse = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

/// epoch,lr,loss_ce,loss_tri,loss_mse,seconds
std::string train_log_csv(const TrainLog& log);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  model::ParamTree m;
  model::ParamTree v;
  std::uint64_t step = 0;
};

AdamState adam_init(const model::ParamTree& params);

/// Selects parameter groups an update may touch.
struct GroupMask {
  bool main = true;
  bool wcvl = true;
  bool allows(model::ParamGroup g) const noexcept { return model::is_main_group(g) ? main : wcvl; }
};

/// Bias-corrected Adam without weight decay. Groups outside `mask` are left
/// untouched, moments included. Throws ShapeMismatch on incongruent trees.
void adam_step(model::ParamTree& params, const model::Gradients& grads, AdamState& state, double lr,
               GroupMask mask = {}, AdamConfig cfg = {});

struct TrainResult {
  model::Checkpoint checkpoint;
  TrainLog log;
};

/// ceil(|train| / (P * K)).
std::size_t batches_per_epoch(const data::Dataset& ds, const StageConfig& cfg);

/// Cross-entropy + batch-hard triplet over trunk, main head and classifier.
/// Parameters start from init_params with derive_seed(cfg.seed, "init").
TrainResult train_main(const data::Dataset& train, const model::ArchConfig& arch, const StageConfig& cfg);

/// Runs the main objective again from an existing checkpoint.
TrainResult continue_main(const model::Checkpoint& start, const data::Dataset& train, const StageConfig& cfg);

/// Pluggable: only the unshared trunk tail and cross-view head move, driven by
/// the cross-view loss against frozen main features. End-to-end: main losses
/// plus mse_weight * cross-view loss over every parameter; targets stay detached.
/// Throws StageMismatch unless main_ckpt is a finished main stage.
TrainResult train_wcvl(const model::Checkpoint& main_ckpt, const data::Dataset& train, const StageConfig& cfg);

/// Single-module variant: cross-entropy + beta_triplet, no cross-view head.
TrainResult train_beta_single_module(const data::Dataset& train, const model::ArchConfig& arch, double beta,
                                     const StageConfig& cfg);

}  // namespace xview::trainer

#endif  // XVIEW_TRAINER_HPP_
