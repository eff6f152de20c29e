#include "xview/trainer.hpp"

#include <chrono>
#include <charconv>
#include <cmath>
#include <string>

#include "xview/error.hpp"

namespace xview::trainer {

using model::ParamGroup;
using model::ParamTree;

ScheduleConfig reference_main_schedule() { return {3.5e-4, {40, 70}, 0.1, 120}; }
ScheduleConfig reference_wcvl_schedule() { return {3.5e-4, {20, 35}, 0.1, 60}; }
ScheduleConfig desk_main_schedule() { return {3.5e-4, {225, 375}, 0.1, 600}; }
ScheduleConfig desk_wcvl_schedule() { return {3.5e-4, {105, 180}, 0.1, 300}; }

void validate(const ScheduleConfig& s) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!(s.base_lr > 0.0) || !std::isfinite(s.base_lr)) bad("base_lr must be positive");
  if (!(s.decay > 0.0) || !std::isfinite(s.decay)) bad("decay must be positive");
  for (std::size_t i = 0; i < s.milestones.size(); ++i) {
    if (i > 0 && s.milestones[i] <= s.milestones[i - 1]) bad("milestones must be strictly increasing");
    if (s.milestones[i] >= s.total_epochs) bad("milestones must be < total_epochs");
  }
}

double lr_at(std::uint32_t epoch, const ScheduleConfig& s) {
  if (epoch >= s.total_epochs) {
    throw Error(ErrorCode::EpochOutOfRange, "epoch " + std::to_string(epoch) + " of " + std::to_string(s.total_epochs));
  }
  double lr = s.base_lr;
  for (auto m : s.milestones)
    if (m <= epoch) lr *= s.decay;
  return lr;
}

void validate(const StageConfig& cfg) {
  validate(cfg.schedule);
  const bool wcvl = cfg.stage == model::Stage::Wcvl;
  if (wcvl != cfg.mode.has_value()) throw Error(ErrorCode::InvalidConfig, "mode is required for, and only for, the wcvl stage");
  if (cfg.mode && *cfg.mode == model::WcvlMode::None) throw Error(ErrorCode::InvalidConfig, "wcvl stage needs a mode");
  if (cfg.p < 2) throw Error(ErrorCode::InvalidConfig, "P must be >= 2 (negatives required)");
  if (cfg.k < 2) throw Error(ErrorCode::InvalidConfig, "K must be >= 2 (positives required)");
  if (!(cfg.triplet.margin >= 0.0)) throw Error(ErrorCode::InvalidConfig, "margin must be >= 0");
  if (!(cfg.mse_weight >= 0.0)) throw Error(ErrorCode::InvalidConfig, "mse_weight must be >= 0");
}

std::string train_log_csv(const TrainLog& log) {
  std::string out = "epoch,lr,loss_ce,loss_tri,loss_mse,seconds\n";
  auto num = [&](double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
  };
  for (const auto& e : log.epochs) {
    out += std::to_string(e.epoch);
    out += ',';
    num(e.lr);
    out += ',';
    num(e.loss_ce);
    out += ',';
    num(e.loss_tri);
    out += ',';
    num(e.loss_mse);
    out += ',';
    num(e.seconds);
    out += '\n';
  }
  return out;
}

AdamState adam_init(const ParamTree& params) {
  return {model::zeros_like(params), model::zeros_like(params), 0};
}

void adam_step(ParamTree& params, const model::Gradients& grads, AdamState& state, double lr, GroupMask mask,
               AdamConfig cfg) {
  model::require_congruent(params, grads);
  model::require_congruent(params, state.m);
  model::require_congruent(params, state.v);
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  std::vector<std::span<double>> p_t, m_t, v_t;
  std::vector<std::span<const double>> g_t;
  std::vector<ParamGroup> groups;
  model::for_each_tensor(params, [&](ParamGroup g, std::span<double> s) {
    groups.push_back(g);
    p_t.push_back(s);
  });
  model::for_each_tensor(grads, [&](ParamGroup, std::span<const double> s) { g_t.push_back(s); });
  model::for_each_tensor(state.m, [&](ParamGroup, std::span<double> s) { m_t.push_back(s); });
  model::for_each_tensor(state.v, [&](ParamGroup, std::span<double> s) { v_t.push_back(s); });

  for (std::size_t t = 0; t < p_t.size(); ++t) {
    if (!mask.allows(groups[t])) continue;
    auto p = p_t[t];
    auto g = g_t[t];
    auto m = m_t[t];
    auto v = v_t[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

std::size_t batches_per_epoch(const data::Dataset& ds, const StageConfig& cfg) {
  const std::size_t per_batch = cfg.p * cfg.k;
  return (ds.size() + per_batch - 1) / per_batch;
}

namespace {

enum class Objective { Main, WcvlPluggable, WcvlEndToEnd };

struct RunSpec {
  Objective objective = Objective::Main;
  double beta = 1.0;
  model::Stage tag = model::Stage::Main;
  model::WcvlMode mode = model::WcvlMode::None;
};

void check_data(const model::ArchConfig& arch, const data::Dataset& ds) {
  model::require_compatible(arch, ds.obs_dim);
  if (arch.num_classes != ds.num_identities) {
    throw Error(ErrorCode::ArchMismatch, "classifier has " + std::to_string(arch.num_classes) +
                                             " classes, dataset declares " + std::to_string(ds.num_identities));
  }
}

TrainResult run(ParamTree params, const model::ArchConfig& arch, const data::Dataset& ds, const StageConfig& cfg,
                const RunSpec& spec) {
  validate(cfg);
  check_data(arch, ds);
  data::validate(ds);

  SeededRng sampler(derive_seed(cfg.seed, "sampler"));
  AdamState state = adam_init(params);
  GroupMask mask;
  if (spec.objective == Objective::Main) mask.wcvl = false;
  if (spec.objective == Objective::WcvlPluggable) mask.main = false;

  const bool main_losses = spec.objective != Objective::WcvlPluggable;
  const bool cross_view = spec.objective != Objective::Main;
  const std::size_t steps = batches_per_epoch(ds, cfg);

  TrainResult result;
  std::vector<double> history;
  for (std::uint32_t epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg.schedule);
    EpochLog entry{epoch, lr, 0.0, 0.0, 0.0, 0.0};
    for (std::size_t step = 0; step < steps; ++step) {
      const data::Batch batch = data::pk_sample(ds, cfg.p, cfg.k, sampler);
      const model::ForwardPass pass =
          model::forward(params, batch.observations, {true, main_losses, cross_view});
      model::Upstream up;
      if (main_losses) {
        auto ce = losses::cross_entropy(pass.logits, batch.labels);
        auto tri = losses::beta_triplet(pass.x_g, batch.labels, {spec.beta, cfg.triplet.margin});
        entry.loss_ce += ce.loss;
        entry.loss_tri += tri.loss;
        up.d_logits = std::move(ce.grad);
        up.d_x_g = std::move(tri.grad);
      }
      if (cross_view) {
        auto mse = losses::cross_view_mse(pass.x_cv, pass.x_g, batch.labels, cfg.mse_variant);
        entry.loss_mse += mse.loss;
        if (spec.objective == Objective::WcvlEndToEnd) {
          for (double& g : mse.grad.values()) g *= cfg.mse_weight;
        }
        up.d_x_cv = std::move(mse.grad);
      }
      const model::Gradients grads = model::backward(params, pass, up);
      adam_step(params, grads, state, lr, mask);
    }
    const double inv = 1.0 / static_cast<double>(steps);
    entry.loss_ce *= inv;
    entry.loss_tri *= inv;
    entry.loss_mse *= inv;
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.push_back(entry.loss_ce + entry.loss_tri + entry.loss_mse);
    result.log.epochs.push_back(entry);
  }

  result.checkpoint.arch = arch;
  result.checkpoint.params = std::move(params);
  result.checkpoint.meta = {spec.tag, spec.mode, cfg.schedule.total_epochs, cfg.seed, std::move(history)};
  return result;
}

model::EncoderParams fresh_params(const model::ArchConfig& arch, const StageConfig& cfg) {
  SeededRng rng(derive_seed(cfg.seed, "init"));
  return model::init_params(arch, rng);
}

void require_main_stage(const StageConfig& cfg) {
  if (cfg.stage != model::Stage::Main) throw Error(ErrorCode::StageMismatch, "expected a main-stage config");
}

}  // namespace

TrainResult train_main(const data::Dataset& train, const model::ArchConfig& arch, const StageConfig& cfg) {
  require_main_stage(cfg);
  model::validate(arch);
  return run(fresh_params(arch, cfg), arch, train, cfg, {});
}

TrainResult continue_main(const model::Checkpoint& start, const data::Dataset& train, const StageConfig& cfg) {
  require_main_stage(cfg);
  return run(start.params, start.arch, train, cfg, {});
}

TrainResult train_wcvl(const model::Checkpoint& main_ckpt, const data::Dataset& train, const StageConfig& cfg) {
  if (cfg.stage != model::Stage::Wcvl) throw Error(ErrorCode::StageMismatch, "expected a wcvl-stage config");
  if (main_ckpt.meta.stage != model::Stage::Main) {
    throw Error(ErrorCode::StageMismatch,
                "cross-view training needs a main-stage checkpoint, got " + std::string(model::to_string(main_ckpt.meta.stage)));
  }
  validate(cfg);
  RunSpec spec;
  spec.objective = *cfg.mode == model::WcvlMode::Pluggable ? Objective::WcvlPluggable : Objective::WcvlEndToEnd;
  spec.tag = model::Stage::Wcvl;
  spec.mode = *cfg.mode;
  return run(main_ckpt.params, main_ckpt.arch, train, cfg, spec);
}

TrainResult train_beta_single_module(const data::Dataset& train, const model::ArchConfig& arch, double beta,
                                     const StageConfig& cfg) {
  require_main_stage(cfg);
  if (!(beta >= 1.0)) throw Error(ErrorCode::InvalidConfig, "beta must be >= 1");
  model::validate(arch);
  RunSpec spec;
  spec.beta = beta;
  spec.tag = model::Stage::SingleModule;
  return run(fresh_params(arch, cfg), arch, train, cfg, spec);
}

}  // namespace xview::trainer
