#ifndef XVIEW_PIPELINE_HPP_
#define XVIEW_PIPELINE_HPP_

// Run configuration and the end-to-end workflow driven by the command line:
// data generation, the two training stages, evaluation and the ablation sweeps.

#include <cstdint>
#include <string>
#include <vector>

#include "xview/data.hpp"
#include "xview/eval.hpp"
#include "xview/model.hpp"
#include "xview/trainer.hpp"

namespace xview::pipeline {

struct EvalOptions {
  eval::FusionVariant variant = eval::FusionVariant::Na;
  eval::Metric metric = eval::Metric::Euclidean;
  std::vector<std::uint32_t> ranks{1, 5, 10};
};

struct AblationOptions {
  std::vector<double> betas{1.0, 1.5, 2.0, 6.0};
  std::vector<std::uint32_t> shared_depths{2, 3, 4, 5};
};

/// Everything a run depends on. Stage seeds are derived from `seed`:
///   dataset projections and training population  seed
///   test population                               derive_seed(seed, "test-population")
///   query/gallery split                           derive_seed(seed, "split")
///   main and single-module stages                 derive_seed(seed, "main")
///   cross-view stage                              derive_seed(seed, "wcvl")
struct RunConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "run";
  data::GenConfig data;
  double query_fraction = 0.5;
  model::ArchConfig arch;
  trainer::StageConfig main;
  trainer::StageConfig wcvl;
  EvalOptions eval;
  AblationOptions ablation;
};

/// Defaults of the reference run (seed 7, 50 identities x 8 views, desk schedules).
RunConfig reference_config();

/// Strict JSON parsing: unknown keys and invalid values throw InvalidConfig.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::string& path);
/// Resolved configuration, every field spelled out.
std::string config_json(const RunConfig& cfg);
/// Checks every nested invariant; throws InvalidConfig/InvalidArch.
void validate(const RunConfig& cfg);

struct DataBundle {
  data::Dataset train;
  data::Dataset query;
  data::Dataset gallery;
};

/// Training population from cfg.data; a disjoint test population from the
/// same observation model, split into query and gallery.
DataBundle generate_data(const RunConfig& cfg);

struct Paths {
  std::string train, query, gallery, manifest;
  std::string main_ckpt, wcvl_ckpt, main_log, wcvl_log;
  std::string report_json, report_csv;
};
Paths default_paths(const std::string& output_dir);

void write_data(const DataBundle& d, const RunConfig& cfg, const Paths& paths);
DataBundle read_data(const Paths& paths);

trainer::StageConfig main_stage(const RunConfig& cfg);
trainer::StageConfig wcvl_stage(const RunConfig& cfg, model::WcvlMode mode);

/// Same main branch under a different trunk split; the cross-view parameters
/// are those init_params would give for the new layout under the main seed.
model::Checkpoint with_shared_depth(const model::Checkpoint& main_ckpt, std::uint32_t shared_depth,
                                    const trainer::StageConfig& main_cfg);

enum class Ablation { Beta, Fusion, SharedDepth, Mode };
Ablation parse_ablation(std::string_view s);

struct AblationTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const;
};

/// Cross-view sweeps reuse `main_ckpt`; the beta sweep retrains per cell.
AblationTable run_ablation(Ablation which, const RunConfig& cfg, const DataBundle& data,
                           const model::Checkpoint& main_ckpt);

}  // namespace xview::pipeline

#endif  // XVIEW_PIPELINE_HPP_
