// Command-line entry point: gen-data, train, eval, ablate, dump-embeddings.
// Exit codes: 0 success, 1 other failure, 2 config error, 3 I/O error, 4 artifact mismatch.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "xview/binary_io.hpp"
#include "xview/error.hpp"
#include "xview/pipeline.hpp"

namespace {

using namespace xview;

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitMismatch = 4;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidArch:
      return kExitConfig;
    case ErrorCode::Io:
      return kExitIo;
    case ErrorCode::ArchMismatch:
    case ErrorCode::StageMismatch:
    case ErrorCode::FormatVersionMismatch:
    case ErrorCode::CorruptRecord:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::DimMismatch:
      return kExitMismatch;
    default:
      return 1;
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());
}

void print_log(const trainer::TrainLog& log, const char* stage) {
  for (const auto& e : log.epochs) {
    std::printf("[%s] epoch %3u  lr %.3g  ce %.5f  tri %.5f  mse %.5f  %.2fs\n", stage, e.epoch, e.lr, e.loss_ce,
                e.loss_tri, e.loss_mse, e.seconds);
  }
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  auto cfg = pipeline::load_config(config_path);
  const std::string dir = out_dir.empty() ? cfg.output_dir : out_dir;
  ensure_dir(dir);
  const auto paths = pipeline::default_paths(dir);
  const auto bundle = pipeline::generate_data(cfg);
  pipeline::write_data(bundle, cfg, paths);
  std::printf("wrote %zu train, %zu query, %zu gallery records to %s\n", bundle.train.size(), bundle.query.size(),
              bundle.gallery.size(), dir.c_str());
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string stage = "main";
  std::string mode;
  std::string main_ckpt;
  std::string out;
  std::string log;
};

int cmd_train(const TrainArgs& a) {
  auto cfg = pipeline::load_config(a.config);
  const auto paths = pipeline::default_paths(cfg.output_dir);
  if (a.stage != "main" && a.stage != "wcvl") throw Error(ErrorCode::InvalidConfig, "--stage must be main or wcvl");
  if (a.stage == "main" && !a.mode.empty()) {
    throw Error(ErrorCode::InvalidConfig, "--mode is only valid with --stage wcvl");
  }
  const auto train = data::load_dataset(paths.train, data::Split::Train);

  if (a.stage == "main") {
    const auto result = trainer::train_main(train, cfg.arch, pipeline::main_stage(cfg));
    print_log(result.log, "main");
    const std::string out = a.out.empty() ? paths.main_ckpt : a.out;
    model::save_checkpoint(result.checkpoint, out);
    io::write_file(a.log.empty() ? paths.main_log : a.log, trainer::train_log_csv(result.log));
    std::printf("main checkpoint: %s\n", out.c_str());
    return 0;
  }

  model::WcvlMode mode = *cfg.wcvl.mode;
  if (a.mode == "pluggable") mode = model::WcvlMode::Pluggable;
  else if (a.mode == "end_to_end") mode = model::WcvlMode::EndToEnd;
  else if (!a.mode.empty()) throw Error(ErrorCode::InvalidConfig, "--mode must be pluggable or end_to_end");

  const std::string main_path = a.main_ckpt.empty() ? paths.main_ckpt : a.main_ckpt;
  if (!std::filesystem::exists(main_path)) {
    throw Error(ErrorCode::StageMismatch, "no main checkpoint at " + main_path + "; run `train --stage main` first");
  }
  const auto main_ckpt = model::load_checkpoint(main_path);
  const auto result = trainer::train_wcvl(main_ckpt, train, pipeline::wcvl_stage(cfg, mode));
  print_log(result.log, "wcvl");
  const std::string out = a.out.empty() ? paths.wcvl_ckpt : a.out;
  model::save_checkpoint(result.checkpoint, out);
  io::write_file(a.log.empty() ? paths.wcvl_log : a.log, trainer::train_log_csv(result.log));
  std::printf("wcvl checkpoint (%s): %s\n", std::string(model::to_string(mode)).c_str(), out.c_str());
  return 0;
}

struct EvalArgs {
  std::string config;
  std::string main_ckpt;
  std::string wcvl_ckpt;
  std::string variant;
  std::string metric;
  std::string out;
  std::string csv;
};

int cmd_eval(const EvalArgs& a) {
  auto cfg = pipeline::load_config(a.config);
  const auto paths = pipeline::default_paths(cfg.output_dir);
  const auto variant = a.variant.empty() ? cfg.eval.variant : eval::parse_variant(a.variant);
  const auto metric = a.metric.empty() ? cfg.eval.metric : eval::parse_metric(a.metric);
  const auto bundle = pipeline::read_data(paths);
  const auto main_ckpt = model::load_checkpoint(a.main_ckpt.empty() ? paths.main_ckpt : a.main_ckpt);
  std::optional<model::Checkpoint> wcvl;
  if (!a.wcvl_ckpt.empty()) wcvl = model::load_checkpoint(a.wcvl_ckpt);

  const auto report = eval::evaluate(main_ckpt, wcvl ? &*wcvl : nullptr, bundle.query, bundle.gallery, variant,
                                     metric, cfg.eval.ranks);
  io::write_file(a.out.empty() ? paths.report_json : a.out, eval::report_json(report));
  io::write_file(a.csv.empty() ? paths.report_csv : a.csv,
                 eval::report_csv_header(report) + eval::report_csv_row(report));
  std::printf("source %s  variant %s  metric %s\n", std::string(eval::to_string(report.source)).c_str(),
              report.variant ? std::string(eval::to_string(*report.variant)).c_str() : "none",
              std::string(eval::to_string(report.metric)).c_str());
  for (std::size_t i = 0; i < report.ranks.size(); ++i) {
    std::printf("CMC@%u %.4f\n", report.ranks[i], report.cmc[i]);
  }
  std::printf("mAP %.4f\nCSC %.4f (trace Sb %.5f, trace Sw %.5f)\n", report.map, report.scatter.csc,
              report.scatter.trace_sb, report.scatter.trace_sw);
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& which, const std::string& main_path,
               const std::string& out) {
  auto cfg = pipeline::load_config(config);
  const auto kind = pipeline::parse_ablation(which);
  const auto paths = pipeline::default_paths(cfg.output_dir);
  const auto bundle = pipeline::read_data(paths);
  model::Checkpoint main_ckpt;
  if (kind != pipeline::Ablation::Beta) {
    const std::string p = main_path.empty() ? paths.main_ckpt : main_path;
    if (!std::filesystem::exists(p)) {
      throw Error(ErrorCode::StageMismatch, "no main checkpoint at " + p + "; run `train --stage main` first");
    }
    main_ckpt = model::load_checkpoint(p);
  }
  const auto table = pipeline::run_ablation(kind, cfg, bundle, main_ckpt);
  const std::string dest =
      out.empty() ? (std::filesystem::path(cfg.output_dir) / ("ablate_" + which + ".csv")).string() : out;
  io::write_file(dest, table.csv());
  std::fputs(table.csv().c_str(), stdout);
  return 0;
}

struct DumpArgs {
  std::string config;
  std::string main_ckpt;
  std::string wcvl_ckpt;
  std::string split = "query";
  std::string source = "baseline";
  std::string variant;
  std::string out;
};

int cmd_dump(const DumpArgs& a) {
  auto cfg = pipeline::load_config(a.config);
  const auto paths = pipeline::default_paths(cfg.output_dir);
  data::Dataset ds;
  if (a.split == "train") ds = data::load_dataset(paths.train, data::Split::Train);
  else if (a.split == "query") ds = data::load_dataset(paths.query, data::Split::Query);
  else if (a.split == "gallery") ds = data::load_dataset(paths.gallery, data::Split::Gallery);
  else throw Error(ErrorCode::InvalidConfig, "--split must be train, query or gallery");

  eval::Source source;
  if (a.source == "baseline") source = eval::Source::Baseline;
  else if (a.source == "cross_view") source = eval::Source::CrossView;
  else if (a.source == "fused") source = eval::Source::Fused;
  else throw Error(ErrorCode::InvalidConfig, "--source must be baseline, cross_view or fused");
  if (source != eval::Source::Baseline && a.wcvl_ckpt.empty()) {
    throw Error(ErrorCode::InvalidConfig, "--source " + a.source + " needs --wcvl");
  }
  const auto variant = a.variant.empty() ? cfg.eval.variant : eval::parse_variant(a.variant);
  const auto ckpt = model::load_checkpoint(source == eval::Source::Baseline
                                               ? (a.main_ckpt.empty() ? paths.main_ckpt : a.main_ckpt)
                                               : a.wcvl_ckpt);
  model::require_compatible(ckpt.arch, ds.obs_dim);
  const auto emb = eval::embed(ckpt.params, ds, source, variant);
  const std::string dest = a.out.empty() ? (std::filesystem::path(cfg.output_dir) /
                                            ("embeddings_" + a.split + "_" + a.source + ".csv"))
                                               .string()
                                         : a.out;
  io::write_file(dest, eval::embeddings_csv(emb));
  std::printf("wrote %zu embeddings to %s\n", emb.labels.size(), dest.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-view metric learning: synthetic data, two-stage training, fused retrieval evaluation"};
  app.require_subcommand(1);

  std::string gen_config, gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate train/query/gallery datasets");
  gen->add_option("--config", gen_config, "Run config (JSON)")->required();
  gen->add_option("--out", gen_out, "Output directory (default: config output_dir)");

  TrainArgs targs;
  auto* train = app.add_subcommand("train", "Train the main stage or the cross-view stage");
  train->add_option("--config", targs.config, "Run config (JSON)")->required();
  train->add_option("--stage", targs.stage, "main | wcvl");
  train->add_option("--mode", targs.mode, "pluggable | end_to_end (wcvl stage only)");
  train->add_option("--main", targs.main_ckpt, "Main checkpoint to start the wcvl stage from");
  train->add_option("--out", targs.out, "Checkpoint output path");
  train->add_option("--log", targs.log, "Training log CSV path");

  EvalArgs eargs;
  auto* ev = app.add_subcommand("eval", "Evaluate baseline or fused features");
  ev->add_option("--config", eargs.config, "Run config (JSON)")->required();
  ev->add_option("--main", eargs.main_ckpt, "Main checkpoint");
  ev->add_option("--wcvl", eargs.wcvl_ckpt, "Cross-view checkpoint (omit for baseline only)");
  ev->add_option("--variant", eargs.variant, "na | an | nan");
  ev->add_option("--metric", eargs.metric, "euclidean | dot");
  ev->add_option("--out", eargs.out, "Report JSON path");
  ev->add_option("--csv", eargs.csv, "Report CSV path");

  std::string ab_config, ab_which, ab_main, ab_out;
  auto* ab = app.add_subcommand("ablate", "Run an ablation sweep");
  ab->add_option("--config", ab_config, "Run config (JSON)")->required();
  ab->add_option("which", ab_which, "beta | fusion | shared_depth | mode")->required();
  ab->add_option("--main", ab_main, "Main checkpoint reused by the cross-view sweeps");
  ab->add_option("--out", ab_out, "Aggregated CSV path");

  DumpArgs dargs;
  auto* dump = app.add_subcommand("dump-embeddings", "Write embeddings as CSV");
  dump->add_option("--config", dargs.config, "Run config (JSON)")->required();
  dump->add_option("--main", dargs.main_ckpt, "Main checkpoint");
  dump->add_option("--wcvl", dargs.wcvl_ckpt, "Cross-view checkpoint");
  dump->add_option("--split", dargs.split, "train | query | gallery");
  dump->add_option("--source", dargs.source, "baseline | cross_view | fused");
  dump->add_option("--variant", dargs.variant, "na | an | nan (fused only)");
  dump->add_option("--out", dargs.out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_config, gen_out);
    if (train->parsed()) return cmd_train(targs);
    if (ev->parsed()) return cmd_eval(eargs);
    if (ab->parsed()) return cmd_ablate(ab_config, ab_which, ab_main, ab_out);
    if (dump->parsed()) return cmd_dump(dargs);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
