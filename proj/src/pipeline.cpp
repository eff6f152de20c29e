#include "xview/pipeline.hpp"

#include <charconv>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "xview/binary_io.hpp"
#include "xview/error.hpp"

namespace xview::pipeline {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

/// Reads fields from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      config_error(path_ + "." + key + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) config_error("unknown key " + path_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_stage(const json& j, const std::string& path, trainer::StageConfig& s, bool wcvl) {
  ObjectReader r(j, path);
  r.get("base_lr", s.schedule.base_lr);
  r.get("milestones", s.schedule.milestones);
  r.get("decay", s.schedule.decay);
  r.get("epochs", s.schedule.total_epochs);
  r.get("p", s.p);
  r.get("k", s.k);
  r.get("margin", s.triplet.margin);
  if (wcvl) {
    std::string mode = std::string(model::to_string(*s.mode));
    r.get("mode", mode);
    if (mode == "pluggable") s.mode = model::WcvlMode::Pluggable;
    else if (mode == "end_to_end") s.mode = model::WcvlMode::EndToEnd;
    else config_error(path + ".mode must be pluggable or end_to_end");
    std::string variant = s.mse_variant == losses::MseVariant::Squared ? "squared" : "as_written";
    r.get("mse_variant", variant);
    if (variant == "as_written") s.mse_variant = losses::MseVariant::AsWritten;
    else if (variant == "squared") s.mse_variant = losses::MseVariant::Squared;
    else config_error(path + ".mse_variant must be as_written or squared");
    r.get("mse_weight", s.mse_weight);
  }
  r.finish();
}

json stage_json(const trainer::StageConfig& s, bool wcvl) {
  json j = {{"base_lr", s.schedule.base_lr}, {"milestones", s.schedule.milestones}, {"decay", s.schedule.decay},
            {"epochs", s.schedule.total_epochs}, {"p", s.p}, {"k", s.k}, {"margin", s.triplet.margin}};
  if (wcvl) {
    j["mode"] = std::string(model::to_string(*s.mode));
    j["mse_variant"] = s.mse_variant == losses::MseVariant::Squared ? "squared" : "as_written";
    j["mse_weight"] = s.mse_weight;
  }
  return j;
}

std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

RunConfig reference_config() {
  RunConfig cfg;
  cfg.seed = 7;
  cfg.data = data::GenConfig{};
  cfg.data.seed = cfg.seed;
  cfg.arch.obs_dim = cfg.data.obs_dim;
  cfg.arch.num_classes = cfg.data.identities;
  cfg.main.stage = model::Stage::Main;
  cfg.main.schedule = trainer::desk_main_schedule();
  cfg.wcvl.stage = model::Stage::Wcvl;
  cfg.wcvl.mode = model::WcvlMode::Pluggable;
  cfg.wcvl.schedule = trainer::desk_wcvl_schedule();
  return cfg;
}

RunConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    config_error(std::string("malformed JSON: ") + e.what());
  }
  RunConfig cfg = reference_config();
  ObjectReader top(j, "config");
  top.get("seed", cfg.seed);
  top.get("output_dir", cfg.output_dir);
  if (const json* d = top.child("data")) {
    ObjectReader r(*d, "data");
    r.get("identities", cfg.data.identities);
    r.get("views_per_id", cfg.data.views_per_id);
    r.get("obs_dim", cfg.data.obs_dim);
    r.get("id_scale", cfg.data.id_scale);
    r.get("view_scale", cfg.data.view_scale);
    r.get("noise_scale", cfg.data.noise_scale);
    r.get("query_fraction", cfg.query_fraction);
    r.finish();
  }
  if (const json* a = top.child("arch")) {
    ObjectReader r(*a, "arch");
    r.get("trunk", cfg.arch.trunk);
    r.get("shared_depth", cfg.arch.shared_depth);
    r.get("main_head", cfg.arch.main_head);
    r.get("wcvl_head", cfg.arch.wcvl_head);
    std::string act = "relu";
    r.get("activation", act);
    if (act != "relu") config_error("arch.activation must be relu");
    r.finish();
  }
  if (const json* s = top.child("main")) read_stage(*s, "main", cfg.main, false);
  if (const json* s = top.child("wcvl")) read_stage(*s, "wcvl", cfg.wcvl, true);
  if (const json* e = top.child("eval")) {
    ObjectReader r(*e, "eval");
    std::string variant(eval::to_string(cfg.eval.variant));
    std::string metric(eval::to_string(cfg.eval.metric));
    r.get("variant", variant);
    r.get("metric", metric);
    r.get("ranks", cfg.eval.ranks);
    r.finish();
    cfg.eval.variant = eval::parse_variant(variant);
    cfg.eval.metric = eval::parse_metric(metric);
  }
  if (const json* a = top.child("ablation")) {
    ObjectReader r(*a, "ablation");
    r.get("betas", cfg.ablation.betas);
    r.get("shared_depths", cfg.ablation.shared_depths);
    r.finish();
  }
  top.finish();

  cfg.data.seed = cfg.seed;
  cfg.arch.obs_dim = cfg.data.obs_dim;
  cfg.arch.num_classes = cfg.data.identities;
  cfg.main.seed = derive_seed(cfg.seed, "main");
  cfg.wcvl.seed = derive_seed(cfg.seed, "wcvl");
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(io::read_file(path)); }

std::string config_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["data"] = {{"identities", cfg.data.identities},     {"views_per_id", cfg.data.views_per_id},
               {"obs_dim", cfg.data.obs_dim},           {"id_scale", cfg.data.id_scale},
               {"view_scale", cfg.data.view_scale},     {"noise_scale", cfg.data.noise_scale},
               {"query_fraction", cfg.query_fraction}};
  j["arch"] = {{"trunk", cfg.arch.trunk},
               {"shared_depth", cfg.arch.shared_depth},
               {"main_head", cfg.arch.main_head},
               {"wcvl_head", cfg.arch.wcvl_head},
               {"activation", "relu"}};
  j["main"] = stage_json(cfg.main, false);
  j["wcvl"] = stage_json(cfg.wcvl, true);
  j["eval"] = {{"variant", std::string(eval::to_string(cfg.eval.variant))},
               {"metric", std::string(eval::to_string(cfg.eval.metric))},
               {"ranks", cfg.eval.ranks}};
  j["ablation"] = {{"betas", cfg.ablation.betas}, {"shared_depths", cfg.ablation.shared_depths}};
  return j.dump(2) + "\n";
}

void validate(const RunConfig& cfg) {
  data::validate(cfg.data);
  model::validate(cfg.arch);
  trainer::validate(cfg.main);
  trainer::validate(cfg.wcvl);
  if (!(cfg.query_fraction > 0.0 && cfg.query_fraction < 1.0)) config_error("data.query_fraction must be in (0, 1)");
  if (cfg.main.p > cfg.data.identities) config_error("main.p exceeds the identity count");
  if (cfg.wcvl.p > cfg.data.identities) config_error("wcvl.p exceeds the identity count");
  if (cfg.eval.ranks.empty()) config_error("eval.ranks must not be empty");
  for (auto r : cfg.eval.ranks)
    if (r == 0) config_error("eval.ranks are 1-based");
  for (double b : cfg.ablation.betas)
    if (!(b >= 1.0)) config_error("ablation.betas must be >= 1");
  for (auto d : cfg.ablation.shared_depths)
    if (d > cfg.arch.trunk.size()) config_error("ablation.shared_depths exceed the trunk depth");
}

DataBundle generate_data(const RunConfig& cfg) {
  DataBundle b;
  b.train = data::generate_synthetic(cfg.data, cfg.data.seed);
  data::Dataset test = data::generate_synthetic(cfg.data, derive_seed(cfg.seed, "test-population"));
  SeededRng split_rng(derive_seed(cfg.seed, "split"));
  auto [q, g] = data::split_query_gallery(test, cfg.query_fraction, split_rng);
  b.query = std::move(q);
  b.gallery = std::move(g);
  return b;
}

Paths default_paths(const std::string& dir) {
  namespace fs = std::filesystem;
  auto p = [&](const char* name) { return (fs::path(dir) / name).string(); };
  return {p("train.xvds"), p("query.xvds"),  p("gallery.xvds"), p("manifest.json"), p("main.xvck"),
          p("wcvl.xvck"),  p("main_log.csv"), p("wcvl_log.csv"), p("report.json"),  p("report.csv")};
}

void write_data(const DataBundle& d, const RunConfig& cfg, const Paths& paths) {
  data::save_dataset(d.train, paths.train);
  data::save_dataset(d.query, paths.query);
  data::save_dataset(d.gallery, paths.gallery);
  nlohmann::ordered_json manifest;
  manifest["config"] = nlohmann::ordered_json::parse(config_json(cfg));
  namespace fs = std::filesystem;
  // Paths relative to the manifest, so a moved or re-generated directory compares equal.
  const auto base = fs::path(paths.manifest).parent_path();
  auto rel = [&](const std::string& p) { return fs::path(p).lexically_relative(base).generic_string(); };
  manifest["files"] = {
      {"train", {{"path", rel(paths.train)}, {"records", d.train.size()}}},
      {"query", {{"path", rel(paths.query)}, {"records", d.query.size()}}},
      {"gallery", {{"path", rel(paths.gallery)}, {"records", d.gallery.size()}}},
  };
  manifest["rng"] = std::string(SeededRng::algorithm());
  io::write_file(paths.manifest, manifest.dump(2) + "\n");
}

DataBundle read_data(const Paths& paths) {
  return {data::load_dataset(paths.train, data::Split::Train), data::load_dataset(paths.query, data::Split::Query),
          data::load_dataset(paths.gallery, data::Split::Gallery)};
}

trainer::StageConfig main_stage(const RunConfig& cfg) {
  trainer::StageConfig s = cfg.main;
  s.stage = model::Stage::Main;
  s.mode.reset();
  s.seed = derive_seed(cfg.seed, "main");
  return s;
}

trainer::StageConfig wcvl_stage(const RunConfig& cfg, model::WcvlMode mode) {
  trainer::StageConfig s = cfg.wcvl;
  s.stage = model::Stage::Wcvl;
  s.mode = mode;
  s.seed = derive_seed(cfg.seed, "wcvl");
  return s;
}

model::Checkpoint with_shared_depth(const model::Checkpoint& main_ckpt, std::uint32_t shared_depth,
                                    const trainer::StageConfig& main_cfg) {
  model::ArchConfig arch = main_ckpt.arch;
  arch.shared_depth = shared_depth;
  SeededRng rng(derive_seed(main_cfg.seed, "init"));
  model::Checkpoint out{arch, model::init_params(arch, rng), main_ckpt.meta};

  std::vector<model::Dense> trunk = main_ckpt.params.shared;
  trunk.insert(trunk.end(), main_ckpt.params.main_tail.begin(), main_ckpt.params.main_tail.end());
  out.params.shared.assign(trunk.begin(), trunk.begin() + shared_depth);
  out.params.main_tail.assign(trunk.begin() + shared_depth, trunk.end());
  out.params.main_head = main_ckpt.params.main_head;
  out.params.classifier = main_ckpt.params.classifier;
  return out;
}

Ablation parse_ablation(std::string_view s) {
  if (s == "beta") return Ablation::Beta;
  if (s == "fusion") return Ablation::Fusion;
  if (s == "shared_depth") return Ablation::SharedDepth;
  if (s == "mode") return Ablation::Mode;
  config_error("unknown ablation '" + std::string(s) + "' (beta, fusion, shared_depth, mode)");
}

std::string AblationTable::csv() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

AblationTable run_ablation(Ablation which, const RunConfig& cfg, const DataBundle& data,
                           const model::Checkpoint& main_ckpt) {
  const auto& ranks = cfg.eval.ranks;
  auto metric_cells = [&](const eval::EvalReport& r) {
    std::vector<std::string> cells;
    for (double c : r.cmc) cells.push_back(num(c));
    cells.push_back(num(r.map));
    cells.push_back(num(r.scatter.csc));
    return cells;
  };
  auto metric_header = [&](std::vector<std::string> lead) {
    for (auto rank : ranks) lead.push_back("cmc" + std::to_string(rank));
    lead.push_back("map");
    lead.push_back("csc");
    return lead;
  };

  AblationTable t;
  switch (which) {
    case Ablation::Beta: {
      t.header = metric_header({"beta"});
      for (double beta : cfg.ablation.betas) {
        const auto run = trainer::train_beta_single_module(data.train, cfg.arch, beta, main_stage(cfg));
        const auto report = eval::evaluate(run.checkpoint, nullptr, data.query, data.gallery, cfg.eval.variant,
                                           cfg.eval.metric, ranks);
        auto row = metric_cells(report);
        row.insert(row.begin(), num(beta));
        t.rows.push_back(std::move(row));
      }
      break;
    }
    case Ablation::Fusion: {
      t.header = metric_header({"variant", "metric"});
      const auto wcvl = trainer::train_wcvl(main_ckpt, data.train, wcvl_stage(cfg, model::WcvlMode::Pluggable));
      for (auto metric : {eval::Metric::Euclidean, eval::Metric::Dot}) {
        for (auto variant : {eval::FusionVariant::An, eval::FusionVariant::Na, eval::FusionVariant::Nan}) {
          const auto report =
              eval::evaluate(main_ckpt, &wcvl.checkpoint, data.query, data.gallery, variant, metric, ranks);
          auto row = metric_cells(report);
          row.insert(row.begin(), std::string(eval::to_string(metric)));
          row.insert(row.begin(), std::string(eval::to_string(variant)));
          t.rows.push_back(std::move(row));
        }
      }
      break;
    }
    case Ablation::SharedDepth: {
      t.header = metric_header({"shared_depth", "wcvl_params"});
      for (auto depth : cfg.ablation.shared_depths) {
        const model::Checkpoint base = with_shared_depth(main_ckpt, depth, main_stage(cfg));
        const auto wcvl = trainer::train_wcvl(base, data.train, wcvl_stage(cfg, model::WcvlMode::Pluggable));
        const auto report = eval::evaluate(base, &wcvl.checkpoint, data.query, data.gallery, cfg.eval.variant,
                                           cfg.eval.metric, ranks);
        std::size_t wcvl_params = 0;
        model::for_each_tensor(wcvl.checkpoint.params, [&](model::ParamGroup g, std::span<const double> s) {
          if (!model::is_main_group(g)) wcvl_params += s.size();
        });
        auto row = metric_cells(report);
        row.insert(row.begin(), std::to_string(wcvl_params));
        row.insert(row.begin(), std::to_string(depth));
        t.rows.push_back(std::move(row));
      }
      break;
    }
    case Ablation::Mode: {
      t.header = metric_header({"mode"});
      t.header.push_back("map_delta_vs_pluggable");
      double pluggable_map = 0.0;
      for (auto mode : {model::WcvlMode::Pluggable, model::WcvlMode::EndToEnd}) {
        const auto wcvl = trainer::train_wcvl(main_ckpt, data.train, wcvl_stage(cfg, mode));
        const auto report = eval::evaluate(main_ckpt, &wcvl.checkpoint, data.query, data.gallery, cfg.eval.variant,
                                           cfg.eval.metric, ranks);
        if (mode == model::WcvlMode::Pluggable) pluggable_map = report.map;
        auto row = metric_cells(report);
        row.insert(row.begin(), std::string(model::to_string(mode)));
        row.push_back(num(report.map - pluggable_map));
        t.rows.push_back(std::move(row));
      }
      break;
    }
  }
  return t;
}

}  // namespace xview::pipeline
