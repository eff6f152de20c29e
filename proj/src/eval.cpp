#include "xview/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include <json.hpp>

#include "xview/data.hpp"
#include "xview/error.hpp"
#include "xview/rng.hpp"

namespace xview::eval {

std::string_view to_string(Source s) noexcept {
  switch (s) {
    case Source::Baseline: return "baseline";
    case Source::CrossView: return "cross_view";
    case Source::Fused: return "fused";
  }
  return "unknown";
}

std::string_view to_string(FusionVariant v) noexcept {
  switch (v) {
    case FusionVariant::Na: return "na";
    case FusionVariant::An: return "an";
    case FusionVariant::Nan: return "nan";
  }
  return "unknown";
}

std::string_view to_string(Metric m) noexcept {
  switch (m) {
    case Metric::Euclidean: return "euclidean";
    case Metric::Dot: return "dot";
  }
  return "unknown";
}

FusionVariant parse_variant(std::string_view s) {
  if (s == "na") return FusionVariant::Na;
  if (s == "an") return FusionVariant::An;
  if (s == "nan") return FusionVariant::Nan;
  throw Error(ErrorCode::InvalidConfig, "unknown fusion variant '" + std::string(s) + "'");
}

Metric parse_metric(std::string_view s) {
  if (s == "euclidean") return Metric::Euclidean;
  if (s == "dot") return Metric::Dot;
  throw Error(ErrorCode::InvalidConfig, "unknown metric '" + std::string(s) + "'");
}

void validate(const EmbeddingSet& e) {
  if (e.features.rows() != e.labels.size()) throw Error(ErrorCode::DimMismatch, "feature rows and labels differ");
  if (!e.sample_ids.empty() && e.sample_ids.size() != e.labels.size()) {
    throw Error(ErrorCode::DimMismatch, "sample ids and labels differ");
  }
  if (!all_finite(e.features.values())) throw Error(ErrorCode::NonFiniteEvaluation, "non-finite feature");
}

Vector fuse(std::span<const double> x_g, std::span<const double> x_cv, FusionVariant v) {
  if (x_g.size() != x_cv.size()) throw Error(ErrorCode::DimMismatch, "fused features differ in width");
  Vector out(x_g.size());
  if (v == FusionVariant::An) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (x_g[i] + x_cv[i]);
    return l2_normalize(out);
  }
  const Vector a = l2_normalize(x_g);
  const Vector b = l2_normalize(x_cv);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (a[i] + b[i]);
  return v == FusionVariant::Nan ? l2_normalize(out) : out;
}

Matrix fuse_rows(const Matrix& x_g, const Matrix& x_cv, FusionVariant v) {
  if (x_g.rows() != x_cv.rows() || x_g.cols() != x_cv.cols()) {
    throw Error(ErrorCode::DimMismatch, "fused feature matrices differ in shape");
  }
  Matrix out(x_g.rows(), x_g.cols());
  for (std::size_t i = 0; i < x_g.rows(); ++i) {
    const Vector f = fuse(x_g.row(i), x_cv.row(i), v);
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

Matrix normalize_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Vector f = l2_normalize(x.row(i));
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

namespace {

Matrix scores(const Matrix& q, const Matrix& g, Metric metric) {
  return metric == Metric::Euclidean ? pairwise_euclidean(q, g) : dot_product_similarity(q, g);
}

void order_row(std::span<const double> row, Metric metric, std::vector<std::size_t>& idx) {
  idx.resize(row.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (metric == Metric::Euclidean) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return row[a] < row[b] || (row[a] == row[b] && a < b);
    });
  } else {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return row[a] > row[b] || (row[a] == row[b] && a < b);
    });
  }
}

struct QueryOutcome {
  std::size_t first_hit = 0;  // 1-based rank of the first correct match
  double ap = 0.0;
};

}  // namespace

std::vector<std::size_t> rank_gallery(std::span<const double> query, const EmbeddingSet& gallery, Metric metric) {
  if (query.size() != gallery.features.cols()) throw Error(ErrorCode::DimMismatch, "query width differs from gallery");
  Matrix q(1, query.size(), Vector(query.begin(), query.end()));
  const Matrix s = scores(q, gallery.features, metric);
  std::vector<std::size_t> idx;
  order_row(s.row(0), metric, idx);
  return idx;
}

RetrievalStats retrieval(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                         std::span<const std::uint32_t> ranks, Metric metric) {
  validate(queries);
  validate(gallery);
  if (queries.features.cols() != gallery.features.cols()) {
    throw Error(ErrorCode::DimMismatch, "query width differs from gallery");
  }
  if (queries.labels.empty()) throw Error(ErrorCode::InvalidConfig, "no queries");
  const Matrix s = scores(queries.features, gallery.features, metric);
  const bool exclude = !queries.sample_ids.empty() && !gallery.sample_ids.empty();
  const auto nq = static_cast<std::int64_t>(queries.labels.size());
  std::vector<QueryOutcome> outcomes(queries.labels.size());
  std::vector<std::int64_t> missing(queries.labels.size(), 0);

#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t q = 0; q < nq; ++q) {
    std::vector<std::size_t> idx;
    order_row(s.row(static_cast<std::size_t>(q)), metric, idx);
    const std::uint32_t label = queries.labels[q];
    std::size_t rank = 0;
    std::size_t hits = 0;
    double precision_sum = 0.0;
    for (std::size_t g : idx) {
      if (exclude && gallery.sample_ids[g] == queries.sample_ids[q]) continue;
      ++rank;
      if (gallery.labels[g] == label) {
        ++hits;
        if (hits == 1) outcomes[q].first_hit = rank;
        precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
      }
    }
    if (hits == 0) missing[q] = 1;
    else outcomes[q].ap = precision_sum / static_cast<double>(hits);
  }

  for (std::size_t q = 0; q < missing.size(); ++q) {
    if (missing[q]) {
      throw Error(ErrorCode::LabelAbsentFromGallery, "query " + std::to_string(q) + " label " +
                                                         std::to_string(queries.labels[q]) + " has no gallery match");
    }
  }
  RetrievalStats stats;
  stats.cmc.assign(ranks.size(), 0.0);
  double ap_sum = 0.0;
  for (const auto& o : outcomes) {
    ap_sum += o.ap;
    for (std::size_t r = 0; r < ranks.size(); ++r)
      if (o.first_hit <= ranks[r]) stats.cmc[r] += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(outcomes.size());
  for (double& c : stats.cmc) c *= inv;
  stats.map = ap_sum * inv;
  return stats;
}

std::vector<double> cmc(const EmbeddingSet& queries, const EmbeddingSet& gallery, std::span<const std::uint32_t> ranks,
                        Metric metric) {
  return retrieval(queries, gallery, ranks, metric).cmc;
}

double mean_ap(const EmbeddingSet& queries, const EmbeddingSet& gallery, Metric metric) {
  return retrieval(queries, gallery, {}, metric).map;
}

ScatterStats csc(const EmbeddingSet& e) {
  validate(e);
  std::map<std::uint32_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < e.labels.size(); ++i) members[e.labels[i]].push_back(i);
  if (members.size() < 2) throw Error(ErrorCode::SingleClass, "scatter needs at least two classes");

  const std::size_t d = e.features.cols();
  const double n = static_cast<double>(e.labels.size());
  ScatterStats st;
  st.global_mean.assign(d, 0.0);
  for (const auto& [label, rows] : members) {
    Vector mu(d, 0.0);
    for (std::size_t r : rows) {
      const auto x = e.features.row(r);
      for (std::size_t k = 0; k < d; ++k) mu[k] += x[k];
    }
    for (double& v : mu) v /= static_cast<double>(rows.size());
    const double prob = static_cast<double>(rows.size()) / n;
    double within = 0.0;
    for (std::size_t r : rows) {
      const auto x = e.features.row(r);
      for (std::size_t k = 0; k < d; ++k) within += (x[k] - mu[k]) * (x[k] - mu[k]);
    }
    st.trace_sw += prob * within / static_cast<double>(rows.size());
    for (std::size_t k = 0; k < d; ++k) st.global_mean[k] += prob * mu[k];
    st.classes.push_back(label);
    st.class_means.push_back(std::move(mu));
    st.class_probs.push_back(prob);
  }
  for (std::size_t c = 0; c < st.classes.size(); ++c) {
    double between = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = st.class_means[c][k] - st.global_mean[k];
      between += diff * diff;
    }
    st.trace_sb += st.class_probs[c] * between;
  }
  if (!(st.trace_sw > kNormEpsilon)) {
    throw Error(ErrorCode::DegenerateWithinScatter, "trace(S_w) = " + std::to_string(st.trace_sw));
  }
  st.csc = st.trace_sb / st.trace_sw;
  return st;
}

double EvalReport::cmc_at(std::uint32_t rank) const {
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (ranks[i] == rank) return cmc[i];
  throw Error(ErrorCode::InvalidConfig, "rank " + std::to_string(rank) + " was not evaluated");
}

EmbeddingSet embed(const model::EncoderParams& p, const data::Dataset& ds, Source source, FusionVariant variant) {
  const Matrix obs = ds.observations();
  EmbeddingSet e;
  e.labels = ds.labels();
  e.source = source;
  e.sample_ids.reserve(ds.size());
  for (const auto& r : ds.records) e.sample_ids.push_back(r.sample_id);
  switch (source) {
    case Source::Baseline:
      e.features = normalize_rows(model::forward_main(p, obs, false).x_g);
      break;
    case Source::CrossView:
      e.features = model::forward_wcvl(p, obs);
      break;
    case Source::Fused: {
      const auto pass = model::forward(p, obs, {true, false, true});
      e.features = fuse_rows(pass.x_g, pass.x_cv, variant);
      break;
    }
  }
  return e;
}

EvalReport evaluate(const model::Checkpoint& main_ckpt, const model::Checkpoint* wcvl_ckpt,
                    const data::Dataset& query, const data::Dataset& gallery, FusionVariant variant, Metric metric,
                    std::span<const std::uint32_t> ranks) {
  model::require_compatible(main_ckpt.arch, query.obs_dim);
  model::require_compatible(main_ckpt.arch, gallery.obs_dim);
  if (wcvl_ckpt) {
    if (wcvl_ckpt->arch != main_ckpt.arch) throw Error(ErrorCode::ArchMismatch, "main and cross-view checkpoints differ in architecture");
    if (wcvl_ckpt->meta.stage != model::Stage::Wcvl) {
      throw Error(ErrorCode::ArchMismatch, "second checkpoint is not a cross-view stage");
    }
  }
  const model::EncoderParams& params = wcvl_ckpt ? wcvl_ckpt->params : main_ckpt.params;
  const Source source = wcvl_ckpt ? Source::Fused : Source::Baseline;

  EmbeddingSet q = embed(params, query, source, variant);
  EmbeddingSet g = embed(params, gallery, source, variant);

  EvalReport report;
  report.ranks.assign(ranks.begin(), ranks.end());
  const RetrievalStats stats = retrieval(q, g, ranks, metric);
  report.cmc = stats.cmc;
  report.map = stats.map;

  EmbeddingSet all = g;
  {
    Matrix both(q.features.rows() + g.features.rows(), q.features.cols());
    std::copy(q.features.values().begin(), q.features.values().end(), both.values().begin());
    std::copy(g.features.values().begin(), g.features.values().end(),
              both.values().begin() + static_cast<std::ptrdiff_t>(q.features.size()));
    all.features = std::move(both);
    all.labels = q.labels;
    all.labels.insert(all.labels.end(), g.labels.begin(), g.labels.end());
    all.sample_ids.clear();
  }
  report.scatter = csc(all);
  report.source = source;
  if (wcvl_ckpt) report.variant = variant;
  report.metric = metric;
  report.num_queries = q.labels.size();
  report.num_gallery = g.labels.size();

  std::uint64_t h = fnv1a64(model::encode_checkpoint(main_ckpt));
  if (wcvl_ckpt) h = fnv1a64(model::encode_checkpoint(*wcvl_ckpt), h);
  h = fnv1a64(data::encode_dataset(query), h);
  h = fnv1a64(data::encode_dataset(gallery), h);
  h = fnv1a64(std::string(to_string(source)) + "/" + std::string(to_string(variant)) + "/" +
                  std::string(to_string(metric)),
              h);
  report.fingerprint = h;
  return report;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  auto res = std::to_chars(buf, buf + sizeof buf, v, 16);
  std::string s(buf, res.ptr);
  return std::string(16 - s.size(), '0') + s;
}

std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < r.ranks.size(); ++i) j["cmc" + std::to_string(r.ranks[i])] = r.cmc[i];
  j["map"] = r.map;
  j["csc"] = {{"trace_sb", r.scatter.trace_sb}, {"trace_sw", r.scatter.trace_sw}, {"value", r.scatter.csc}};
  j["variant"] = r.variant ? std::string(to_string(*r.variant)) : std::string("none");
  j["metric"] = std::string(to_string(r.metric));
  j["source"] = std::string(to_string(r.source));
  j["num_queries"] = r.num_queries;
  j["num_gallery"] = r.num_gallery;
  j["fingerprint"] = hex64(r.fingerprint);
  return j.dump(2) + "\n";
}

std::string report_csv_header(const EvalReport& r) {
  std::string h;
  for (auto rank : r.ranks) h += "cmc" + std::to_string(rank) + ",";
  return h + "map,trace_sb,trace_sw,csc,variant,metric,source,fingerprint\n";
}

std::string report_csv_row(const EvalReport& r) {
  std::string row;
  for (double c : r.cmc) row += num(c) + ",";
  row += num(r.map) + "," + num(r.scatter.trace_sb) + "," + num(r.scatter.trace_sw) + "," + num(r.scatter.csc) + ",";
  row += (r.variant ? std::string(to_string(*r.variant)) : std::string("none")) + ",";
  row += std::string(to_string(r.metric)) + "," + std::string(to_string(r.source)) + "," + hex64(r.fingerprint) + "\n";
  return row;
}

std::string embeddings_csv(const EmbeddingSet& e) {
  std::string out = "sample_id,identity,source";
  for (std::size_t k = 0; k < e.features.cols(); ++k) out += ",f_" + std::to_string(k);
  out += '\n';
  const std::string src(to_string(e.source));
  for (std::size_t i = 0; i < e.labels.size(); ++i) {
    out += e.sample_ids.empty() ? std::to_string(i) : std::to_string(e.sample_ids[i]);
    out += ',' + std::to_string(e.labels[i]) + ',' + src;
    for (double v : e.features.row(i)) out += ',' + num(v);
    out += '\n';
  }
  return out;
}

}  // namespace xview::eval
