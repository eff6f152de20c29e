#ifndef XVIEW_EVAL_HPP_
#define XVIEW_EVAL_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xview/data.hpp"
#include "xview/model.hpp"
#include "xview/numerics.hpp"

namespace xview::eval {

enum class Source : std::uint8_t { Baseline, CrossView, Fused };
enum class FusionVariant : std::uint8_t { Na, An, Nan };
enum class Metric : std::uint8_t { Euclidean, Dot };

std::string_view to_string(Source s) noexcept;
std::string_view to_string(FusionVariant v) noexcept;
std::string_view to_string(Metric m) noexcept;
/// Throws InvalidConfig on unknown names.
FusionVariant parse_variant(std::string_view s);
Metric parse_metric(std::string_view s);

struct EmbeddingSet {
  Matrix features;
  std::vector<std::uint32_t> labels;
  /// Optional; when present, a gallery row whose id equals the query's is skipped.
  std::vector<std::uint64_t> sample_ids;
  Source source = Source::Baseline;
};

/// Throws DimMismatch/InvalidConfig when rows, labels and ids disagree or features are non-finite.
void validate(const EmbeddingSet& e);

/// na:  (x_g/|x_g| + x_cv/|x_cv|) / 2
/// an:  normalize((x_g + x_cv) / 2)
/// nan: normalize(na)
Vector fuse(std::span<const double> x_g, std::span<const double> x_cv, FusionVariant v);
Matrix fuse_rows(const Matrix& x_g, const Matrix& x_cv, FusionVariant v);
/// Every row scaled to unit norm.
Matrix normalize_rows(const Matrix& x);

/// Gallery indices, best first: ascending distance or descending similarity,
/// ties broken by ascending gallery index.
std::vector<std::size_t> rank_gallery(std::span<const double> query, const EmbeddingSet& gallery, Metric metric);

/// Fraction of queries whose first correct match sits at rank <= r, per requested r.
std::vector<double> cmc(const EmbeddingSet& queries, const EmbeddingSet& gallery, std::span<const std::uint32_t> ranks,
                        Metric metric);

/// Mean over queries of the non-interpolated average precision.
double mean_ap(const EmbeddingSet& queries, const EmbeddingSet& gallery, Metric metric);

struct RetrievalStats {
  std::vector<double> cmc;
  double map = 0.0;
};

/// cmc and mean_ap from one ranking pass.
RetrievalStats retrieval(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                         std::span<const std::uint32_t> ranks, Metric metric);

struct ScatterStats {
  double trace_sb = 0.0;
  double trace_sw = 0.0;
  double csc = 0.0;
  std::vector<std::uint32_t> classes;
  std::vector<Vector> class_means;
  Vector global_mean;
  std::vector<double> class_probs;
};

/// Class separability trace(S_b) / trace(S_w) with empirical class
/// frequencies as class probabilities. Only traces are formed.
/// Throws SingleClass or DegenerateWithinScatter.
ScatterStats csc(const EmbeddingSet& e);

inline constexpr std::uint32_t kDefaultRanksArr[] = {1, 5, 10};
inline constexpr std::span<const std::uint32_t> kDefaultRanks{kDefaultRanksArr};

struct EvalReport {
  std::vector<std::uint32_t> ranks;
  std::vector<double> cmc;
  double map = 0.0;
  ScatterStats scatter;
  Source source = Source::Baseline;
  std::optional<FusionVariant> variant;
  Metric metric = Metric::Euclidean;
  std::uint64_t fingerprint = 0;
  std::size_t num_queries = 0;
  std::size_t num_gallery = 0;

  double cmc_at(std::uint32_t rank) const;
};

/// Features for a dataset under a checkpoint: the L2-normalized main feature,
/// the raw cross-view feature, or their fusion.
EmbeddingSet embed(const model::EncoderParams& p, const data::Dataset& ds, Source source,
                   FusionVariant variant = FusionVariant::Na);

/// Baseline-only when wcvl_ckpt is absent. Otherwise both features come from
/// wcvl_ckpt (its main branch equals main_ckpt after pluggable training).
/// Throws ArchMismatch on incompatible checkpoints or data.
EvalReport evaluate(const model::Checkpoint& main_ckpt, const model::Checkpoint* wcvl_ckpt,
                    const data::Dataset& query, const data::Dataset& gallery, FusionVariant variant, Metric metric,
                    std::span<const std::uint32_t> ranks = kDefaultRanks);

/// {"cmc1", "cmc5", "cmc10", "map", "csc": {"trace_sb", "trace_sw", "value"},
///  "variant", "metric", "source", "fingerprint"}
std::string report_json(const EvalReport& r);
std::string report_csv_header(const EvalReport& r);
std::string report_csv_row(const EvalReport& r);

/// sample_id,identity,source,f_0..f_{d-1}
std::string embeddings_csv(const EmbeddingSet& e);

}  // namespace xview::eval

#endif  // XVIEW_EVAL_HPP_
