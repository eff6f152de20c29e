#ifndef XVIEW_DATA_HPP_
#define XVIEW_DATA_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xview/numerics.hpp"
#include "xview/rng.hpp"

namespace xview::data {

enum class Split : std::uint8_t { Train, Query, Gallery };

std::string_view to_string(Split s) noexcept;

struct SampleRecord {
  std::uint64_t sample_id = 0;
  std::uint32_t identity = 0;
  double viewpoint = 0.0;  // radians in [0, 2*pi)
  Vector observation;

  bool operator==(const SampleRecord&) const = default;
};

struct Dataset {
  std::vector<SampleRecord> records;
  std::uint32_t num_identities = 0;
  std::uint32_t obs_dim = 0;
  Split split = Split::Train;

  std::size_t size() const noexcept { return records.size(); }
  Matrix observations() const;
  std::vector<std::uint32_t> labels() const;
  /// Record indices grouped by identity label (index = label).
  std::vector<std::vector<std::size_t>> by_identity() const;

  bool operator==(const Dataset&) const = default;
};

/// Throws InvalidConfig/CorruptRecord on broken invariants: label range,
/// observation width, unique sample ids, and (train split only) at least
/// two records for every identity that occurs.
void validate(const Dataset& ds);

/// Generator parameters. An observation is
///   id_scale * W_id * e(id) + view_scale * W_view * (cos t, sin t) + noise_scale * N(0, I)
/// where W_id (obs_dim x kIdentityLatentDim) and W_view (obs_dim x 2) have
/// N(0, 1/obs_dim) entries drawn from `seed`, and e(id) is a random unit vector.
struct GenConfig {
  std::uint32_t identities = 50;
  std::uint32_t views_per_id = 8;
  std::uint32_t obs_dim = 64;
  double id_scale = 4.0;
  double view_scale = 16.0;
  double noise_scale = 0.1;
  std::uint64_t seed = 7;

  bool operator==(const GenConfig&) const = default;
};

inline constexpr std::uint32_t kIdentityLatentDim = 16;

/// Throws InvalidConfig naming the first violated invariant.
void validate(const GenConfig& cfg);

/// Projections come from cfg.seed; identities, viewpoints and noise come from
/// `population_seed`, so several populations can share one observation model.
/// Viewpoints are stratified: view k of an identity lies in
/// [2*pi*k/V, 2*pi*(k+1)/V) plus a per-identity random rotation.
Dataset generate_synthetic(const GenConfig& cfg, std::uint64_t population_seed);
inline Dataset generate_synthetic(const GenConfig& cfg) { return generate_synthetic(cfg, cfg.seed); }

struct Batch {
  Matrix observations;
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> record_indices;
  std::size_t p = 0;
  std::size_t k = 0;
};

/// P identities without replacement, then K records each: without
/// replacement when the identity has >= K records, with replacement otherwise.
Batch pk_sample(const Dataset& ds, std::size_t p, std::size_t k, SeededRng& rng);

/// Per identity, round(fraction * n) records clamped to [1, n-1] go to the query split.
std::pair<Dataset, Dataset> split_query_gallery(const Dataset& ds, double fraction, SeededRng& rng);

inline constexpr std::string_view kDatasetMagic = "XVDS";
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string encode_dataset(const Dataset& ds);
/// The file carries no split tag; the caller supplies it.
Dataset decode_dataset(std::string_view bytes, Split split = Split::Train);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path, Split split = Split::Train);

/// Header: sample_id,identity,viewpoint,obs_0..obs_{d-1}
std::string dataset_csv(const Dataset& ds);

}  // namespace xview::data

#endif  // XVIEW_DATA_HPP_
