#include "xview/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "xview/binary_io.hpp"
#include "xview/error.hpp"

namespace xview::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Matrix random_projection(std::size_t rows, std::size_t cols, SeededRng& rng) {
  Matrix w(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& v : w.values()) v = rng.gaussian() * scale;
  return w;
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

}  // namespace

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Query: return "query";
    case Split::Gallery: return "gallery";
  }
  return "unknown";
}

Matrix Dataset::observations() const {
  Matrix m(records.size(), obs_dim);
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::copy(records[i].observation.begin(), records[i].observation.end(), m.row(i).begin());
  }
  return m;
}

std::vector<std::uint32_t> Dataset::labels() const {
  std::vector<std::uint32_t> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.identity);
  return out;
}

std::vector<std::vector<std::size_t>> Dataset::by_identity() const {
  std::vector<std::vector<std::size_t>> groups(num_identities);
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].identity].push_back(i);
  return groups;
}

void validate(const Dataset& ds) {
  std::set<std::uint64_t> ids;
  for (const auto& r : ds.records) {
    if (r.identity >= ds.num_identities) {
      throw Error(ErrorCode::CorruptRecord, "identity " + std::to_string(r.identity) + " >= M=" +
                                                std::to_string(ds.num_identities));
    }
    if (r.observation.size() != ds.obs_dim) {
      throw Error(ErrorCode::CorruptRecord, "observation width mismatch in sample " + std::to_string(r.sample_id));
    }
    if (!ids.insert(r.sample_id).second) {
      throw Error(ErrorCode::CorruptRecord, "duplicate sample_id " + std::to_string(r.sample_id));
    }
  }
  if (ds.split == Split::Train) {
    std::vector<std::size_t> counts(ds.num_identities, 0);
    for (const auto& r : ds.records) ++counts[r.identity];
    for (std::size_t id = 0; id < counts.size(); ++id) {
      if (counts[id] == 1) {
        throw Error(ErrorCode::InvalidConfig, "train identity " + std::to_string(id) + " has a single record");
      }
    }
  }
}

void validate(const GenConfig& cfg) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (cfg.identities < 2) bad("identities must be >= 2");
  if (cfg.views_per_id < 2) bad("views_per_id must be >= 2");
  if (cfg.obs_dim < 2) bad("obs_dim must be >= 2");
  for (double s : {cfg.id_scale, cfg.view_scale, cfg.noise_scale}) {
    if (!std::isfinite(s) || !(s > 0.0)) bad("all scales must be finite and positive");
  }
  if (!(cfg.view_scale > cfg.id_scale)) bad("view_scale must exceed id_scale (sigma_view > sigma_id)");
}

Dataset generate_synthetic(const GenConfig& cfg, std::uint64_t population_seed) {
  validate(cfg);
  SeededRng world(cfg.seed);
  const Matrix w_id = random_projection(cfg.obs_dim, kIdentityLatentDim, world);
  const Matrix w_view = random_projection(cfg.obs_dim, 2, world);

  SeededRng rng(population_seed);
  Dataset ds;
  ds.num_identities = cfg.identities;
  ds.obs_dim = cfg.obs_dim;
  ds.split = Split::Train;
  ds.records.reserve(std::size_t{cfg.identities} * cfg.views_per_id);

  Vector latent(kIdentityLatentDim);
  Vector id_part(cfg.obs_dim);
  for (std::uint32_t id = 0; id < cfg.identities; ++id) {
    for (double& v : latent) v = rng.gaussian();
    latent = l2_normalize(latent);
    for (std::size_t r = 0; r < cfg.obs_dim; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < kIdentityLatentDim; ++c) s += w_id(r, c) * latent[c];
      id_part[r] = cfg.id_scale * s;
    }
    const double rotation = rng.uniform() * kTwoPi;
    for (std::uint32_t k = 0; k < cfg.views_per_id; ++k) {
      double theta = rotation + kTwoPi * (k + rng.uniform()) / cfg.views_per_id;
      theta = std::fmod(theta, kTwoPi);
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      SampleRecord rec;
      rec.sample_id = std::uint64_t{id} * cfg.views_per_id + k;
      rec.identity = id;
      rec.viewpoint = theta;
      rec.observation.resize(cfg.obs_dim);
      for (std::size_t r = 0; r < cfg.obs_dim; ++r) {
        rec.observation[r] = id_part[r] + cfg.view_scale * (w_view(r, 0) * c + w_view(r, 1) * s) +
                             cfg.noise_scale * rng.gaussian();
      }
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

Batch pk_sample(const Dataset& ds, std::size_t p, std::size_t k, SeededRng& rng) {
  const auto groups = ds.by_identity();
  std::vector<std::size_t> present;
  for (std::size_t id = 0; id < groups.size(); ++id)
    if (!groups[id].empty()) present.push_back(id);
  if (present.size() < p || p == 0 || k == 0) {
    throw Error(ErrorCode::NotEnoughIdentities, "need P=" + std::to_string(p) + " identities, dataset has " +
                                                    std::to_string(present.size()));
  }
  // Partial Fisher-Yates over identities.
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t j = i + rng.below(present.size() - i);
    std::swap(present[i], present[j]);
  }

  Batch batch;
  batch.p = p;
  batch.k = k;
  batch.record_indices.reserve(p * k);
  for (std::size_t i = 0; i < p; ++i) {
    std::vector<std::size_t> members = groups[present[i]];
    if (members.size() >= k) {
      for (std::size_t a = 0; a < k; ++a) {
        const std::size_t b = a + rng.below(members.size() - a);
        std::swap(members[a], members[b]);
        batch.record_indices.push_back(members[a]);
      }
    } else {
      for (std::size_t a = 0; a < k; ++a) batch.record_indices.push_back(members[rng.below(members.size())]);
    }
  }
  batch.observations = Matrix(batch.record_indices.size(), ds.obs_dim);
  batch.labels.reserve(batch.record_indices.size());
  for (std::size_t i = 0; i < batch.record_indices.size(); ++i) {
    const auto& rec = ds.records[batch.record_indices[i]];
    std::copy(rec.observation.begin(), rec.observation.end(), batch.observations.row(i).begin());
    batch.labels.push_back(rec.identity);
  }
  return batch;
}

std::pair<Dataset, Dataset> split_query_gallery(const Dataset& ds, double fraction, SeededRng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorCode::InvalidConfig, "query fraction must be in (0, 1)");
  const auto groups = ds.by_identity();
  std::vector<bool> to_query(ds.records.size(), false);
  for (std::size_t id = 0; id < groups.size(); ++id) {
    std::vector<std::size_t> members = groups[id];
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw Error(ErrorCode::IdentityTooSmall, "identity " + std::to_string(id) + " has one record");
    }
    const std::size_t n = members.size();
    auto n_query = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    n_query = std::clamp<std::size_t>(n_query, 1, n - 1);
    for (std::size_t a = 0; a < n_query; ++a) {
      const std::size_t b = a + rng.below(n - a);
      std::swap(members[a], members[b]);
      to_query[members[a]] = true;
    }
  }
  Dataset query{{}, ds.num_identities, ds.obs_dim, Split::Query};
  Dataset gallery{{}, ds.num_identities, ds.obs_dim, Split::Gallery};
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    (to_query[i] ? query : gallery).records.push_back(ds.records[i]);
  }
  return {std::move(query), std::move(gallery)};
}

std::string encode_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(ds.num_identities);
  w.u32(ds.obs_dim);
  w.u64(ds.records.size());
  for (const auto& r : ds.records) {
    if (r.observation.size() != ds.obs_dim) {
      throw Error(ErrorCode::CorruptRecord, "observation width mismatch in sample " + std::to_string(r.sample_id));
    }
    w.u64(r.sample_id);
    w.u32(r.identity);
    w.f64(r.viewpoint);
    w.f64s(r.observation);
  }
  return w.data();
}

Dataset decode_dataset(std::string_view bytes, Split split) {
  io::ByteReader r(bytes);
  if (r.remaining() < 4 || r.bytes(4) != kDatasetMagic) throw Error(ErrorCode::CorruptRecord, "bad dataset magic");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw Error(ErrorCode::FormatVersionMismatch, "dataset version " + std::to_string(version));
  }
  Dataset ds;
  ds.split = split;
  ds.num_identities = r.u32();
  ds.obs_dim = r.u32();
  const std::uint64_t count = r.u64();
  const std::uint64_t record_bytes = 8 + 4 + 8 + 8ULL * ds.obs_dim;
  if (count > r.remaining() / record_bytes) {
    throw Error(ErrorCode::CorruptRecord, "declared " + std::to_string(count) + " records, file is truncated");
  }
  ds.records.resize(count);
  for (auto& rec : ds.records) {
    rec.sample_id = r.u64();
    rec.identity = r.u32();
    rec.viewpoint = r.f64();
    rec.observation.resize(ds.obs_dim);
    r.f64s(rec.observation);
  }
  if (!r.done()) throw Error(ErrorCode::CorruptRecord, "trailing bytes after last record");
  validate(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) { io::write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::string& path, Split split) { return decode_dataset(io::read_file(path), split); }

std::string dataset_csv(const Dataset& ds) {
  std::string out = "sample_id,identity,viewpoint";
  for (std::uint32_t d = 0; d < ds.obs_dim; ++d) out += ",obs_" + std::to_string(d);
  out += '\n';
  for (const auto& r : ds.records) {
    out += std::to_string(r.sample_id);
    out += ',';
    out += std::to_string(r.identity);
    out += ',';
    append_double(out, r.viewpoint);
    for (double v : r.observation) {
      out += ',';
      append_double(out, v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace xview::data
