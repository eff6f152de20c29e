#ifndef XVIEW_LOSSES_HPP_
#define XVIEW_LOSSES_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "xview/numerics.hpp"

namespace xview::losses {

using Labels = std::span<const std::uint32_t>;

struct LossGrad {
  double loss = 0.0;
  Matrix grad;
};

/// Mean softmax cross-entropy. Gradient is (softmax - onehot) / N.
LossGrad cross_entropy(const Matrix& logits, Labels labels);

/// Per anchor: farthest same-label peer (excluding the anchor's own index)
/// and closest other-label item. Ties go to the lowest index.
struct MiningResult {
  std::vector<std::size_t> positive;
  std::vector<std::size_t> negative;
  std::vector<double> positive_dist;
  std::vector<double> negative_dist;
};

/// Throws NoPositive when some label occurs once, NoNegative when all labels agree.
MiningResult mine_batch_hard(const Matrix& dist, Labels labels);

struct TripletConfig {
  double margin = 0.3;
};

/// Triplet margin alpha plus the weight beta >= 1 on the positive distance.
struct BetaConfig {
  double beta = 1.0;
  double margin = 0.3;
};

struct TripletResult {
  double loss = 0.0;
  Matrix grad;
  MiningResult mining;
  /// Anchors whose hinge is active (slack > 0).
  std::size_t active = 0;
};

/// (1/N) sum_i [d(x_i, x_p) - d(x_i, x_n) + margin]_+ with batch-hard mining
/// on Euclidean distances of the raw embeddings. The subgradient is zero at the
/// hinge kink and a distance contributes no gradient when it is exactly zero.
TripletResult triplet_batch_hard(const Matrix& x, Labels labels, TripletConfig cfg = {});

/// (1/N) sum_i (beta - 1) d(x_i, x_p) + [d(x_i, x_p) - d(x_i, x_n) + margin]_+.
/// beta == 1 reproduces triplet_batch_hard bit for bit.
TripletResult beta_triplet(const Matrix& x, Labels labels, BetaConfig cfg);

enum class MseVariant : std::uint8_t { AsWritten = 0, Squared = 1 };

struct CrossViewResult {
  double loss = 0.0;
  Matrix grad;  // w.r.t. x_cv only
  MiningResult mining;
};

/// Targets are the hardest positives mined in x_g space and held constant.
/// Only positives are needed, so a single-label batch is accepted (the
/// negative fields of `mining` are then empty).
/// AsWritten: (1/N) sum_i ||x_cv,i - x_g,p(i)||_2 (gradient zero at exact coincidence).
/// Squared:   (1/N) sum_i ||x_cv,i - x_g,p(i)||_2^2.
CrossViewResult cross_view_mse(const Matrix& x_cv, const Matrix& x_g, Labels labels,
                               MseVariant variant = MseVariant::AsWritten);

}  // namespace xview::losses

#endif  // XVIEW_LOSSES_HPP_
