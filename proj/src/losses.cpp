#include "xview/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "xview/error.hpp"

namespace xview::losses {

namespace {

void check_rows(const Matrix& m, Labels labels, const char* what) {
  if (m.rows() != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": " + std::to_string(m.rows()) + " rows, " +
                                              std::to_string(labels.size()) + " labels");
  }
}

// Adds coeff * d/dx_a ||x_a - x_b|| to row a and its negation to row b.
void add_distance_grad(const Matrix& x, std::size_t a, std::size_t b, double dist, double coeff, Matrix& grad) {
  if (coeff == 0.0 || dist == 0.0) return;
  const double s = coeff / dist;
  for (std::size_t k = 0; k < x.cols(); ++k) {
    const double g = s * (x(a, k) - x(b, k));
    grad(a, k) += g;
    grad(b, k) -= g;
  }
}

TripletResult weighted_triplet(const Matrix& x, Labels labels, double beta, double margin) {
  check_rows(x, labels, "triplet");
  if (!(margin >= 0.0)) throw Error(ErrorCode::InvalidConfig, "triplet margin must be >= 0");
  if (!(beta >= 1.0)) throw Error(ErrorCode::InvalidConfig, "beta must be >= 1");
  TripletResult out;
  out.mining = mine_batch_hard(pairwise_euclidean(x, x), labels);
  out.grad = Matrix(x.rows(), x.cols());
  const std::size_t n = x.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double pull = beta - 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d_ap = out.mining.positive_dist[i];
    const double d_an = out.mining.negative_dist[i];
    const double slack = d_ap - d_an + margin;
    const bool active = slack > 0.0;
    total += pull * d_ap + (active ? slack : 0.0);
    out.active += active ? 1 : 0;
    const double pos_coeff = pull + (active ? 1.0 : 0.0);
    const double neg_coeff = active ? -1.0 : 0.0;
    add_distance_grad(x, i, out.mining.positive[i], d_ap, pos_coeff * inv_n, out.grad);
    add_distance_grad(x, i, out.mining.negative[i], d_an, neg_coeff * inv_n, out.grad);
  }
  out.loss = total * inv_n;
  return out;
}

}  // namespace

LossGrad cross_entropy(const Matrix& logits, Labels labels) {
  check_rows(logits, labels, "cross_entropy");
  if (labels.empty()) throw Error(ErrorCode::ShapeMismatch, "cross_entropy needs at least one sample");
  const std::size_t n = logits.rows();
  const std::size_t m = logits.cols();
  LossGrad out{0.0, Matrix(n, m)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= m) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(labels[i]) + " with " +
                                                  std::to_string(m) + " classes");
    }
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = std::log(z);
    out.loss -= (row[labels[i]] - mx - log_z);
    for (std::size_t j = 0; j < m; ++j) {
      const double prob = std::exp(row[j] - mx - log_z);
      out.grad(i, j) = (prob - (j == labels[i] ? 1.0 : 0.0)) * inv_n;
    }
  }
  out.loss *= inv_n;
  return out;
}

namespace {

// With need_negative false a single-label batch is accepted and the negative
// fields come back empty.
MiningResult mine(const Matrix& dist, Labels labels, bool need_negative) {
  const std::size_t n = labels.size();
  if (dist.rows() != n || dist.cols() != n) throw Error(ErrorCode::ShapeMismatch, "distance matrix must be N x N");
  std::map<std::uint32_t, std::size_t> counts;
  for (auto y : labels) ++counts[y];
  for (const auto& [label, c] : counts) {
    if (c < 2) throw Error(ErrorCode::NoPositive, "label " + std::to_string(label) + " occurs once");
  }
  const bool single = counts.size() < 2;
  if (single && need_negative) throw Error(ErrorCode::NoNegative, "batch holds a single label");

  MiningResult r;
  r.positive.resize(n);
  r.positive_dist.resize(n);
  if (!single) {
    r.negative.resize(n);
    r.negative_dist.resize(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    bool have_pos = false;
    bool have_neg = false;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = dist(i, j);
      if (labels[j] == labels[i]) {
        if (j == i) continue;
        if (!have_pos || d > r.positive_dist[i]) {
          r.positive[i] = j;
          r.positive_dist[i] = d;
          have_pos = true;
        }
      } else if (!have_neg || d < r.negative_dist[i]) {
        r.negative[i] = j;
        r.negative_dist[i] = d;
        have_neg = true;
      }
    }
  }
  return r;
}

}  // namespace

MiningResult mine_batch_hard(const Matrix& dist, Labels labels) { return mine(dist, labels, true); }

TripletResult triplet_batch_hard(const Matrix& x, Labels labels, TripletConfig cfg) {
  return weighted_triplet(x, labels, 1.0, cfg.margin);
}

TripletResult beta_triplet(const Matrix& x, Labels labels, BetaConfig cfg) {
  return weighted_triplet(x, labels, cfg.beta, cfg.margin);
}

CrossViewResult cross_view_mse(const Matrix& x_cv, const Matrix& x_g, Labels labels, MseVariant variant) {
  check_rows(x_g, labels, "cross_view_mse");
  if (x_cv.rows() != x_g.rows() || x_cv.cols() != x_g.cols()) {
    throw Error(ErrorCode::DimMismatch, "cross-view and target embeddings differ in shape");
  }
  CrossViewResult out;
  out.mining = mine(pairwise_euclidean(x_g, x_g), labels, false);
  out.grad = Matrix(x_cv.rows(), x_cv.cols());
  const std::size_t n = x_cv.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  Vector residual(x_cv.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto target = x_g.row(out.mining.positive[i]);
    const auto pred = x_cv.row(i);
    double sq = 0.0;
    for (std::size_t k = 0; k < residual.size(); ++k) {
      residual[k] = pred[k] - target[k];
      sq += residual[k] * residual[k];
    }
    if (variant == MseVariant::Squared) {
      total += sq;
      for (std::size_t k = 0; k < residual.size(); ++k) out.grad(i, k) = 2.0 * residual[k] * inv_n;
    } else {
      const double norm = std::sqrt(sq);
      total += norm;
      if (norm > 0.0) {
        for (std::size_t k = 0; k < residual.size(); ++k) out.grad(i, k) = residual[k] / norm * inv_n;
      }
    }
  }
  out.loss = total * inv_n;
  return out;
}

}  // namespace xview::losses
