#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "xview/error.hpp"
#include "xview/model.hpp"

namespace xview::model {
namespace {

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an xview::Error";
  return ErrorCode::Io;
}

ArchConfig small_arch() {
  ArchConfig a;
  a.obs_dim = 5;
  a.trunk = {7, 6, 6};
  a.shared_depth = 2;
  a.main_head = {5, 4};
  a.wcvl_head = {5, 4};
  a.num_classes = 3;
  return a;
}

Matrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

// Randomizes biases too so that gradient checks exercise them.
EncoderParams random_params(const ArchConfig& arch, std::uint64_t seed) {
  SeededRng rng(seed);
  auto p = init_params(arch, rng);
  for_each_tensor(p, [&](ParamGroup, std::span<double> s) {
    for (double& v : s) v += rng.uniform(-0.1, 0.1);
  });
  return p;
}

// Straight-line reference: one layer at a time with explicit loops.
Matrix layer(const Dense& d, const Matrix& x, bool relu) {
  Matrix out(x.rows(), d.weight.rows());
  for (std::size_t n = 0; n < x.rows(); ++n) {
    for (std::size_t o = 0; o < d.weight.rows(); ++o) {
      double s = d.bias[o];
      for (std::size_t i = 0; i < d.weight.cols(); ++i) s += d.weight(o, i) * x(n, i);
      out(n, o) = relu ? std::max(0.0, s) : s;
    }
  }
  return out;
}

Matrix oracle_branch(const EncoderParams& p, const Matrix& obs, bool main) {
  Matrix h = obs;
  for (const auto& d : p.shared) h = layer(d, h, true);
  for (const auto& d : main ? p.main_tail : p.wcvl_tail) h = layer(d, h, true);
  const auto& head = main ? p.main_head : p.wcvl_head;
  for (std::size_t l = 0; l < head.size(); ++l) h = layer(head[l], h, l + 1 < head.size());
  return h;
}

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], tol) << "entry " << i;
}

TEST(Arch, DefaultShapes) {
  ArchConfig a;
  validate(a);
  const auto p = zero_params(a);
  ASSERT_EQ(p.shared.size(), 4u);
  ASSERT_EQ(p.main_tail.size(), 1u);
  ASSERT_EQ(p.wcvl_tail.size(), 1u);
  EXPECT_EQ(p.shared[0].weight.rows(), 64u);
  EXPECT_EQ(p.shared[0].weight.cols(), 64u);
  EXPECT_EQ(p.shared[1].weight.rows(), 128u);
  EXPECT_EQ(p.main_head[1].weight.rows(), 32u);
  EXPECT_EQ(p.classifier.weight.rows(), 50u);
  EXPECT_EQ(p.classifier.weight.cols(), 32u);
  EXPECT_EQ(p.wcvl_head.size(), 2u);
  EXPECT_EQ(a.embedding_dim(), 32u);
}

TEST(Arch, RejectsInvalidLayouts) {
  auto a = small_arch();
  a.shared_depth = 4;
  EXPECT_EQ(code_of([&] { validate(a); }), ErrorCode::InvalidArch);
  a = small_arch();
  a.wcvl_head = {4};
  EXPECT_EQ(code_of([&] { validate(a); }), ErrorCode::InvalidArch);
  a = small_arch();
  a.wcvl_head = {5, 3};
  EXPECT_EQ(code_of([&] { validate(a); }), ErrorCode::InvalidArch);
  a = small_arch();
  a.trunk = {7, 0, 6};
  EXPECT_EQ(code_of([&] { validate(a); }), ErrorCode::InvalidArch);
}

TEST(Init, HeUniformBoundsAndZeroBias) {
  ArchConfig a;
  SeededRng rng(1);
  const auto p = init_params(a, rng);
  std::size_t layers = 0;
  auto check = [&](const Dense& d) {
    const double limit = std::sqrt(6.0 / static_cast<double>(d.weight.cols()));
    double max_abs = 0.0;
    for (double w : d.weight.values()) {
      ASSERT_LE(std::abs(w), limit);
      max_abs = std::max(max_abs, std::abs(w));
    }
    EXPECT_GT(max_abs, 0.9 * limit);  // the whole range is used
    for (double b : d.bias) EXPECT_EQ(b, 0.0);
    ++layers;
  };
  for (const auto* v : {&p.shared, &p.main_tail, &p.main_head, &p.wcvl_tail, &p.wcvl_head})
    for (const auto& d : *v) check(d);
  check(p.classifier);
  EXPECT_EQ(layers, 4u + 1u + 2u + 1u + 2u + 1u);
}

TEST(Init, SameSeedSameParams) {
  SeededRng a(5), b(5), c(6);
  const auto pa = init_params(ArchConfig{}, a);
  EXPECT_EQ(pa, init_params(ArchConfig{}, b));
  EXPECT_NE(pa, init_params(ArchConfig{}, c));
}

TEST(Forward, HandComputedGolden) {
  // obs 2 -> trunk [2] (shared) -> main head [2]; cross-view head [2, 2]; 2 classes.
  ArchConfig a;
  a.obs_dim = 2;
  a.trunk = {2};
  a.shared_depth = 1;
  a.main_head = {2};
  a.wcvl_head = {2, 2};
  a.num_classes = 2;
  auto p = zero_params(a);
  p.shared[0] = {Matrix::from_rows({{1, -1}, {2, 1}}), {0.5, -4}};
  p.main_head[0] = {Matrix::from_rows({{1, 0}, {1, 1}}), {0, 1}};
  p.classifier = {Matrix::from_rows({{1, 1}, {-1, 2}}), {0, 0}};
  p.wcvl_head[0] = {Matrix::from_rows({{0, 1}, {1, 0}}), {-10, 0}};
  p.wcvl_head[1] = {Matrix::from_rows({{1, 1}, {2, 0}}), {0, 1}};
  const auto obs = Matrix::from_rows({{3, 1}});
  // trunk pre (2.5, 3) -> relu (2.5, 3); x_g = (2.5, 6.5); logits = (9, 10.5)
  // cross-view: pre (-7, 2.5) -> relu (0, 2.5); x_cv = (2.5, 1)
  const auto out = forward_main(p, obs, true);
  EXPECT_EQ(out.x_g, Matrix::from_rows({{2.5, 6.5}}));
  EXPECT_EQ(*out.logits, Matrix::from_rows({{9, 10.5}}));
  EXPECT_EQ(forward_wcvl(p, obs), Matrix::from_rows({{2.5, 1}}));
  // Negative trunk pre-activation is clamped.
  const auto neg = forward_main(p, Matrix::from_rows({{0, 1}}), false);
  // trunk pre (-0.5, -3) -> (0, 0); x_g = (0, 1)
  EXPECT_EQ(neg.x_g, Matrix::from_rows({{0, 1}}));
  EXPECT_FALSE(neg.logits.has_value());
}

TEST(Forward, MatchesStraightLineReference) {
  const auto a = small_arch();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = random_params(a, seed);
    SeededRng rng(seed + 100);
    const auto obs = random_matrix(rng, 9, a.obs_dim);
    expect_near(forward_main(p, obs, false).x_g, oracle_branch(p, obs, true), 1e-12);
    expect_near(forward_wcvl(p, obs), oracle_branch(p, obs, false), 1e-12);
    const auto pass = forward(p, obs);
    EXPECT_EQ(pass.x_g, forward_main(p, obs, false).x_g);
    EXPECT_EQ(pass.x_cv, forward_wcvl(p, obs));
    EXPECT_EQ(pass.logits, *forward_main(p, obs, true).logits);
  }
}

TEST(Forward, RowsAreIndependent) {
  const auto a = small_arch();
  const auto p = random_params(a, 3);
  SeededRng rng(8);
  const auto obs = random_matrix(rng, 6, a.obs_dim);
  const auto full = forward_main(p, obs, true);
  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t idx[] = {i};
    const auto one = forward_main(p, obs.gather_rows(idx), true);
    for (std::size_t c = 0; c < full.x_g.cols(); ++c) EXPECT_EQ(one.x_g(0, c), full.x_g(i, c));
  }
}

TEST(Forward, TrunkSharingFollowsSharedDepth) {
  SeededRng orng(4);
  const auto obs = random_matrix(orng, 5, 5);
  for (std::uint32_t depth = 0; depth <= 3; ++depth) {
    auto a = small_arch();
    a.shared_depth = depth;
    const auto p = random_params(a, 9);
    const auto m = trunk_activations(p, obs, Branch::Main);
    const auto w = trunk_activations(p, obs, Branch::Wcvl);
    ASSERT_EQ(m.size(), 3u);
    ASSERT_EQ(w.size(), 3u);
    for (std::size_t l = 0; l < 3; ++l) {
      if (l < depth) EXPECT_EQ(m[l], w[l]) << "layer " << l;
      else EXPECT_NE(m[l], w[l]) << "layer " << l;
    }
  }
}

TEST(Forward, FullySharedWithCopiedHeadGivesIdenticalEmbeddings) {
  auto a = small_arch();
  a.shared_depth = 3;
  auto p = random_params(a, 2);
  p.wcvl_head = p.main_head;
  SeededRng rng(3);
  const auto obs = random_matrix(rng, 4, a.obs_dim);
  EXPECT_EQ(forward_wcvl(p, obs), forward_main(p, obs, false).x_g);
}

TEST(Forward, InputWidthMismatch) {
  const auto p = random_params(small_arch(), 1);
  EXPECT_EQ(code_of([&] { forward_main(p, Matrix(2, 4), false); }), ErrorCode::ShapeMismatch);
}

// Backward: gradient of sum(U_g . x_g + U_l . logits + U_cv . x_cv) against central differences.
class BackwardCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(BackwardCheck, MatchesFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  auto a = small_arch();
  a.shared_depth = static_cast<std::uint32_t>(seed % 4);
  auto p = random_params(a, seed);
  SeededRng rng(seed * 7 + 1);
  const auto obs = random_matrix(rng, 4, a.obs_dim);
  Upstream up;
  up.d_x_g = random_matrix(rng, 4, a.embedding_dim());
  up.d_logits = random_matrix(rng, 4, a.num_classes);
  up.d_x_cv = random_matrix(rng, 4, a.embedding_dim());

  auto objective = [&](const EncoderParams& q) {
    const auto pass = forward(q, obs);
    double s = 0.0;
    for (std::size_t i = 0; i < pass.x_g.size(); ++i) s += up.d_x_g->values()[i] * pass.x_g.values()[i];
    for (std::size_t i = 0; i < pass.logits.size(); ++i) s += up.d_logits->values()[i] * pass.logits.values()[i];
    for (std::size_t i = 0; i < pass.x_cv.size(); ++i) s += up.d_x_cv->values()[i] * pass.x_cv.values()[i];
    return s;
  };
  const auto grads = backward(p, forward(p, obs), up);

  std::vector<double> analytic;
  for_each_tensor(grads, [&](ParamGroup, std::span<const double> s) { analytic.insert(analytic.end(), s.begin(), s.end()); });
  std::vector<double*> slots;
  for_each_tensor(p, [&](ParamGroup, std::span<double> s) {
    for (double& v : s) slots.push_back(&v);
  });
  ASSERT_EQ(slots.size(), analytic.size());
  const double h = 1e-6;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double keep = *slots[i];
    *slots[i] = keep + h;
    const double up_v = objective(p);
    *slots[i] = keep - h;
    const double down_v = objective(p);
    *slots[i] = keep;
    const double numeric = (up_v - down_v) / (2 * h);
    EXPECT_NEAR(analytic[i], numeric, 1e-6 * std::max(1.0, std::abs(numeric))) << "parameter " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, BackwardCheck, ::testing::Range<std::uint64_t>(1, 9));

TEST(Backward, AbsentUpstreamLeavesBranchUntouched) {
  const auto a = small_arch();
  const auto p = random_params(a, 5);
  SeededRng rng(6);
  const auto obs = random_matrix(rng, 3, a.obs_dim);
  Upstream up;
  up.d_x_cv = random_matrix(rng, 3, a.embedding_dim());
  const auto g = backward(p, forward(p, obs), up);
  for_each_tensor(g, [&](ParamGroup group, std::span<const double> s) {
    if (group == ParamGroup::MainTail || group == ParamGroup::MainHead || group == ParamGroup::Classifier) {
      for (double v : s) EXPECT_EQ(v, 0.0);
    }
  });
}

TEST(ParamTree, CountsAndCongruence) {
  const auto a = small_arch();
  const auto p = zero_params(a);
  // shared 5*7+7 + 7*6+6 ; tails 6*6+6 each ; main head 6*5+5 + 5*4+4 ; same for wcvl head ; classifier 4*3+3
  EXPECT_EQ(parameter_count(p), 42u + 48u + 2 * 42u + 2 * (35u + 24u) + 15u);
  require_congruent(p, zeros_like(random_params(a, 1)));
  auto b = a;
  b.trunk[2] = 5;
  EXPECT_EQ(code_of([&] { require_congruent(p, zero_params(b)); }), ErrorCode::ShapeMismatch);
}

TEST(Checkpoint, RoundTrip) {
  Checkpoint c{small_arch(), random_params(small_arch(), 3), {Stage::Wcvl, WcvlMode::EndToEnd, 12, 99, {1.5, 0.25}}};
  const auto bytes = encode_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 4), "XVCK");
  EXPECT_EQ(decode_checkpoint(bytes), c);
  const auto path = (std::filesystem::temp_directory_path() / "xview_model_test.xvck").string();
  save_checkpoint(c, path);
  EXPECT_EQ(load_checkpoint(path), c);
  std::filesystem::remove(path);
  EXPECT_EQ(fingerprint(c), fingerprint(decode_checkpoint(bytes)));
  auto d = c;
  d.params.classifier.bias[0] = std::nextafter(d.params.classifier.bias[0], 1.0);
  EXPECT_NE(fingerprint(c), fingerprint(d));
}

TEST(Checkpoint, Malformed) {
  Checkpoint c{small_arch(), random_params(small_arch(), 3), {}};
  auto bytes = encode_checkpoint(c);
  EXPECT_EQ(code_of([&] { decode_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 1)); }),
            ErrorCode::CorruptRecord);
  auto versioned = bytes;
  versioned[4] = 9;
  EXPECT_EQ(code_of([&] { decode_checkpoint(versioned); }), ErrorCode::FormatVersionMismatch);
  EXPECT_EQ(code_of([] { load_checkpoint("/nonexistent/x.xvck"); }), ErrorCode::Io);
}

TEST(Checkpoint, TensorsMustMatchArchitecture) {
  Checkpoint c{small_arch(), random_params(small_arch(), 3), {}};
  c.params.main_head[0].weight = Matrix(5, 5);
  EXPECT_EQ(code_of([&] { decode_checkpoint(encode_checkpoint(c)); }), ErrorCode::ArchMismatch);
}

TEST(Checkpoint, CompatibilityWithData) {
  const auto a = small_arch();
  require_compatible(a, 5);
  EXPECT_EQ(code_of([&] { require_compatible(a, 6); }), ErrorCode::ArchMismatch);
}

}  // namespace
}  // namespace xview::model
