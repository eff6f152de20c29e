#include "xview/model.hpp"

#include <cmath>
#include <string>

#include "xview/binary_io.hpp"
#include "xview/error.hpp"
#include "xview/kernels.hpp"

namespace xview::model {

namespace {

std::vector<Dense> make_stack(std::uint32_t in, const std::vector<std::uint32_t>& widths) {
  std::vector<Dense> layers;
  for (std::uint32_t w : widths) {
    layers.push_back({Matrix(w, in), Vector(w, 0.0)});
    in = w;
  }
  return layers;
}

Matrix run_stack(const std::vector<Dense>& layers, Matrix h, bool relu_last, StackCache* cache) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Dense& layer = layers[l];
    if (h.cols() != layer.weight.cols()) throw Error(ErrorCode::ShapeMismatch, "layer input width");
    Matrix pre(h.rows(), layer.weight.rows());
    kernels::parallel::affine(h, layer.weight, layer.bias, pre);
    Matrix out = pre;
    if (l + 1 < layers.size() || relu_last) {
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    }
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->preacts.push_back(std::move(pre));
    }
    h = std::move(out);
  }
  return h;
}

/// Returns the gradient w.r.t. the stack input.
Matrix backprop_stack(const std::vector<Dense>& layers, const StackCache& cache, Matrix d_out, bool relu_last,
                      std::vector<Dense>& grads) {
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Matrix& pre = cache.preacts[li];
    if (li + 1 < layers.size() || relu_last) {
      auto dv = d_out.values();
      auto pv = pre.values();
      for (std::size_t i = 0; i < dv.size(); ++i)
        if (!(pv[i] > 0.0)) dv[i] = 0.0;
    }
    kernels::parallel::affine_param_grad(cache.inputs[li], d_out, grads[li].weight, grads[li].bias);
    Matrix d_in(d_out.rows(), layers[li].weight.cols());
    kernels::parallel::affine_input_grad(d_out, layers[li].weight, d_in);
    d_out = std::move(d_in);
  }
  return d_out;
}

void add_into(Matrix& acc, const Matrix& m) {
  auto a = acc.values();
  auto b = m.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

void check_obs(const EncoderParams& p, const Matrix& obs) {
  const std::size_t in = !p.shared.empty() ? p.shared.front().weight.cols()
                         : !p.main_tail.empty() ? p.main_tail.front().weight.cols()
                                                : p.main_head.front().weight.cols();
  if (obs.cols() != in) {
    throw Error(ErrorCode::ShapeMismatch, "observation width " + std::to_string(obs.cols()) + ", encoder expects " +
                                              std::to_string(in));
  }
}

template <typename Tree, typename Fn>
void visit(Tree& tree, Fn&& fn) {
  auto stack = [&](auto& layers, ParamGroup g) {
    for (auto& layer : layers) {
      fn(g, layer.weight.values());
      fn(g, std::span(layer.bias));
    }
  };
  stack(tree.shared, ParamGroup::Shared);
  stack(tree.main_tail, ParamGroup::MainTail);
  stack(tree.main_head, ParamGroup::MainHead);
  fn(ParamGroup::Classifier, tree.classifier.weight.values());
  fn(ParamGroup::Classifier, std::span(tree.classifier.bias));
  stack(tree.wcvl_tail, ParamGroup::WcvlTail);
  stack(tree.wcvl_head, ParamGroup::WcvlHead);
}

template <typename Tree, typename Fn>
void visit_dense(Tree& tree, Fn&& fn) {
  for (auto& l : tree.shared) fn(l);
  for (auto& l : tree.main_tail) fn(l);
  for (auto& l : tree.main_head) fn(l);
  fn(tree.classifier);
  for (auto& l : tree.wcvl_tail) fn(l);
  for (auto& l : tree.wcvl_head) fn(l);
}

}  // namespace

void validate(const ArchConfig& arch) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidArch, what); };
  if (arch.obs_dim == 0) bad("obs_dim must be positive");
  if (arch.shared_depth > arch.trunk.size()) bad("shared_depth exceeds trunk depth");
  if (arch.main_head.empty()) bad("main_head needs at least one layer");
  if (arch.wcvl_head.size() != 2) bad("wcvl_head must have exactly two layers");
  if (arch.main_head.back() != arch.wcvl_head.back()) bad("main and cross-view embedding widths differ");
  if (arch.num_classes < 2) bad("num_classes must be >= 2");
  for (const auto* v : {&arch.trunk, &arch.main_head, &arch.wcvl_head})
    for (auto w : *v)
      if (w == 0) bad("layer widths must be positive");
}

bool is_main_group(ParamGroup g) noexcept {
  return g == ParamGroup::Shared || g == ParamGroup::MainTail || g == ParamGroup::MainHead ||
         g == ParamGroup::Classifier;
}

void for_each_tensor(ParamTree& tree, const std::function<void(ParamGroup, std::span<double>)>& fn) {
  visit(tree, [&](ParamGroup g, std::span<double> s) { fn(g, s); });
}

void for_each_tensor(const ParamTree& tree, const std::function<void(ParamGroup, std::span<const double>)>& fn) {
  visit(tree, [&](ParamGroup g, std::span<const double> s) { fn(g, s); });
}

ParamTree zeros_like(const ParamTree& tree) {
  ParamTree out = tree;
  visit(out, [](ParamGroup, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  return out;
}

std::size_t parameter_count(const ParamTree& tree) {
  std::size_t n = 0;
  for_each_tensor(tree, [&](ParamGroup, std::span<const double> s) { n += s.size(); });
  return n;
}

void require_congruent(const ParamTree& a, const ParamTree& b) {
  std::vector<std::pair<std::size_t, std::size_t>> sa, sb;
  visit_dense(a, [&](const Dense& d) { sa.emplace_back(d.weight.rows(), d.weight.cols()); });
  visit_dense(b, [&](const Dense& d) { sb.emplace_back(d.weight.rows(), d.weight.cols()); });
  if (sa != sb || a.shared.size() != b.shared.size() || a.main_tail.size() != b.main_tail.size() ||
      a.wcvl_tail.size() != b.wcvl_tail.size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter trees are not congruent");
  }
}

ParamTree zero_params(const ArchConfig& arch) {
  validate(arch);
  ParamTree p;
  const std::vector<std::uint32_t> shared(arch.trunk.begin(), arch.trunk.begin() + arch.shared_depth);
  const std::vector<std::uint32_t> tail(arch.trunk.begin() + arch.shared_depth, arch.trunk.end());
  const std::uint32_t shared_out = shared.empty() ? arch.obs_dim : shared.back();
  const std::uint32_t trunk_out = arch.trunk.empty() ? arch.obs_dim : arch.trunk.back();
  p.shared = make_stack(arch.obs_dim, shared);
  p.main_tail = make_stack(shared_out, tail);
  p.main_head = make_stack(trunk_out, arch.main_head);
  p.classifier = {Matrix(arch.num_classes, arch.embedding_dim()), Vector(arch.num_classes, 0.0)};
  p.wcvl_tail = make_stack(shared_out, tail);
  p.wcvl_head = make_stack(trunk_out, arch.wcvl_head);
  return p;
}

EncoderParams init_params(const ArchConfig& arch, SeededRng& rng) {
  EncoderParams p = zero_params(arch);
  visit_dense(p, [&](Dense& d) {
    const double limit = std::sqrt(6.0 / static_cast<double>(d.weight.cols()));
    for (double& w : d.weight.values()) w = rng.uniform(-limit, limit);
  });
  return p;
}

ForwardPass forward(const EncoderParams& p, const Matrix& obs, ForwardRequest request) {
  check_obs(p, obs);
  ForwardPass pass;
  pass.request = request;
  pass.request.logits = request.logits && request.main;
  const Matrix h_shared = run_stack(p.shared, obs, true, &pass.shared);
  if (request.main) {
    Matrix h = run_stack(p.main_tail, h_shared, true, &pass.main_tail);
    pass.x_g = run_stack(p.main_head, std::move(h), false, &pass.main_head);
    if (pass.request.logits) {
      pass.logits = run_stack(std::vector<Dense>{p.classifier}, pass.x_g, false, &pass.classifier);
    }
  }
  if (request.wcvl) {
    Matrix h = run_stack(p.wcvl_tail, h_shared, true, &pass.wcvl_tail);
    pass.x_cv = run_stack(p.wcvl_head, std::move(h), false, &pass.wcvl_head);
  }
  return pass;
}

MainOutput forward_main(const EncoderParams& p, const Matrix& obs, bool with_logits) {
  check_obs(p, obs);
  Matrix h = run_stack(p.shared, obs, true, nullptr);
  h = run_stack(p.main_tail, std::move(h), true, nullptr);
  MainOutput out{run_stack(p.main_head, std::move(h), false, nullptr), std::nullopt};
  if (with_logits) out.logits = run_stack(std::vector<Dense>{p.classifier}, out.x_g, false, nullptr);
  return out;
}

Matrix forward_wcvl(const EncoderParams& p, const Matrix& obs) {
  check_obs(p, obs);
  Matrix h = run_stack(p.shared, obs, true, nullptr);
  h = run_stack(p.wcvl_tail, std::move(h), true, nullptr);
  return run_stack(p.wcvl_head, std::move(h), false, nullptr);
}

std::vector<Matrix> trunk_activations(const EncoderParams& p, const Matrix& obs, Branch branch) {
  check_obs(p, obs);
  std::vector<Matrix> acts;
  Matrix h = obs;
  const auto& tail = branch == Branch::Main ? p.main_tail : p.wcvl_tail;
  for (const auto* stack : {&p.shared, &tail}) {
    for (const Dense& layer : *stack) {
      h = run_stack(std::vector<Dense>{layer}, std::move(h), true, nullptr);
      acts.push_back(h);
    }
  }
  return acts;
}

Gradients backward(const EncoderParams& p, const ForwardPass& pass, const Upstream& up) {
  Gradients g = zeros_like(p);
  auto check = [](const std::optional<Matrix>& m, const Matrix& ref, bool available, const char* what) {
    if (!m) return;
    if (!available) throw Error(ErrorCode::ShapeMismatch, std::string(what) + " gradient without forward output");
    if (m->rows() != ref.rows() || m->cols() != ref.cols()) {
      throw Error(ErrorCode::ShapeMismatch, std::string(what) + " gradient shape");
    }
  };
  check(up.d_x_g, pass.x_g, pass.request.main, "x_g");
  check(up.d_logits, pass.logits, pass.request.logits, "logits");
  check(up.d_x_cv, pass.x_cv, pass.request.wcvl, "x_cv");

  std::optional<Matrix> d_shared;
  auto accumulate = [&](Matrix d) {
    if (!d_shared) d_shared = std::move(d);
    else add_into(*d_shared, d);
  };

  if (up.d_x_g || up.d_logits) {
    Matrix d_xg = up.d_x_g ? *up.d_x_g : Matrix(pass.x_g.rows(), pass.x_g.cols());
    if (up.d_logits) {
      std::vector<Dense> cls_grad{g.classifier};
      Matrix d = backprop_stack(std::vector<Dense>{p.classifier}, pass.classifier, *up.d_logits, false, cls_grad);
      g.classifier = std::move(cls_grad.front());
      add_into(d_xg, d);
    }
    Matrix d = backprop_stack(p.main_head, pass.main_head, std::move(d_xg), false, g.main_head);
    accumulate(backprop_stack(p.main_tail, pass.main_tail, std::move(d), true, g.main_tail));
  }
  if (up.d_x_cv) {
    Matrix d = backprop_stack(p.wcvl_head, pass.wcvl_head, *up.d_x_cv, false, g.wcvl_head);
    accumulate(backprop_stack(p.wcvl_tail, pass.wcvl_tail, std::move(d), true, g.wcvl_tail));
  }
  if (d_shared && !p.shared.empty()) {
    backprop_stack(p.shared, pass.shared, std::move(*d_shared), true, g.shared);
  }
  return g;
}

std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::Init: return "init";
    case Stage::Main: return "main";
    case Stage::Wcvl: return "wcvl";
    case Stage::SingleModule: return "single_module";
  }
  return "unknown";
}

std::string_view to_string(WcvlMode m) noexcept {
  switch (m) {
    case WcvlMode::None: return "none";
    case WcvlMode::Pluggable: return "pluggable";
    case WcvlMode::EndToEnd: return "end_to_end";
  }
  return "unknown";
}

namespace {

void write_widths(io::ByteWriter& w, const std::vector<std::uint32_t>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (auto x : v) w.u32(x);
}

std::vector<std::uint32_t> read_widths(io::ByteReader& r) {
  const std::uint32_t n = r.u32();
  if (n > r.remaining() / 4) throw Error(ErrorCode::CorruptRecord, "layer list length");
  std::vector<std::uint32_t> v(n);
  for (auto& x : v) x = r.u32();
  return v;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const ArchConfig& a = ckpt.arch;
  w.u32(a.obs_dim);
  w.u32(a.num_classes);
  w.u32(a.shared_depth);
  write_widths(w, a.trunk);
  write_widths(w, a.main_head);
  write_widths(w, a.wcvl_head);
  w.u8(static_cast<std::uint8_t>(a.activation));
  const CheckpointMeta& m = ckpt.meta;
  w.u8(static_cast<std::uint8_t>(m.stage));
  w.u8(static_cast<std::uint8_t>(m.mode));
  w.u32(m.epoch);
  w.u64(m.seed);
  w.u64(m.loss_history.size());
  w.f64s(m.loss_history);
  visit_dense(ckpt.params, [&](const Dense& d) {
    w.u32(static_cast<std::uint32_t>(d.weight.rows()));
    w.u32(static_cast<std::uint32_t>(d.weight.cols()));
    w.f64s(d.weight.values());
    w.u32(static_cast<std::uint32_t>(d.bias.size()));
    w.f64s(d.bias);
  });
  return w.data();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < 4 || r.bytes(4) != kCheckpointMagic) throw Error(ErrorCode::CorruptRecord, "bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::FormatVersionMismatch, "checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ArchConfig& a = ckpt.arch;
  a.obs_dim = r.u32();
  a.num_classes = r.u32();
  a.shared_depth = r.u32();
  a.trunk = read_widths(r);
  a.main_head = read_widths(r);
  a.wcvl_head = read_widths(r);
  const std::uint8_t act = r.u8();
  if (act != static_cast<std::uint8_t>(Activation::Relu)) throw Error(ErrorCode::CorruptRecord, "unknown activation");
  try {
    validate(a);
  } catch (const Error& e) {
    throw Error(ErrorCode::ArchMismatch, e.what());
  }
  CheckpointMeta& m = ckpt.meta;
  const std::uint8_t stage = r.u8();
  const std::uint8_t mode = r.u8();
  if (stage > 3 || mode > 2) throw Error(ErrorCode::CorruptRecord, "unknown stage or mode tag");
  m.stage = static_cast<Stage>(stage);
  m.mode = static_cast<WcvlMode>(mode);
  m.epoch = r.u32();
  m.seed = r.u64();
  const std::uint64_t hist = r.u64();
  if (hist > r.remaining() / 8) throw Error(ErrorCode::CorruptRecord, "loss history length");
  m.loss_history.resize(hist);
  r.f64s(m.loss_history);

  ckpt.params = zero_params(a);
  visit_dense(ckpt.params, [&](Dense& d) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != d.weight.rows() || cols != d.weight.cols()) {
      throw Error(ErrorCode::ArchMismatch, "tensor shape disagrees with serialized architecture");
    }
    r.f64s(d.weight.values());
    if (r.u32() != d.bias.size()) throw Error(ErrorCode::ArchMismatch, "bias length disagrees with architecture");
    r.f64s(d.bias);
  });
  if (!r.done()) throw Error(ErrorCode::CorruptRecord, "trailing bytes after last tensor");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

void require_compatible(const ArchConfig& arch, std::uint32_t obs_dim) {
  if (arch.obs_dim != obs_dim) {
    throw Error(ErrorCode::ArchMismatch, "checkpoint expects obs_dim " + std::to_string(arch.obs_dim) +
                                             ", data has " + std::to_string(obs_dim));
  }
}

std::uint64_t fingerprint(const Checkpoint& ckpt) { return fnv1a64(encode_checkpoint(ckpt)); }

}  // namespace xview::model
