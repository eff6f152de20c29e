#ifndef XVIEW_MODEL_HPP_
#define XVIEW_MODEL_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xview/numerics.hpp"
#include "xview/rng.hpp"

namespace xview::model {

enum class Activation : std::uint8_t { Relu = 0 };

/// Encoder layout. Trunk layers [0, shared_depth) are shared by both
/// branches; the rest of the trunk exists once per branch. The main branch
/// continues with main_head and a linear classifier over num_classes; the
/// cross-view branch continues with exactly two affine layers.
struct ArchConfig {
  std::uint32_t obs_dim = 64;
  std::vector<std::uint32_t> trunk{64, 128, 128, 128, 128};
  std::uint32_t shared_depth = 4;
  std::vector<std::uint32_t> main_head{64, 32};
  std::vector<std::uint32_t> wcvl_head{64, 32};
  std::uint32_t num_classes = 50;
  Activation activation = Activation::Relu;

  std::uint32_t embedding_dim() const { return main_head.back(); }
  bool operator==(const ArchConfig&) const = default;
};

/// Throws InvalidArch.
void validate(const ArchConfig& arch);

struct Dense {
  Matrix weight;  // out x in
  Vector bias;    // out

  bool operator==(const Dense&) const = default;
};

enum class ParamGroup : std::uint8_t { Shared, MainTail, MainHead, Classifier, WcvlTail, WcvlHead };

/// One tensor tree type serves parameters, gradients and optimizer moments.
struct ParamTree {
  std::vector<Dense> shared;
  std::vector<Dense> main_tail;
  std::vector<Dense> main_head;
  Dense classifier;
  std::vector<Dense> wcvl_tail;
  std::vector<Dense> wcvl_head;

  bool operator==(const ParamTree&) const = default;
};

using EncoderParams = ParamTree;
using Gradients = ParamTree;

bool is_main_group(ParamGroup g) noexcept;

/// Visits every tensor (weight then bias per layer) in declaration order.
void for_each_tensor(ParamTree& tree, const std::function<void(ParamGroup, std::span<double>)>& fn);
void for_each_tensor(const ParamTree& tree, const std::function<void(ParamGroup, std::span<const double>)>& fn);

/// Same shape tree, every entry zero.
ParamTree zeros_like(const ParamTree& tree);
std::size_t parameter_count(const ParamTree& tree);
/// Throws ShapeMismatch unless both trees have identical tensor shapes.
void require_congruent(const ParamTree& a, const ParamTree& b);
/// Shapes implied by an architecture, zero filled.
ParamTree zero_params(const ArchConfig& arch);

/// Weights uniform in [-sqrt(6/fan_in), sqrt(6/fan_in)], biases zero.
EncoderParams init_params(const ArchConfig& arch, SeededRng& rng);

/// Inputs and pre-activations of a layer stack, kept for the backward pass.
struct StackCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> preacts;
};

struct MainOutput {
  Matrix x_g;
  std::optional<Matrix> logits;
};

MainOutput forward_main(const EncoderParams& p, const Matrix& obs, bool with_logits);
Matrix forward_wcvl(const EncoderParams& p, const Matrix& obs);

/// Trunk activations (post-ReLU) seen by one branch, one matrix per trunk layer.
enum class Branch { Main, Wcvl };
std::vector<Matrix> trunk_activations(const EncoderParams& p, const Matrix& obs, Branch branch);

struct ForwardRequest {
  bool main = true;
  bool logits = true;
  bool wcvl = true;
};

/// Outputs plus cached intermediates for backward().
struct ForwardPass {
  ForwardRequest request;
  Matrix x_g;
  Matrix logits;
  Matrix x_cv;
  StackCache shared;
  StackCache main_tail;
  StackCache main_head;
  StackCache classifier;
  StackCache wcvl_tail;
  StackCache wcvl_head;
};

ForwardPass forward(const EncoderParams& p, const Matrix& obs, ForwardRequest request = {});

/// Upstream loss gradients; an absent entry contributes nothing.
struct Upstream {
  std::optional<Matrix> d_x_g;
  std::optional<Matrix> d_logits;
  std::optional<Matrix> d_x_cv;
};

/// Exact reverse-mode gradients of sum(upstream . outputs) w.r.t. every parameter.
Gradients backward(const EncoderParams& p, const ForwardPass& pass, const Upstream& upstream);

enum class Stage : std::uint8_t { Init = 0, Main = 1, Wcvl = 2, SingleModule = 3 };
enum class WcvlMode : std::uint8_t { None = 0, Pluggable = 1, EndToEnd = 2 };

std::string_view to_string(Stage s) noexcept;
std::string_view to_string(WcvlMode m) noexcept;

struct CheckpointMeta {
  Stage stage = Stage::Init;
  WcvlMode mode = WcvlMode::None;
  std::uint32_t epoch = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_history;

  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  ArchConfig arch;
  EncoderParams params;
  CheckpointMeta meta;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::string_view kCheckpointMagic = "XVCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatVersionMismatch, CorruptRecord, or ArchMismatch when the
/// tensors do not match the serialized architecture.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Throws ArchMismatch when an input width or class count disagrees.
void require_compatible(const ArchConfig& arch, std::uint32_t obs_dim);

/// FNV-1a over the encoded checkpoint bytes.
std::uint64_t fingerprint(const Checkpoint& ckpt);

}  // namespace xview::model

#endif  // XVIEW_MODEL_HPP_
