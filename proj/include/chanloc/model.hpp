#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "chanloc/arch.hpp"
#include "chanloc/attention.hpp"
#include "chanloc/batchnorm.hpp"
#include "chanloc/conv.hpp"
#include "chanloc/dense.hpp"
#include "chanloc/pool.hpp"
#include "chanloc/tensor.hpp"

namespace chanloc {

struct AttentionBlock {
  Attention kind = Attention::none;
  CLocalParams<float> clocal;
  SEParams<float> se;
};

// conv -> BN -> ReLU -> attention, each stage optional after the conv.
struct ConvNode {
  std::string name;
  ConvParams<float> conv;
  bool has_bn = false;
  BatchNormParams<float> bn;
  bool relu = false;
  std::optional<AttentionBlock> attention;
};

struct PoolNode {
  std::string name;
};

struct ResNode {
  std::string name;
  ConvNode reduce, spatial, expand;    // 1x1 mid / 3x3 mid / 1x1 out (no relu on expand)
  std::optional<ConvNode> projection;  // 1x1 + BN shortcut when channel counts differ
  std::optional<AttentionBlock> attention;  // gates the branch before the addition
};

using FeatureNode = std::variant<ConvNode, PoolNode, ResNode>;

struct DenseHead {
  std::string name;
  MatrixX<float> weight;
  VectorX<float> bias;
};

// Ordered named parameters of one architecture variant. Doubles as the
// gradient container (zeros_like gives a structurally identical mirror).
struct ModelState {
  ArchSpec spec;
  std::uint64_t arch_fingerprint = 0;
  std::vector<FeatureNode> features;
  std::optional<DenseHead> head;
};

// He-normal conv/dense/attention weights, zero biases, identity BN.
// Every tensor draws from a stream seeded by (seed, parameter name), so
// layers shared between variants receive identical weights.
ModelState build_model(const ArchSpec& spec, std::uint64_t seed);

ModelState zeros_like(const ModelState& m);

struct ForwardOptions {
  Phase phase = Phase::infer;
  GateMode gate = GateMode::learned;
};

struct ConvNodeCache {
  Tensor4f conv_out;
  BatchNormCache<float> bn;
  Tensor4f pre_attention;  // activation feeding the attention block
};
struct PoolNodeCache {
  std::vector<std::uint8_t> argmax;
};
struct ResNodeCache {
  ConvNodeCache reduce, spatial, expand, projection;
  Tensor4f reduce_out, spatial_out, expand_out;
};
using NodeCache = std::variant<ConvNodeCache, PoolNodeCache, ResNodeCache>;

struct Workspace {
  ForwardOptions options;
  Tensor4f input;
  std::vector<Tensor4f> outputs;  // per feature node
  std::vector<NodeCache> caches;
  MatrixX<float> pooled;  // global-average-pool output (n, C)
};

// Returns (n, classes) logits. Train phase updates BN running statistics.
MatrixX<float> model_forward(ModelState& m, const Tensor4f& x, const ForwardOptions& options,
                             Workspace* ws = nullptr);

// Accumulates parameter gradients into `grads` (a zeros_like mirror).
void model_backward(ModelState& m, const Workspace& ws, const MatrixX<float>& grad_logits,
                    ModelState& grads);

enum class ParamKind {
  conv_weight,
  conv_bias,
  bn_gamma,
  bn_beta,
  bn_running_mean,
  bn_running_var,
  dense_weight,
  dense_bias,
  attention_weight,
  attention_bias,
};

struct ParamRef {
  std::string name;
  float* data = nullptr;
  std::size_t size = 0;
  ParamKind kind = ParamKind::conv_weight;
  bool learnable = true;  // false for BN running statistics
};

// Deterministic enumeration of every named tensor (including BN running
// stats). Identical structure yields an identical visit order.
void visit_params(ModelState& m, const std::function<void(const ParamRef&)>& fn);

// Total learnable scalars (BN running statistics excluded).
std::size_t count_params(const ModelState& m);

}  // namespace chanloc
