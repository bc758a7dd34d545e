#include "chanloc/model.hpp"

#include <span>
#include <stdexcept>

#include "chanloc/activations.hpp"
#include "chanloc/rng.hpp"

namespace chanloc {

namespace {

AttentionBlock make_attention(Attention kind, std::size_t channels, std::size_t strand_ratio,
                              std::uint64_t seed, const std::string& name) {
  AttentionBlock block;
  block.kind = kind;
  Rng rng(seed_for(seed, name + "/attn"));
  if (kind == Attention::clocal) {
    block.clocal = make_clocal_params<float>(channels, rng, strand_ratio);
  } else if (kind == Attention::se) {
    block.se = make_se_params<float>(channels, rng);
  }
  return block;
}

ConvNode make_conv_node(const std::string& name, std::size_t in_c, std::size_t out_c,
                        std::size_t kernel, std::size_t stride, Padding padding, bool bn,
                        bool relu, std::uint64_t seed) {
  ConvNode node;
  node.name = name;
  node.conv.kernels = Tensor4f(out_c, in_c, kernel, kernel);
  node.conv.bias.assign(out_c, 0.0f);
  node.conv.stride = stride;
  node.conv.padding = padding;
  Rng rng(seed_for(seed, name + "/weight"));
  he_normal_fill(std::span<float>(node.conv.kernels.data()), in_c * kernel * kernel, rng);
  node.has_bn = bn;
  if (bn) node.bn = make_batchnorm_params<float>(out_c);
  node.relu = relu;
  return node;
}

Tensor4f attention_forward(const AttentionBlock& block, const Tensor4f& x, GateMode gate) {
  if (block.kind == Attention::clocal) return clocal_forward(x, block.clocal, gate);
  if (block.kind == Attention::se) return se_forward(x, block.se, gate);
  return x;
}

// grad w.r.t. the block input; parameter grads accumulate into `gblock`.
Tensor4f attention_backward(const AttentionBlock& block, const Tensor4f& x,
                            const Tensor4f& grad_out, GateMode gate, AttentionBlock& gblock) {
  if (gate == GateMode::identity || block.kind == Attention::none) return grad_out;
  if (block.kind == Attention::clocal) {
    CLocalGrads<float> g = clocal_backward(x, block.clocal, grad_out);
    gblock.clocal.stage1_w += g.stage1_w;
    gblock.clocal.stage1_b += g.stage1_b;
    gblock.clocal.stage2_w += g.stage2_w;
    gblock.clocal.stage2_b += g.stage2_b;
    return g.x;
  }
  SEGrads<float> g = se_backward(x, block.se, grad_out);
  gblock.se.w1 += g.w1;
  gblock.se.b1 += g.b1;
  gblock.se.w2 += g.w2;
  gblock.se.b2 += g.b2;
  return g.x;
}

// Forward through one conv node; `out_is_pre_attention` callers read
// cache.pre_attention when an attention block is attached.
Tensor4f conv_node_forward(ConvNode& node, const Tensor4f& x, const ForwardOptions& options,
                           ConvNodeCache* cache) {
  Tensor4f t = conv2d_forward(x, node.conv);
  if (cache) cache->conv_out = t;
  if (node.has_bn) t = batchnorm_forward(t, node.bn, options.phase, cache ? &cache->bn : nullptr);
  if (node.relu) t = relu(t);
  if (node.attention) {
    if (cache) cache->pre_attention = t;
    t = attention_forward(*node.attention, t, options.gate);
  }
  return t;
}

// Backward through one conv node. `x` is the node input, `out` its output.
Tensor4f conv_node_backward(ConvNode& node, const Tensor4f& x, const Tensor4f& out,
                            const ConvNodeCache& cache, const Tensor4f& grad_out,
                            GateMode gate, ConvNode& gnode) {
  Tensor4f g = grad_out;
  if (node.attention) {
    g = attention_backward(*node.attention, cache.pre_attention, g, gate, *gnode.attention);
  }
  if (node.relu) {
    // The relu output carries the same sign mask as its input.
    const Tensor4f& activated = node.attention ? cache.pre_attention : out;
    g = relu_backward(activated, g);
  }
  if (node.has_bn) {
    BatchNormGrads<float> bg = batchnorm_backward(cache.conv_out, node.bn, cache.bn, g);
    for (std::size_t i = 0; i < bg.gamma.size(); ++i) {
      gnode.bn.gamma[i] += bg.gamma[i];
      gnode.bn.beta[i] += bg.beta[i];
    }
    g = std::move(bg.x);
  }
  ConvGrads<float> cg = conv2d_backward(x, node.conv, g);
  for (std::size_t i = 0; i < cg.kernels.size(); ++i)
    gnode.conv.kernels.data()[i] += cg.kernels.data()[i];
  for (std::size_t i = 0; i < cg.bias.size(); ++i) gnode.conv.bias[i] += cg.bias[i];
  return cg.x;
}

MatrixX<float> global_avg_pool(const Tensor4f& x) {
  MatrixX<float> pooled(x.n(), x.c());
  const float inv_area = 1.0f / static_cast<float>(x.plane_size());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const float* plane = x.plane(n, c);
      float sum = 0.0f;
      for (std::size_t i = 0; i < x.plane_size(); ++i) sum += plane[i];
      pooled(n, c) = sum * inv_area;
    }
  return pooled;
}

}  // namespace

ModelState build_model(const ArchSpec& spec, std::uint64_t seed) {
  validate(spec);
  ModelState m;
  m.spec = spec;
  m.arch_fingerprint = fingerprint(spec);

  std::size_t in_c = spec.in_channels;
  std::size_t conv_index = 0, pool_index = 0, block_index = 0;
  for (const LayerRecord& rec : spec.layers) {
    if (const auto* u = std::get_if<ConvUnit>(&rec)) {
      const std::string name = "conv" + std::to_string(++conv_index);
      ConvNode node = make_conv_node(name, in_c, u->out_channels, u->kernel, u->stride,
                                     Padding::same, u->batch_norm, u->relu, seed);
      if (u->attention)
        node.attention =
            make_attention(spec.attention, u->out_channels, spec.strand_ratio, seed, name);
      m.features.emplace_back(std::move(node));
      in_c = u->out_channels;
    } else if (std::holds_alternative<MaxPoolUnit>(rec)) {
      m.features.emplace_back(PoolNode{"pool" + std::to_string(++pool_index)});
    } else if (const auto* u = std::get_if<ResUnit>(&rec)) {
      const std::string name = "block" + std::to_string(++block_index);
      ResNode node;
      node.name = name;
      node.reduce = make_conv_node(name + "/reduce", in_c, u->mid_channels, 1, 1, Padding::same,
                                   true, true, seed);
      node.spatial = make_conv_node(name + "/spatial", u->mid_channels, u->mid_channels, 3, 1,
                                    Padding::same, true, true, seed);
      node.expand = make_conv_node(name + "/expand", u->mid_channels, u->out_channels, 1, 1,
                                   Padding::same, true, false, seed);
      if (in_c != u->out_channels)
        node.projection = make_conv_node(name + "/proj", in_c, u->out_channels, 1, 1,
                                         Padding::same, true, false, seed);
      if (u->attention)
        node.attention =
            make_attention(spec.attention, u->out_channels, spec.strand_ratio, seed, name);
      m.features.emplace_back(std::move(node));
      in_c = u->out_channels;
    } else if (std::holds_alternative<DenseUnit>(rec)) {
      DenseHead head;
      head.name = "fc";
      head.weight.resize(spec.classes, in_c);
      head.bias = VectorX<float>::Zero(spec.classes);
      Rng rng(seed_for(seed, "fc/weight"));
      he_normal_fill(std::span<float>(head.weight.data(), head.weight.size()), in_c, rng);
      m.head = std::move(head);
    }
    // GlobalPoolUnit carries no parameters.
  }
  return m;
}

ModelState zeros_like(const ModelState& m) {
  ModelState z = m;
  visit_params(z, [](const ParamRef& p) {
    for (std::size_t i = 0; i < p.size; ++i) p.data[i] = 0.0f;
  });
  return z;
}

MatrixX<float> model_forward(ModelState& m, const Tensor4f& x, const ForwardOptions& options,
                             Workspace* ws) {
  if (x.c() != m.spec.in_channels || x.h() != m.spec.in_h || x.w() != m.spec.in_w)
    throw std::invalid_argument("model_forward: input " + x.shape_str() + " does not match " +
                                to_string(m.spec.arch));
  if (ws) {
    ws->options = options;
    ws->input = x;
    ws->outputs.clear();
    ws->caches.clear();
    ws->outputs.reserve(m.features.size());
    ws->caches.reserve(m.features.size());
  }

  Tensor4f t = x;
  for (FeatureNode& fn : m.features) {
    if (auto* node = std::get_if<ConvNode>(&fn)) {
      ConvNodeCache cache;
      t = conv_node_forward(*node, t, options, ws ? &cache : nullptr);
      if (ws) ws->caches.emplace_back(std::move(cache));
    } else if (std::holds_alternative<PoolNode>(fn)) {
      MaxPoolResult<float> r = maxpool2x2_forward(t);
      t = std::move(r.values);
      if (ws) ws->caches.emplace_back(PoolNodeCache{std::move(r.argmax)});
    } else if (auto* node = std::get_if<ResNode>(&fn)) {
      ResNodeCache cache;
      ResNodeCache* c = ws ? &cache : nullptr;
      Tensor4f r = conv_node_forward(node->reduce, t, options, c ? &c->reduce : nullptr);
      Tensor4f s = conv_node_forward(node->spatial, r, options, c ? &c->spatial : nullptr);
      Tensor4f e = conv_node_forward(node->expand, s, options, c ? &c->expand : nullptr);
      Tensor4f branch =
          node->attention ? attention_forward(*node->attention, e, options.gate) : e;
      Tensor4f shortcut = node->projection
                              ? conv_node_forward(*node->projection, t, options,
                                                  c ? &c->projection : nullptr)
                              : t;
      if (c) {
        c->reduce_out = std::move(r);
        c->spatial_out = std::move(s);
        c->expand_out = std::move(e);
      }
      for (std::size_t i = 0; i < branch.size(); ++i)
        branch.data()[i] += shortcut.data()[i];
      for (float& v : branch.data())
        if (v < 0.0f) v = 0.0f;  // relu after the addition
      t = std::move(branch);
      if (ws) ws->caches.emplace_back(std::move(cache));
    }
    if (ws) ws->outputs.push_back(t);
  }

  MatrixX<float> pooled = global_avg_pool(t);
  if (ws) ws->pooled = pooled;
  if (m.head) return dense_forward(pooled, m.head->weight, m.head->bias);
  return pooled;
}

void model_backward(ModelState& m, const Workspace& ws, const MatrixX<float>& grad_logits,
                    ModelState& grads) {
  if (ws.outputs.size() != m.features.size() || ws.caches.size() != m.features.size())
    throw std::invalid_argument("model_backward: workspace does not match model");
  const GateMode gate = ws.options.gate;

  MatrixX<float> grad_pooled;
  if (m.head) {
    DenseGrads<float> dg = dense_backward(ws.pooled, m.head->weight, grad_logits);
    grads.head->weight += dg.weight;
    grads.head->bias += dg.bias;
    grad_pooled = std::move(dg.x);
  } else {
    grad_pooled = grad_logits;
  }

  // Un-pool: the mean spreads uniformly over each plane.
  const Tensor4f& last = ws.outputs.back();
  Tensor4f grad(last.n(), last.c(), last.h(), last.w());
  const float inv_area = 1.0f / static_cast<float>(last.plane_size());
  for (std::size_t n = 0; n < last.n(); ++n)
    for (std::size_t c = 0; c < last.c(); ++c) {
      float* gp = grad.plane(n, c);
      const float v = grad_pooled(n, c) * inv_area;
      for (std::size_t i = 0; i < last.plane_size(); ++i) gp[i] = v;
    }

  for (std::size_t idx = m.features.size(); idx-- > 0;) {
    const Tensor4f& node_input = idx == 0 ? ws.input : ws.outputs[idx - 1];
    const Tensor4f& node_output = ws.outputs[idx];
    FeatureNode& fn = m.features[idx];
    FeatureNode& gfn = grads.features[idx];

    if (auto* node = std::get_if<ConvNode>(&fn)) {
      grad = conv_node_backward(*node, node_input, node_output,
                                std::get<ConvNodeCache>(ws.caches[idx]), grad, gate,
                                std::get<ConvNode>(gfn));
    } else if (std::holds_alternative<PoolNode>(fn)) {
      grad = maxpool2x2_backward(std::get<PoolNodeCache>(ws.caches[idx]).argmax, node_input.h(),
                                 node_input.w(), grad);
    } else if (auto* node = std::get_if<ResNode>(&fn)) {
      const ResNodeCache& cache = std::get<ResNodeCache>(ws.caches[idx]);
      ResNode& gnode = std::get<ResNode>(gfn);
      // relu after addition: the node output carries the sign mask
      Tensor4f g_sum = relu_backward(node_output, grad);
      Tensor4f g_branch = node->attention
                              ? attention_backward(*node->attention, cache.expand_out, g_sum,
                                                   gate, *gnode.attention)
                              : g_sum;
      Tensor4f g = conv_node_backward(node->expand, cache.spatial_out, cache.expand_out,
                                      cache.expand, g_branch, gate, gnode.expand);
      g = conv_node_backward(node->spatial, cache.reduce_out, cache.spatial_out, cache.spatial,
                             g, gate, gnode.spatial);
      g = conv_node_backward(node->reduce, node_input, cache.reduce_out, cache.reduce, g, gate,
                             gnode.reduce);
      if (node->projection) {
        Tensor4f g_short = conv_node_backward(*node->projection, node_input, node_input,
                                              cache.projection, g_sum, gate, *gnode.projection);
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += g_short.data()[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += g_sum.data()[i];
      }
      grad = std::move(g);
    }
  }
}

namespace {

void visit_attention(const std::string& base, AttentionBlock& block,
                     const std::function<void(const ParamRef&)>& fn) {
  auto weight = [&](const std::string& n, float* d, std::size_t s) {
    fn(ParamRef{base + n, d, s, ParamKind::attention_weight, true});
  };
  auto bias = [&](const std::string& n, float* d, std::size_t s) {
    fn(ParamRef{base + n, d, s, ParamKind::attention_bias, true});
  };
  if (block.kind == Attention::clocal) {
    weight("/attn/stage1_w", block.clocal.stage1_w.data(),
           static_cast<std::size_t>(block.clocal.stage1_w.size()));
    bias("/attn/stage1_b", block.clocal.stage1_b.data(),
         static_cast<std::size_t>(block.clocal.stage1_b.size()));
    weight("/attn/stage2_w", block.clocal.stage2_w.data(),
           static_cast<std::size_t>(block.clocal.stage2_w.size()));
    bias("/attn/stage2_b", &block.clocal.stage2_b, 1);
  } else if (block.kind == Attention::se) {
    weight("/attn/w1", block.se.w1.data(), static_cast<std::size_t>(block.se.w1.size()));
    bias("/attn/b1", block.se.b1.data(), static_cast<std::size_t>(block.se.b1.size()));
    weight("/attn/w2", block.se.w2.data(), static_cast<std::size_t>(block.se.w2.size()));
    bias("/attn/b2", block.se.b2.data(), static_cast<std::size_t>(block.se.b2.size()));
  }
}

void visit_conv_node(ConvNode& node, const std::function<void(const ParamRef&)>& fn) {
  fn(ParamRef{node.name + "/weight", node.conv.kernels.data().data(), node.conv.kernels.size(),
              ParamKind::conv_weight, true});
  fn(ParamRef{node.name + "/bias", node.conv.bias.data(), node.conv.bias.size(),
              ParamKind::conv_bias, true});
  if (node.has_bn) {
    fn(ParamRef{node.name + "/bn/gamma", node.bn.gamma.data(), node.bn.gamma.size(),
                ParamKind::bn_gamma, true});
    fn(ParamRef{node.name + "/bn/beta", node.bn.beta.data(), node.bn.beta.size(),
                ParamKind::bn_beta, true});
    fn(ParamRef{node.name + "/bn/running_mean", node.bn.running_mean.data(),
                node.bn.running_mean.size(), ParamKind::bn_running_mean, false});
    fn(ParamRef{node.name + "/bn/running_var", node.bn.running_var.data(),
                node.bn.running_var.size(), ParamKind::bn_running_var, false});
  }
  if (node.attention) visit_attention(node.name, *node.attention, fn);
}

}  // namespace

void visit_params(ModelState& m, const std::function<void(const ParamRef&)>& fn) {
  for (FeatureNode& f : m.features) {
    if (auto* node = std::get_if<ConvNode>(&f)) {
      visit_conv_node(*node, fn);
    } else if (auto* node = std::get_if<ResNode>(&f)) {
      visit_conv_node(node->reduce, fn);
      visit_conv_node(node->spatial, fn);
      visit_conv_node(node->expand, fn);
      if (node->projection) visit_conv_node(*node->projection, fn);
      if (node->attention) visit_attention(node->name, *node->attention, fn);
    }
  }
  if (m.head) {
    fn(ParamRef{m.head->name + "/weight", m.head->weight.data(),
                static_cast<std::size_t>(m.head->weight.size()), ParamKind::dense_weight, true});
    fn(ParamRef{m.head->name + "/bias", m.head->bias.data(),
                static_cast<std::size_t>(m.head->bias.size()), ParamKind::dense_bias, true});
  }
}

std::size_t count_params(const ModelState& m) {
  std::size_t total = 0;
  visit_params(const_cast<ModelState&>(m), [&](const ParamRef& p) {
    if (p.learnable) total += p.size;
  });
  return total;
}

}  // namespace chanloc
