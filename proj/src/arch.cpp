#include "chanloc/arch.hpp"

#include <sstream>
#include <stdexcept>

#include "chanloc/attention.hpp"
#include "chanloc/rng.hpp"

namespace chanloc {

namespace {

ConvUnit conv(std::size_t out_c, std::size_t kernel, std::size_t stride, bool attention) {
  ConvUnit u;
  u.out_channels = out_c;
  u.kernel = kernel;
  u.stride = stride;
  u.attention = attention;
  return u;
}

}  // namespace

ArchSpec make_arch(Arch arch, Attention attention, std::size_t strand_ratio) {
  const bool attn = attention != Attention::none;
  ArchSpec spec;
  spec.arch = arch;
  spec.attention = attention;
  spec.strand_ratio = strand_ratio;

  switch (arch) {
    case Arch::plane:
      spec.layers = {
          conv(32, 3, 1, attn),  MaxPoolUnit{}, conv(64, 3, 1, attn),  MaxPoolUnit{},
          conv(128, 3, 1, attn), conv(128, 3, 1, attn), GlobalPoolUnit{}, DenseUnit{10},
      };
      break;
    case Arch::allcnn: {
      spec.layers = {
          conv(64, 3, 1, attn),  conv(64, 3, 1, attn),  conv(64, 3, 2, attn),
          conv(128, 3, 1, attn), conv(128, 3, 1, attn), conv(128, 3, 2, attn),
          conv(128, 1, 1, attn),
      };
      // Classifier conv: no batch norm, no activation, no attention; it feeds
      // the global average pool directly.
      ConvUnit head = conv(10, 1, 1, false);
      head.batch_norm = false;
      head.relu = false;
      spec.layers.push_back(head);
      spec.layers.push_back(GlobalPoolUnit{});
      break;
    }
    case Arch::resnet:
      spec.layers = {
          conv(32, 3, 1, false),   ResUnit{16, 32, attn},  MaxPoolUnit{},
          ResUnit{32, 64, attn},   MaxPoolUnit{},          ResUnit{64, 128, attn},
          ResUnit{64, 128, attn},  GlobalPoolUnit{},       DenseUnit{10},
      };
      break;
  }
  validate(spec);
  return spec;
}

std::vector<LayerShape> shape_progression(const ArchSpec& spec) {
  std::vector<LayerShape> shapes;
  LayerShape s{spec.in_channels, spec.in_h, spec.in_w};
  for (const LayerRecord& rec : spec.layers) {
    if (const auto* u = std::get_if<ConvUnit>(&rec)) {
      s.channels = u->out_channels;
      s.h = (s.h - 1) / u->stride + 1;  // same padding
      s.w = (s.w - 1) / u->stride + 1;
    } else if (std::holds_alternative<MaxPoolUnit>(rec)) {
      s.h /= 2;
      s.w /= 2;
    } else if (const auto* u = std::get_if<ResUnit>(&rec)) {
      s.channels = u->out_channels;
    } else if (std::holds_alternative<GlobalPoolUnit>(rec)) {
      s.h = 1;
      s.w = 1;
    } else if (const auto* u = std::get_if<DenseUnit>(&rec)) {
      s.channels = u->units;
    }
    shapes.push_back(s);
  }
  return shapes;
}

void validate(const ArchSpec& spec) {
  if (spec.layers.empty()) throw std::invalid_argument("arch: empty layer list");
  if (spec.in_channels == 0 || spec.in_h == 0 || spec.in_w == 0 || spec.classes == 0)
    throw std::invalid_argument("arch: invalid input shape");

  LayerShape s{spec.in_channels, spec.in_h, spec.in_w};
  bool pooled_global = false;
  for (const LayerRecord& rec : spec.layers) {
    if (pooled_global && !std::holds_alternative<DenseUnit>(rec))
      throw std::invalid_argument("arch: only a dense head may follow the global pool");
    if (const auto* u = std::get_if<ConvUnit>(&rec)) {
      if (u->out_channels == 0 || u->kernel == 0) throw std::invalid_argument("arch: bad conv unit");
      if (u->stride != 1 && u->stride != 2) throw std::invalid_argument("arch: stride must be 1 or 2");
      if (u->attention) {
        if (u->out_channels % 8 != 0)
          throw std::invalid_argument("arch: attention needs channels divisible by 8");
        clocal_shape_rule(u->out_channels, spec.strand_ratio);
      }
    } else if (std::holds_alternative<MaxPoolUnit>(rec)) {
      if (s.h % 2 != 0 || s.w % 2 != 0)
        throw std::invalid_argument("arch: max pooling needs even spatial dims");
    } else if (const auto* u = std::get_if<ResUnit>(&rec)) {
      if (u->mid_channels == 0 || u->out_channels == 0)
        throw std::invalid_argument("arch: bad residual unit");
      if (u->attention) {
        if (u->out_channels % 8 != 0)
          throw std::invalid_argument("arch: attention needs channels divisible by 8");
        clocal_shape_rule(u->out_channels, spec.strand_ratio);
      }
    } else if (std::holds_alternative<GlobalPoolUnit>(rec)) {
      pooled_global = true;
    } else if (const auto* u = std::get_if<DenseUnit>(&rec)) {
      if (!pooled_global) throw std::invalid_argument("arch: dense head requires global pool first");
      if (u->units != spec.classes) throw std::invalid_argument("arch: head width must match classes");
    }
    // advance the shape (reuses the progression rules)
    if (const auto* u = std::get_if<ConvUnit>(&rec)) {
      s.channels = u->out_channels;
      s.h = (s.h - 1) / u->stride + 1;
      s.w = (s.w - 1) / u->stride + 1;
    } else if (std::holds_alternative<MaxPoolUnit>(rec)) {
      s.h /= 2;
      s.w /= 2;
    } else if (const auto* u = std::get_if<ResUnit>(&rec)) {
      s.channels = u->out_channels;
    } else if (std::holds_alternative<GlobalPoolUnit>(rec)) {
      s.h = s.w = 1;
    }
  }
  if (!pooled_global) throw std::invalid_argument("arch: missing global average pool");
  if (s.channels != spec.classes)
    throw std::invalid_argument("arch: network emits " + std::to_string(s.channels) +
                                " logits, expected " + std::to_string(spec.classes));
}

std::string canonical_string(const ArchSpec& spec) {
  std::ostringstream os;
  os << "arch=" << to_string(spec.arch) << ";attn=" << to_string(spec.attention)
     << ";strand_ratio=" << spec.strand_ratio << ";in=" << spec.in_channels << "x" << spec.in_h
     << "x" << spec.in_w << ";classes=" << spec.classes << ";layers=";
  for (const LayerRecord& rec : spec.layers) {
    if (const auto* u = std::get_if<ConvUnit>(&rec)) {
      os << "conv(" << u->out_channels << "," << u->kernel << "," << u->stride << ","
         << (u->batch_norm ? "bn" : "-") << "," << (u->relu ? "relu" : "-") << ","
         << (u->attention ? "attn" : "-") << ")";
    } else if (std::holds_alternative<MaxPoolUnit>(rec)) {
      os << "pool()";
    } else if (const auto* u = std::get_if<ResUnit>(&rec)) {
      os << "res(" << u->mid_channels << "," << u->out_channels << ","
         << (u->attention ? "attn" : "-") << ")";
    } else if (std::holds_alternative<GlobalPoolUnit>(rec)) {
      os << "gap()";
    } else if (const auto* u = std::get_if<DenseUnit>(&rec)) {
      os << "fc(" << u->units << ")";
    }
    os << ";";
  }
  return os.str();
}

std::uint64_t fingerprint(const ArchSpec& spec) { return fnv1a64(canonical_string(spec)); }

namespace {

std::string attention_rows(const ArchSpec& spec, std::size_t channels) {
  std::ostringstream os;
  if (spec.attention == Attention::se) {
    os << " | fc, [" << channels / 8 << ", " << channels << "]";
  } else if (spec.attention == Attention::clocal) {
    const CLocalShape s = clocal_shape_rule(channels, spec.strand_ratio);
    os << " | conv, 2x1, " << s.filters << " | conv, " << s.kernel_len << "x1, 1";
  }
  return os.str();
}

}  // namespace

std::string summary(const ArchSpec& spec) {
  const std::vector<LayerShape> shapes = shape_progression(spec);
  std::ostringstream os;
  os << to_string(spec.arch) << " / " << to_string(spec.attention);
  if (spec.attention == Attention::clocal) os << " (strand ratio " << spec.strand_ratio << ")";
  os << "\n";
  os << "Output size   Layers\n";
  bool dense_merged = false;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (dense_merged) break;
    const LayerShape& s = shapes[i];
    std::ostringstream row;
    if (const auto* u = std::get_if<ConvUnit>(&spec.layers[i])) {
      row << "conv, " << u->kernel << "x" << u->kernel << ", " << u->out_channels;
      if (u->stride != 1) row << ", stride 2";
      if (u->attention) row << attention_rows(spec, u->out_channels);
    } else if (std::holds_alternative<MaxPoolUnit>(spec.layers[i])) {
      row << "max pooling 2x2";
    } else if (const auto* u = std::get_if<ResUnit>(&spec.layers[i])) {
      row << "conv, 1x1, " << u->mid_channels << " | conv, 3x3, " << u->mid_channels
          << " | conv, 1x1, " << u->out_channels;
      if (u->attention) row << attention_rows(spec, u->out_channels);
    } else if (std::holds_alternative<GlobalPoolUnit>(spec.layers[i])) {
      const bool has_dense = i + 1 < spec.layers.size() &&
                             std::holds_alternative<DenseUnit>(spec.layers[i + 1]);
      if (has_dense) {
        row << "global average pool, " << spec.classes << "-d fc, softmax";
        dense_merged = true;
      } else {
        row << "global average pool, softmax";
      }
    }
    std::ostringstream size;
    size << s.h << "x" << s.w;
    os << size.str();
    for (std::size_t pad = size.str().size(); pad < 14; ++pad) os << ' ';
    os << row.str() << "\n";
  }
  return os.str();
}

Arch arch_from_string(const std::string& s) {
  if (s == "plane") return Arch::plane;
  if (s == "allcnn") return Arch::allcnn;
  if (s == "resnet") return Arch::resnet;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

Attention attention_from_string(const std::string& s) {
  if (s == "none") return Attention::none;
  if (s == "se") return Attention::se;
  if (s == "clocal") return Attention::clocal;
  throw std::invalid_argument("unknown attention kind '" + s + "'");
}

std::string to_string(Arch a) {
  switch (a) {
    case Arch::plane: return "plane";
    case Arch::allcnn: return "allcnn";
    case Arch::resnet: return "resnet";
  }
  return "?";
}

std::string to_string(Attention a) {
  switch (a) {
    case Attention::none: return "none";
    case Attention::se: return "se";
    case Attention::clocal: return "clocal";
  }
  return "?";
}

}  // namespace chanloc
