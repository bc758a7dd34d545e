#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace chanloc {

enum class Arch { plane, allcnn, resnet };
enum class Attention { none, se, clocal };

// One feature-extraction row of the architecture tables.
struct ConvUnit {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool batch_norm = true;
  bool relu = true;
  bool attention = false;  // attach the variant's block after this unit
};

struct MaxPoolUnit {};

// Bottleneck residual block: 1x1 mid, 3x3 mid, 1x1 out, identity or 1x1
// projection shortcut, ReLU after the addition. The attention block gates the
// branch output before the addition.
struct ResUnit {
  std::size_t mid_channels = 0;
  std::size_t out_channels = 0;
  bool attention = false;
};

struct GlobalPoolUnit {};

struct DenseUnit {
  std::size_t units = 0;
};

using LayerRecord = std::variant<ConvUnit, MaxPoolUnit, ResUnit, GlobalPoolUnit, DenseUnit>;

// Declarative model layout: one of the three table architectures in a
// baseline / SE / C-Local variant.
struct ArchSpec {
  Arch arch = Arch::plane;
  Attention attention = Attention::none;
  std::size_t strand_ratio = 8;  // stage-2 kernel length = C / strand_ratio
  std::size_t in_channels = 3, in_h = 32, in_w = 32;
  std::size_t classes = 10;
  std::vector<LayerRecord> layers;
};

ArchSpec make_arch(Arch arch, Attention attention, std::size_t strand_ratio = 8);

// Structural checks: valid strides/kernels, attention only where a block can
// attach, channel counts divisible by 8 wherever a block attaches.
void validate(const ArchSpec& spec);

std::uint64_t fingerprint(const ArchSpec& spec);
std::string canonical_string(const ArchSpec& spec);

// Human-readable layer table mirroring the papers' "Output size | layers"
// format, including the attention rows of the chosen variant.
std::string summary(const ArchSpec& spec);

// Output spatial size and channel count after every layer record.
struct LayerShape {
  std::size_t channels, h, w;
};
std::vector<LayerShape> shape_progression(const ArchSpec& spec);

Arch arch_from_string(const std::string& s);
Attention attention_from_string(const std::string& s);
std::string to_string(Arch a);
std::string to_string(Attention a);

}  // namespace chanloc
