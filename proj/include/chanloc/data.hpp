#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "chanloc/rng.hpp"
#include "chanloc/tensor.hpp"

namespace chanloc {

// Thrown for missing/malformed dataset files (CLI exit code 2).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LabeledBatch {
  Tensor4f images;  // (n, 3, 32, 32), pixels in [0, 1]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct Cifar10 {
  LabeledBatch train, test;
};

// One record = 1 label byte + 3072 pixel bytes (R, G, B planes, row-major
// 32x32); pixels scale by 1/255.
LabeledBatch load_cifar10_file(const std::filesystem::path& file);

// Reads data_batch_{1..5}.bin and test_batch.bin.
Cifar10 load_cifar10(const std::filesystem::path& dir);

// Inverse of the loader; reproduces the source bytes exactly.
std::vector<std::uint8_t> encode_cifar10(const LabeledBatch& batch);

std::array<std::size_t, 10> class_histogram(const LabeledBatch& batch);

enum class Fill { nearest, zero };

struct AugmentConfig {
  float flip_prob = 0.5f;
  int max_shift = 6;  // round(0.2 * 32) pixels, per axis
  Fill fill = Fill::nearest;
};

void validate(const AugmentConfig& cfg);

// Horizontal flip with probability flip_prob, then an integer shift with
// dx, dy drawn uniformly from [-max_shift, +max_shift] per axis. Vacated
// pixels replicate the edge (nearest) or are zero. Three draws per image, in
// that order, from `rng`.
void augment_image(Tensor4f& images, std::size_t sample, const AugmentConfig& cfg, Rng& rng);

// Per-image streams are seeded by (seed, image index), so results do not
// depend on processing order.
LabeledBatch augment(const LabeledBatch& batch, const AugmentConfig& cfg, std::uint64_t seed);

// Epoch-deterministic shuffle (seed xor epoch); the last partial batch is
// kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

// Seeded random labeled set for tests and runs without the dataset. Each
// class gets a distinct mean color per channel with per-pixel noise on top,
// so the set is genuinely learnable.
LabeledBatch make_synthetic(std::size_t count, std::uint64_t seed);

// Gathers dataset rows into a batch.
LabeledBatch gather(const LabeledBatch& data, const std::vector<std::size_t>& indices);

}  // namespace chanloc
