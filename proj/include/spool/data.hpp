#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spool/tensor.hpp"

namespace spool {

// Images plus labels plus an append-only record of how they were produced.
// Every transform below is pure: re-running a provenance chain from the raw
// files reproduces the tensor bit for bit.
struct Dataset {
  Tensor4 images;  // (n, c, h, w)
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::vector<std::string> provenance;

  std::size_t size() const { return images.shape().n; }
  bool has_step(const std::string& prefix) const;
};

// IDX pair (big-endian magics 0x803 images / 0x801 labels). Pixels arrive
// as raw byte values 0..255; labels must be 0..9.
Dataset load_idx(const std::string& image_path, const std::string& label_path);

// CIFAR binary records: one label byte (two for the 100-class layout:
// coarse then fine; the fine label is kept) followed by 3072 channel-planar
// RGB bytes. `classes` selects the layout (10 or 100).
Dataset load_cifar_binary(const std::vector<std::string>& paths,
                          std::size_t classes);

// Divide by 255. Applying it twice is rejected via provenance.
Dataset scale_unit(Dataset d);

// Mean image over splits[0] (the training split) only, subtracted from all
// splits. The mean is returned for inference-time reuse.
struct MeanSubtracted {
  std::vector<Dataset> splits;
  Tensor4 mean_image;  // (1, c, h, w)
};
MeanSubtracted per_pixel_mean_subtract(std::vector<Dataset> splits);
Dataset subtract_mean(Dataset d, const Tensor4& mean_image);

// Per-channel local contrast normalization: subtract the Gaussian-weighted
// local mean, divide by max(local weighted std, floor). Window weights are
// renormalized to unit mass at map borders. Without an explicit floor the
// per-image-per-channel mean of the std map is used.
Dataset local_contrast_normalize(Dataset d, std::size_t kernel_radius = 4,
                                 std::optional<double> epsilon_floor = {});

// Uniform sample of n rows without replacement; seed-deterministic, rows
// kept in ascending original order.
Dataset subsample(const Dataset& d, std::size_t n, std::uint64_t seed);

// Two-class separable toy set (Gaussian bumps in opposite corners of a
// 10x10 map), raw 0..255 values. Training sanity checks.
Dataset make_blobs(std::size_t count, std::uint64_t seed);

// Ten-class 28x28 digit corpus rendered from a built-in glyph font with
// random placement, stroke intensity jitter, and pixel noise. Raw 0..255.
// Stands in for the official handwritten-digit files when those are not on
// disk; train and test splits are disjoint by construction (separate
// substreams of the same seed).
void make_synthetic_digits(std::size_t train_count, std::size_t test_count,
                           std::uint64_t seed, Dataset& train, Dataset& test);

// House-number converter contract: `images_path` holds n*3072 bytes of
// 32x32 RGB interleaved (HWC) pixels, `labels_path` n bytes of labels 1..10
// with 10 meaning digit zero. Output is 10-class CIFAR-layout records
// loadable by load_cifar_binary.
void convert_svhn_raw(const std::string& images_path,
                      const std::string& labels_path,
                      const std::string& out_path);

}  // namespace spool
