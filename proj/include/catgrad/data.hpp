#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "catgrad/rng.hpp"
#include "catgrad/tensor.hpp"

namespace catgrad {

/// Batch of grayscale images in [0,1] (or {0,1} after binarization),
/// stored as a [n, H, W] tensor with optional integer labels.
struct ImageBatch {
  Tensor images;  // [n, H, W]
  std::vector<int> labels;

  std::size_t size() const { return images.rank() == 3 ? images.extent(0) : 0; }
  std::size_t height() const { return images.extent(1); }
  std::size_t width() const { return images.extent(2); }
  bool has_labels() const { return !labels.empty(); }

  /// [n, H*W] view for feeding models.
  Tensor flattened() const;
  ImageBatch subset(std::size_t start, std::size_t count) const;
};

// IDX format (big-endian): magic 0x00000803 for images, 0x00000801 for labels.
ImageBatch load_idx(const std::string& image_path,
                    const std::optional<std::string>& label_path = std::nullopt);
void save_idx(const ImageBatch& batch, const std::string& image_path,
              const std::optional<std::string>& label_path = std::nullopt);

ImageBatch binarize_fixed(const ImageBatch& batch, double threshold = 0.5);  // ties go to 1
ImageBatch binarize_dynamic(const ImageBatch& batch, RngStream& rng);

/// Rows [0, H/2) and [H/2, H). H must be even.
std::pair<ImageBatch, ImageBatch> split_halves(const ImageBatch& batch);
/// Inverse of split_halves.
ImageBatch concat_halves(const ImageBatch& upper, const ImageBatch& lower);

/// Zero-pads to the next multiple of 2*target (centered, extra on the
/// bottom/right), then repeatedly 2x2-block-averages down to target x target.
ImageBatch downsample(const ImageBatch& batch, std::size_t target);

enum class SyntheticKind { Stripes, RandomBernoulli, Blobs };
SyntheticKind synthetic_kind_from_name(const std::string& name);

ImageBatch synthetic_batch(SyntheticKind kind, std::size_t n, std::size_t height,
                           std::size_t width, RngStream& rng);
void assign_random_labels(ImageBatch& batch, std::size_t k, RngStream& rng);

/// Digit-like 28x28 fixture used by tests and desk-scale runs when no real
/// dataset is configured.
ImageBatch make_fixture(std::size_t n, RngStream& rng);

}  // namespace catgrad
