#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "pesl/random.hpp"
#include "pesl/tensor.hpp"

namespace pesl {

/// Channel-major image with pixels in [0, 1]: pixel(c, y, x) lives at
/// (c * height + y) * width + x.
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

struct Sample {
  Image image;
  std::size_t label = 0;
};

/// How an image is cut into non-overlapping patches.
struct PatchGeometry {
  std::size_t channels = 1;
  std::size_t image_h = 8;
  std::size_t image_w = 8;
  std::size_t patch_h = 4;
  std::size_t patch_w = 4;

  std::size_t patches() const noexcept { return (image_h / patch_h) * (image_w / patch_w); }
  std::size_t patch_dim() const noexcept { return patch_h * patch_w * channels; }
  /// Throws ShapeError unless the image divides evenly into patches.
  void validate() const;
  bool operator==(const PatchGeometry&) const = default;
};

/// F1 (patch embedding, optional learned position embedding) and F3
/// (mean-pool + affine head).
struct EdgeWeights {
  Matrix w_embed;  // patch_dim x d
  Vector b_embed;  // d
  std::optional<Matrix> pos_embed;  // p x d, added before any shuffling
  Matrix w_head;   // d x n_classes
  Vector b_head;   // n_classes

  std::size_t dim() const noexcept { return w_embed.cols(); }
  std::size_t classes() const noexcept { return w_head.cols(); }
  void validate(const PatchGeometry& geometry) const;
  bool operator==(const EdgeWeights&) const = default;
};

struct EdgeGradients {
  Matrix d_w_embed;
  Vector d_b_embed;
  std::optional<Matrix> d_pos_embed;
  Matrix d_w_head;
  Vector d_b_head;
};

/// Flattens patches in raster order; within a patch, channel-major then
/// row-major: column index c * patch_h * patch_w + y * patch_w + x.
Matrix patchify(const PatchGeometry& geometry, const Image& image);
/// Inverse of patchify.
Image unpatchify(const PatchGeometry& geometry, const Matrix& patches);

/// Z = patchify(image) * w_embed + b_embed (+ pos_embed). p x d.
Matrix patch_embed(const EdgeWeights& w, const PatchGeometry& geometry, const Image& image);
/// Same, for already-patchified input.
Matrix embed_patches(const EdgeWeights& w, const Matrix& patches);

/// logits = mean_rows(a_final) * w_head + b_head.
Vector head_forward(const EdgeWeights& w, const Matrix& a_final);

struct LossResult {
  double loss = 0.0;
  Vector d_logits;
};

/// Softmax cross-entropy against a class index. DomainError if out of range.
LossResult cross_entropy(const Vector& logits, std::size_t label);
/// Softmax cross-entropy against a probability vector (mixed labels).
LossResult cross_entropy(const Vector& logits, const Vector& target);

struct HeadBackward {
  Matrix d_a_final;
  Matrix d_w_head;
  Vector d_b_head;
};
HeadBackward head_backward(const EdgeWeights& w, const Matrix& a_final, const Vector& d_logits);

struct EmbedBackward {
  Matrix d_w_embed;
  Vector d_b_embed;
  std::optional<Matrix> d_pos_embed;
};
EmbedBackward embed_backward(const EdgeWeights& w, const Matrix& patches, const Matrix& d_z);

std::size_t argmax(const Vector& v);

/// Embedding and head entries uniform in +-1/sqrt(fan_in); position
/// embedding (when enabled) uniform in +-0.5.
EdgeWeights init_edge(const PatchGeometry& geometry, std::size_t d, std::size_t n_classes,
                      bool position_embedding, Rng& rng);

void sgd_update(EdgeWeights& w, const EdgeGradients& g, double lr);
void accumulate(EdgeGradients& acc, const EdgeGradients& g);
double max_abs_diff(const EdgeWeights& a, const EdgeWeights& b);

/// Same container layout as the encoder stack file, one block of edge roles.
std::vector<std::uint8_t> encode_edge(const EdgeWeights& w);
EdgeWeights decode_edge(std::span<const std::uint8_t> bytes);
void save_edge(const EdgeWeights& w, const std::filesystem::path& path);
EdgeWeights load_edge(const std::filesystem::path& path);

}  // namespace pesl
