#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pesl/edge_model.hpp"
#include "pesl/encoder.hpp"
#include "pesl/permutation.hpp"
#include "pesl/random.hpp"

namespace pesl {

/// P_R * z * P_C^-1.
Matrix shuffle_feature(const Matrix& z, const Permutation& p_r, const Permutation& p_c);
/// Column permutation taken from the key.
Matrix shuffle_feature(const Matrix& z, const Permutation& p_r, const ShuffleKey& key);

/// P_R^-1 * y * P_C, the two-sided inverse of shuffle_feature.
Matrix unshuffle_output(const Matrix& y, const Permutation& p_r, const Permutation& p_c);
Matrix unshuffle_output(const Matrix& y, const Permutation& p_r, const ShuffleKey& key);

/// dl/dA2 as the cloud must see it: P_R * g * P_C^T.
Matrix shuffle_gradient(const Matrix& g, const Permutation& p_r, const Permutation& p_c);
Matrix shuffle_gradient(const Matrix& g, const Permutation& p_r, const ShuffleKey& key);

/// Cut rectangle in pixel coordinates.
struct CutRect {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t w = 0;
  std::size_t h = 0;
  bool operator==(const CutRect&) const = default;
};

struct MixedSample {
  Image image;
  Vector soft_label;
  /// Fraction of the image still coming from A: 1 - w*h / (W*H).
  double lambda = 1.0;
  CutRect rect;
  std::size_t partner = 0;
  std::size_t label = 0;  // original hard label of A
};

/// Pastes `rect` of b into a and mixes labels by area:
///   soft = lambda * onehot(label_a) + (1 - lambda) * onehot(label_b).
MixedSample cut_and_mix(const Sample& a, const Sample& b, const CutRect& rect,
                        std::size_t n_classes);

/// For each sample, with probability `prob`, pairs it with a uniformly chosen
/// other member of the batch and pastes a uniformly sized and placed
/// rectangle of the partner into it. ConfigError for a single-sample batch
/// with prob > 0.
std::vector<MixedSample> cutmix(std::span<const Sample> batch, double prob,
                                std::size_t n_classes, Rng& rng);

/// Re-keys a plain model for P_new: W -> P W P^-1 on every block.
EncoderStack authorize(const EncoderStack& cloud, const Permutation& p_new,
                       const EncoderOptions& options);
/// Removes the key's column permutation from an authorized model.
EncoderStack deauthorize(const EncoderStack& cloud, const ShuffleKey& key,
                         const EncoderOptions& options);

}  // namespace pesl
