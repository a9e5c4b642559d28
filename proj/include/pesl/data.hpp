#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pesl/edge_model.hpp"

namespace pesl {

/// plain: class-conditional Gaussian blob position.
/// order_dependent: label 1 iff patch mean intensities ascend in raster order.
enum class SyntheticTask { plain, order_dependent };

struct SyntheticSpec {
  std::size_t n = 256;
  SyntheticTask task = SyntheticTask::plain;
  std::size_t n_classes = 4;
  PatchGeometry geometry;
  std::uint64_t seed = 1;
};

/// Deterministic per spec. The blob task supports 2-4 classes; blob centres
/// are placed so that every class yields a different multiset of patch
/// contents, which keeps the task learnable for a model without position
/// embedding. The order-dependent task is binary and balanced, and each
/// positive sample is checked to flip its label when its patches are reversed.
std::vector<Sample> make_synthetic(const SyntheticSpec& spec);

/// Mean intensity of each patch, raster order.
std::vector<double> patch_means(const PatchGeometry& geometry, const Image& image);
/// 1 iff patch means are strictly ascending in raster order.
std::size_t order_label(const PatchGeometry& geometry, const Image& image);

/// CSV rows: label, then channels*height*width pixel values in channel-major
/// order, each in [0, 1].
void write_csv(std::span<const Sample> samples, const std::filesystem::path& path);
std::vector<Sample> read_csv(const std::filesystem::path& path, const PatchGeometry& geometry,
                             std::size_t n_classes);

}  // namespace pesl
