#include "pesl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pesl/errors.hpp"
#include "pesl/permutation.hpp"
#include "pesl/random.hpp"

namespace pesl {

namespace {

struct Centre {
  double y;
  double x;
};

// Blob centres in pixel-index coordinates, one per class. Patch centre,
// four-patch junction, two-patch edge and image corner: no two classes put the
// same set of patch contents in front of a position-blind model.
std::vector<Centre> blob_centres(const PatchGeometry& g) {
  const double ph = static_cast<double>(g.patch_h);
  const double pw = static_cast<double>(g.patch_w);
  return {
      {0.5 * ph - 0.5, 0.5 * pw - 0.5},
      {ph - 0.5, pw - 0.5},
      {0.5 * ph - 0.5, pw - 0.5},
      {0.0, 0.0},
  };
}

Image blob_image(const PatchGeometry& g, Centre c, Rng& rng) {
  constexpr double kSigma = 1.0;
  constexpr double kJitter = 0.3;
  constexpr double kNoise = 0.05;
  const double cy = c.y + kJitter * rng.normal();
  const double cx = c.x + kJitter * rng.normal();
  Image img(g.channels, g.image_h, g.image_w);
  for (std::size_t y = 0; y < g.image_h; ++y) {
    for (std::size_t x = 0; x < g.image_w; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * kSigma * kSigma));
      for (std::size_t ch = 0; ch < g.channels; ++ch) {
        img.at(ch, y, x) = std::clamp(v + kNoise * rng.uniform01(), 0.0, 1.0);
      }
    }
  }
  return img;
}

// Fills each patch with a constant level plus small noise; patch i (raster
// order) gets levels[arrangement[i]].
Image level_image(const PatchGeometry& g, const std::vector<double>& levels,
                  const std::vector<std::size_t>& arrangement, Rng& rng) {
  constexpr double kNoise = 0.02;
  const std::size_t per_row = g.image_w / g.patch_w;
  Image img(g.channels, g.image_h, g.image_w);
  for (std::size_t pi = 0; pi < g.patches(); ++pi) {
    const std::size_t y0 = (pi / per_row) * g.patch_h;
    const std::size_t x0 = (pi % per_row) * g.patch_w;
    const double level = levels[arrangement[pi]];
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t y = 0; y < g.patch_h; ++y)
        for (std::size_t x = 0; x < g.patch_w; ++x)
          img.at(c, y0 + y, x0 + x) = std::clamp(level + rng.uniform(-kNoise, kNoise), 0.0, 1.0);
  }
  return img;
}

}  // namespace

std::vector<double> patch_means(const PatchGeometry& geometry, const Image& image) {
  const Matrix patches = patchify(geometry, image);
  return row_means(patches);
}

std::size_t order_label(const PatchGeometry& geometry, const Image& image) {
  const std::vector<double> means = patch_means(geometry, image);
  for (std::size_t i = 1; i < means.size(); ++i)
    if (!(means[i] > means[i - 1])) return 0;
  return 1;
}

std::vector<Sample> make_synthetic(const SyntheticSpec& spec) {
  const PatchGeometry& g = spec.geometry;
  g.validate();
  Rng rng(derive_seed(spec.seed, "data"));
  std::vector<Sample> out;
  out.reserve(spec.n);

  if (spec.task == SyntheticTask::plain) {
    if (spec.n_classes < 2 || spec.n_classes > 4) {
      throw ConfigError("data.synthetic: the blob task supports 2-4 classes");
    }
    if (g.image_h / g.patch_h < 2 || g.image_w / g.patch_w < 2) {
      throw ConfigError("data.synthetic: the blob task needs at least 2x2 patches");
    }
    const std::vector<Centre> centres = blob_centres(g);
    for (std::size_t i = 0; i < spec.n; ++i) {
      const auto label = static_cast<std::size_t>(rng.below(spec.n_classes));
      out.push_back({blob_image(g, centres[label], rng), label});
    }
    return out;
  }

  if (spec.n_classes != 2) throw ConfigError("data.synthetic: order_dependent task is binary");
  const std::size_t p = g.patches();
  if (p < 2) throw ConfigError("data.synthetic: order_dependent task needs at least 2 patches");
  for (std::size_t i = 0; i < spec.n; ++i) {
    // Strictly increasing levels in [0.1, 0.9] with a guaranteed gap.
    std::vector<double> levels(p);
    const double slot = 0.8 / static_cast<double>(p);
    for (std::size_t k = 0; k < p; ++k) {
      levels[k] = 0.1 + slot * (static_cast<double>(k) + 0.2 + 0.6 * rng.uniform01());
    }
    const std::size_t label = i % 2;
    std::vector<std::size_t> arrangement = Permutation::identity(p).indices();
    if (label == 0) {
      Permutation perm = sample_permutation(p, rng);
      while (perm.is_identity()) perm = sample_permutation(p, rng);
      arrangement = perm.indices();
    }
    Image img = level_image(g, levels, arrangement, rng);
    if (order_label(g, img) != label) {
      throw ContractError("data.synthetic: generated order_dependent sample mislabelled");
    }
    if (label == 1) {
      std::vector<std::size_t> reversed(arrangement.rbegin(), arrangement.rend());
      Rng probe(derive_seed(spec.seed, "order_probe", {i}));
      if (order_label(g, level_image(g, levels, reversed, probe)) != 0) {
        throw ContractError("data.synthetic: reordering patches did not flip the label");
      }
    }
    out.push_back({std::move(img), label});
  }
  return out;
}

void write_csv(std::span<const Sample> samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (const Sample& s : samples) {
    out << s.label;
    for (double v : s.image.pixels) out << ',' << v;
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Sample> read_csv(const std::filesystem::path& path, const PatchGeometry& geometry,
                             std::size_t n_classes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const std::size_t expected = geometry.channels * geometry.image_h * geometry.image_w;
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> values;
    try {
      while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ConfigError(where + ": non-numeric cell '" + cell + "'");
    }
    if (values.size() != expected + 1) {
      throw ConfigError(where + ": expected " + std::to_string(expected + 1) + " cells, got " +
                        std::to_string(values.size()));
    }
    const double label = values[0];
    if (label < 0 || label != std::floor(label) || label >= static_cast<double>(n_classes)) {
      throw ConfigError(where + ": label out of range");
    }
    Sample s;
    s.label = static_cast<std::size_t>(label);
    s.image = Image(geometry.channels, geometry.image_h, geometry.image_w);
    for (std::size_t i = 0; i < expected; ++i) {
      const double v = values[i + 1];
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(where + ": pixel outside [0, 1]");
      s.image.pixels[i] = v;
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace pesl
