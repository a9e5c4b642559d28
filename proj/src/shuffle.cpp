#include "pesl/shuffle.hpp"

#include "pesl/errors.hpp"

namespace pesl {

Matrix shuffle_feature(const Matrix& z, const Permutation& p_r, const Permutation& p_c) {
  return apply_cols_inv(apply_rows(p_r, z), p_c);
}

Matrix shuffle_feature(const Matrix& z, const Permutation& p_r, const ShuffleKey& key) {
  return shuffle_feature(z, p_r, key.p_col);
}

Matrix unshuffle_output(const Matrix& y, const Permutation& p_r, const Permutation& p_c) {
  return apply_cols(apply_rows_inv(p_r, y), p_c);
}

Matrix unshuffle_output(const Matrix& y, const Permutation& p_r, const ShuffleKey& key) {
  return unshuffle_output(y, p_r, key.p_col);
}

Matrix shuffle_gradient(const Matrix& g, const Permutation& p_r, const Permutation& p_c) {
  return shuffle_feature(g, p_r, p_c);
}

Matrix shuffle_gradient(const Matrix& g, const Permutation& p_r, const ShuffleKey& key) {
  return shuffle_feature(g, p_r, key.p_col);
}

MixedSample cut_and_mix(const Sample& a, const Sample& b, const CutRect& rect,
                        std::size_t n_classes) {
  const Image& ia = a.image;
  const Image& ib = b.image;
  if (ia.channels != ib.channels || ia.height != ib.height || ia.width != ib.width) {
    throw ShapeError("cutmix: partner image has different dimensions");
  }
  if (rect.x + rect.w > ia.width || rect.y + rect.h > ia.height) {
    throw ShapeError("cutmix: cut rectangle exceeds the image");
  }
  if (a.label >= n_classes || b.label >= n_classes) {
    throw DomainError("cutmix: label out of range");
  }

  MixedSample m;
  m.image = ia;
  for (std::size_t c = 0; c < ia.channels; ++c)
    for (std::size_t y = rect.y; y < rect.y + rect.h; ++y)
      for (std::size_t x = rect.x; x < rect.x + rect.w; ++x) m.image.at(c, y, x) = ib.at(c, y, x);

  const double cut = static_cast<double>(rect.w * rect.h) /
                     static_cast<double>(ia.width * ia.height);
  m.lambda = 1.0 - cut;
  m.soft_label.assign(n_classes, 0.0);
  m.soft_label[a.label] += m.lambda;
  m.soft_label[b.label] += cut;
  m.rect = rect;
  m.label = a.label;
  return m;
}

std::vector<MixedSample> cutmix(std::span<const Sample> batch, double prob,
                                std::size_t n_classes, Rng& rng) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw ConfigError("cutmix: probability outside [0, 1]");
  if (prob > 0.0 && batch.size() < 2) {
    throw ConfigError("cutmix: mixing needs a batch of at least 2 samples");
  }
  std::vector<MixedSample> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& a = batch[i];
    // Draws happen only when mixing is possible, and always in this order, so
    // dual runs sharing the stream see identical cuts.
    if (prob > 0.0 && rng.uniform01() < prob) {
      std::size_t j = static_cast<std::size_t>(rng.below(batch.size() - 1));
      if (j >= i) ++j;
      const std::size_t width = a.image.width;
      const std::size_t height = a.image.height;
      CutRect r;
      r.w = static_cast<std::size_t>(rng.below(width + 1));
      r.h = static_cast<std::size_t>(rng.below(height + 1));
      r.x = static_cast<std::size_t>(rng.below(width - r.w + 1));
      r.y = static_cast<std::size_t>(rng.below(height - r.h + 1));
      MixedSample m = cut_and_mix(a, batch[j], r, n_classes);
      m.partner = j;
      out.push_back(std::move(m));
    } else {
      MixedSample m = cut_and_mix(a, a, CutRect{}, n_classes);
      m.partner = i;
      out.push_back(std::move(m));
    }
  }
  return out;
}

EncoderStack authorize(const EncoderStack& cloud, const Permutation& p_new,
                       const EncoderOptions& options) {
  return conjugate_stack(cloud, p_new, options);
}

EncoderStack deauthorize(const EncoderStack& cloud, const ShuffleKey& key,
                         const EncoderOptions& options) {
  return conjugate_stack(cloud, key.p_col.inverse(), options);
}

}  // namespace pesl
