#include "pesl/edge_model.hpp"

#include <algorithm>
#include <cmath>

#include "pesl/bytes.hpp"
#include "pesl/errors.hpp"

namespace pesl {

void PatchGeometry::validate() const {
  if (channels == 0 || image_h == 0 || image_w == 0 || patch_h == 0 || patch_w == 0) {
    throw ShapeError("patch geometry: all dimensions must be positive");
  }
  if (image_h % patch_h != 0 || image_w % patch_w != 0) {
    throw ShapeError("patch geometry: image " + std::to_string(image_h) + "x" +
                     std::to_string(image_w) + " is not divisible by patch " +
                     std::to_string(patch_h) + "x" + std::to_string(patch_w));
  }
}

void EdgeWeights::validate(const PatchGeometry& geometry) const {
  geometry.validate();
  const std::size_t d = dim();
  if (w_embed.rows() != geometry.patch_dim() || d == 0) {
    throw ShapeError("edge weights: embedding " + w_embed.shape_str() + " does not take " +
                     std::to_string(geometry.patch_dim()) + "-wide patches");
  }
  if (b_embed.size() != d) throw ShapeError("edge weights: b_embed length");
  if (pos_embed && (pos_embed->rows() != geometry.patches() || pos_embed->cols() != d)) {
    throw ShapeError("edge weights: position embedding " + pos_embed->shape_str() +
                     " vs p=" + std::to_string(geometry.patches()));
  }
  if (w_head.rows() != d) throw ShapeError("edge weights: head " + w_head.shape_str());
  if (b_head.size() != w_head.cols()) throw ShapeError("edge weights: b_head length");
}

Matrix patchify(const PatchGeometry& g, const Image& image) {
  g.validate();
  if (image.channels != g.channels || image.height != g.image_h || image.width != g.image_w) {
    throw ShapeError("patchify: image " + std::to_string(image.channels) + "x" +
                     std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " does not match geometry");
  }
  const std::size_t per_row = g.image_w / g.patch_w;
  Matrix out(g.patches(), g.patch_dim());
  for (std::size_t pi = 0; pi < g.patches(); ++pi) {
    const std::size_t y0 = (pi / per_row) * g.patch_h;
    const std::size_t x0 = (pi % per_row) * g.patch_w;
    std::size_t col = 0;
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t y = 0; y < g.patch_h; ++y)
        for (std::size_t x = 0; x < g.patch_w; ++x) out(pi, col++) = image.at(c, y0 + y, x0 + x);
  }
  return out;
}

Image unpatchify(const PatchGeometry& g, const Matrix& patches) {
  g.validate();
  if (patches.rows() != g.patches() || patches.cols() != g.patch_dim()) {
    throw ShapeError("unpatchify: " + patches.shape_str() + " does not match geometry");
  }
  const std::size_t per_row = g.image_w / g.patch_w;
  Image img(g.channels, g.image_h, g.image_w);
  for (std::size_t pi = 0; pi < g.patches(); ++pi) {
    const std::size_t y0 = (pi / per_row) * g.patch_h;
    const std::size_t x0 = (pi % per_row) * g.patch_w;
    std::size_t col = 0;
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t y = 0; y < g.patch_h; ++y)
        for (std::size_t x = 0; x < g.patch_w; ++x) img.at(c, y0 + y, x0 + x) = patches(pi, col++);
  }
  return img;
}

Matrix embed_patches(const EdgeWeights& w, const Matrix& patches) {
  Matrix z = add_row_vector(matmul(patches, w.w_embed), w.b_embed);
  if (w.pos_embed) z = add(z, *w.pos_embed);
  return z;
}

Matrix patch_embed(const EdgeWeights& w, const PatchGeometry& geometry, const Image& image) {
  w.validate(geometry);
  return embed_patches(w, patchify(geometry, image));
}

Vector head_forward(const EdgeWeights& w, const Matrix& a_final) {
  if (a_final.cols() != w.dim()) {
    throw ShapeError("head_forward: features " + a_final.shape_str() + " vs width " +
                     std::to_string(w.dim()));
  }
  Vector pooled = column_sums(a_final);
  for (double& v : pooled) v /= static_cast<double>(a_final.rows());
  Vector logits(w.classes());
  for (std::size_t j = 0; j < w.classes(); ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < pooled.size(); ++k) acc += pooled[k] * w.w_head(k, j);
    logits[j] = acc + w.b_head[j];
  }
  check_finite(logits, "head_forward");
  return logits;
}

namespace {

Vector softmax(const Vector& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace

LossResult cross_entropy(const Vector& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw DomainError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                      std::to_string(logits.size()) + " classes");
  }
  Vector target(logits.size(), 0.0);
  target[label] = 1.0;
  return cross_entropy(logits, target);
}

LossResult cross_entropy(const Vector& logits, const Vector& target) {
  if (logits.empty() || target.size() != logits.size()) {
    throw ShapeError("cross_entropy: target length " + std::to_string(target.size()) +
                     " vs " + std::to_string(logits.size()) + " logits");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double log_z = mx + std::log(sum);
  const Vector prob = softmax(logits);
  LossResult r;
  r.d_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (target[i] != 0.0) r.loss -= target[i] * (logits[i] - log_z);
    r.d_logits[i] = prob[i] - target[i];
  }
  return r;
}

HeadBackward head_backward(const EdgeWeights& w, const Matrix& a_final, const Vector& d_logits) {
  if (d_logits.size() != w.classes()) throw ShapeError("head_backward: d_logits length");
  if (a_final.cols() != w.dim()) throw ShapeError("head_backward: features " + a_final.shape_str());
  const std::size_t p = a_final.rows();
  const std::size_t d = w.dim();
  Vector pooled = column_sums(a_final);
  for (double& v : pooled) v /= static_cast<double>(p);

  HeadBackward out{Matrix(p, d), Matrix(d, w.classes()), d_logits};
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t j = 0; j < w.classes(); ++j) out.d_w_head(k, j) = pooled[k] * d_logits[j];
  for (std::size_t k = 0; k < d; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w.classes(); ++j) acc += w.w_head(k, j) * d_logits[j];
    const double per_row = acc / static_cast<double>(p);
    for (std::size_t r = 0; r < p; ++r) out.d_a_final(r, k) = per_row;
  }
  return out;
}

EmbedBackward embed_backward(const EdgeWeights& w, const Matrix& patches, const Matrix& d_z) {
  if (d_z.rows() != patches.rows() || d_z.cols() != w.dim()) {
    throw ShapeError("embed_backward: gradient " + d_z.shape_str() + " vs patches " +
                     patches.shape_str());
  }
  EmbedBackward out{matmul_tn(patches, d_z), column_sums(d_z), std::nullopt};
  if (w.pos_embed) out.d_pos_embed = d_z;
  return out;
}

std::size_t argmax(const Vector& v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

EdgeWeights init_edge(const PatchGeometry& geometry, std::size_t d, std::size_t n_classes,
                      bool position_embedding, Rng& rng) {
  geometry.validate();
  if (d == 0 || n_classes == 0) throw DomainError("init_edge: d and n_classes must be >= 1");
  auto fill = [&](Matrix& m, double bound) {
    for (double& v : m.data()) v = rng.uniform(-bound, bound);
  };
  EdgeWeights w;
  const double be = 1.0 / std::sqrt(static_cast<double>(geometry.patch_dim()));
  w.w_embed = Matrix(geometry.patch_dim(), d);
  fill(w.w_embed, be);
  w.b_embed.resize(d);
  for (double& v : w.b_embed) v = rng.uniform(-be, be);
  if (position_embedding) {
    w.pos_embed = Matrix(geometry.patches(), d);
    fill(*w.pos_embed, 0.5);
  }
  const double bh = 1.0 / std::sqrt(static_cast<double>(d));
  w.w_head = Matrix(d, n_classes);
  fill(w.w_head, bh);
  w.b_head.assign(n_classes, 0.0);
  return w;
}

namespace {

void step(Matrix& w, const Matrix& g, double lr) {
  if (w.rows() != g.rows() || w.cols() != g.cols()) throw ShapeError("sgd_update: edge shape");
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] -= lr * g.data()[i];
  check_finite(w.data(), "sgd_update");
}

void step(Vector& w, const Vector& g, double lr) {
  if (w.size() != g.size()) throw ShapeError("sgd_update: edge vector length");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  check_finite(w, "sgd_update");
}

void add_into(Vector& acc, const Vector& g) {
  if (acc.size() != g.size()) throw ShapeError("accumulate: edge vector length");
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

}  // namespace

void sgd_update(EdgeWeights& w, const EdgeGradients& g, double lr) {
  step(w.w_embed, g.d_w_embed, lr);
  step(w.b_embed, g.d_b_embed, lr);
  if (w.pos_embed) {
    if (!g.d_pos_embed) throw ShapeError("sgd_update: missing position-embedding gradient");
    step(*w.pos_embed, *g.d_pos_embed, lr);
  }
  step(w.w_head, g.d_w_head, lr);
  step(w.b_head, g.d_b_head, lr);
}

void accumulate(EdgeGradients& acc, const EdgeGradients& g) {
  if (acc.d_w_embed.empty()) {
    acc = g;
    return;
  }
  acc.d_w_embed = add(acc.d_w_embed, g.d_w_embed);
  add_into(acc.d_b_embed, g.d_b_embed);
  if (g.d_pos_embed) acc.d_pos_embed = add(*acc.d_pos_embed, *g.d_pos_embed);
  acc.d_w_head = add(acc.d_w_head, g.d_w_head);
  add_into(acc.d_b_head, g.d_b_head);
}

double max_abs_diff(const EdgeWeights& a, const EdgeWeights& b) {
  double m = std::max({max_abs_diff(a.w_embed, b.w_embed), max_abs_diff(a.b_embed, b.b_embed),
                       max_abs_diff(a.w_head, b.w_head), max_abs_diff(a.b_head, b.b_head)});
  if (a.pos_embed.has_value() != b.pos_embed.has_value()) {
    throw ShapeError("max_abs_diff: position embedding present on one side only");
  }
  if (a.pos_embed) m = std::max(m, max_abs_diff(*a.pos_embed, *b.pos_embed));
  return m;
}

namespace {

enum EdgeRole : std::uint8_t { kWEmbed = 64, kBEmbed, kPos, kWHead, kBHead };
constexpr std::uint8_t kEdgeFileVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_edge(const EdgeWeights& w) {
  ByteWriter out;
  out.u8(kEdgeFileVersion);
  out.u32(1);
  out.u8(w.pos_embed ? 5 : 4);
  out.u8(kWEmbed);
  out.matrix(w.w_embed);
  out.u8(kBEmbed);
  out.matrix(Matrix::row_vector(w.b_embed));
  if (w.pos_embed) {
    out.u8(kPos);
    out.matrix(*w.pos_embed);
  }
  out.u8(kWHead);
  out.matrix(w.w_head);
  out.u8(kBHead);
  out.matrix(Matrix::row_vector(w.b_head));
  return out.take();
}

EdgeWeights decode_edge(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (in.u8() != kEdgeFileVersion) throw DecodeError("unsupported edge container version", 0);
  if (in.u32() != 1) throw DecodeError("edge container must hold exactly one block", 1);
  EdgeWeights w;
  const std::uint8_t count = in.u8();
  for (std::uint8_t i = 0; i < count; ++i) {
    const std::size_t at = in.offset();
    const std::uint8_t role = in.u8();
    Matrix m = in.matrix();
    switch (role) {
      case kWEmbed: w.w_embed = std::move(m); break;
      case kBEmbed: w.b_embed = m.data(); break;
      case kPos: w.pos_embed = std::move(m); break;
      case kWHead: w.w_head = std::move(m); break;
      case kBHead: w.b_head = m.data(); break;
      default: throw DecodeError("unknown edge role " + std::to_string(role), at);
    }
  }
  if (!in.at_end()) throw DecodeError("trailing bytes after edge container", in.offset());
  if (w.w_embed.empty() || w.w_head.empty()) throw DecodeError("edge container incomplete", 0);
  return w;
}

void save_edge(const EdgeWeights& w, const std::filesystem::path& path) {
  write_file(path, encode_edge(w));
}

EdgeWeights load_edge(const std::filesystem::path& path) { return decode_edge(read_file(path)); }

}  // namespace pesl
