#include "pesl/encoder.hpp"

#include <cmath>

#include "pesl/bytes.hpp"
#include "pesl/errors.hpp"

namespace pesl {

namespace {

Matrix slice_cols(const Matrix& m, std::size_t start, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = m(r, start + c);
  return out;
}

void place_cols(Matrix& dst, const Matrix& src, std::size_t start) {
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < src.cols(); ++c) dst(r, start + c) = src(r, c);
}

Matrix linear(const Matrix& x, const Matrix& w, const std::optional<Vector>& b) {
  Matrix y = matmul_nt_canonical(x, w);
  return b ? add_row_vector(y, *b) : y;
}

Matrix activate(const Matrix& x, Activation act) {
  return act == Activation::relu ? relu(x) : tanh_act(x);
}

Matrix activate_grad(const Matrix& x, Activation act) {
  return act == Activation::relu ? relu_grad(x) : tanh_grad(x);
}

void check_vector(const std::optional<Vector>& v, std::size_t d, const char* name) {
  if (v && v->size() != d) {
    throw ShapeError(std::string("encoder block: ") + name + " has length " +
                     std::to_string(v->size()) + ", expected " + std::to_string(d));
  }
}

void add_into(Matrix& acc, const Matrix& g) { acc = add(acc, g); }

void add_into(std::optional<Vector>& acc, const std::optional<Vector>& g) {
  if (!g) return;
  if (!acc) {
    acc = g;
    return;
  }
  if (acc->size() != g->size()) throw ShapeError("accumulate: vector length mismatch");
  for (std::size_t i = 0; i < g->size(); ++i) (*acc)[i] += (*g)[i];
}

void step(Matrix& w, const Matrix& g, double lr) {
  if (w.rows() != g.rows() || w.cols() != g.cols()) {
    throw ShapeError("sgd_update: gradient " + g.shape_str() + " vs weight " + w.shape_str());
  }
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] -= lr * g.data()[i];
  check_finite(w.data(), "sgd_update");
}

void step(std::optional<Vector>& w, const std::optional<Vector>& g, double lr) {
  if (!w) return;
  if (!g || g->size() != w->size()) throw ShapeError("sgd_update: missing vector gradient");
  for (std::size_t i = 0; i < w->size(); ++i) (*w)[i] -= lr * (*g)[i];
  check_finite(*w, "sgd_update");
}

std::optional<Vector> permute_opt(const std::optional<Vector>& v, const Permutation& p) {
  if (!v) return std::nullopt;
  return permute_rowvector(*v, p);
}

}  // namespace

void EncoderOptions::validate(std::size_t d) const {
  if (n_heads == 0) throw ConfigError("encoder: n_heads must be at least 1");
  if (d % n_heads != 0) {
    throw ConfigError("encoder: width " + std::to_string(d) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (column_shuffle && n_heads > 1) {
    throw ConfigError(
        "encoder: column shuffle requires single-head attention; with several heads the "
        "column permutation mixes features across heads, so only row shuffle is supported");
  }
  if (!(ln_eps > 0.0)) throw ConfigError("encoder: ln_eps must be positive");
}

void EncoderBlockWeights::validate() const {
  const std::size_t d = dim();
  if (d == 0) throw ShapeError("encoder block: missing weights");
  for (const Matrix* m : {&w_q, &w_k, &w_v, &w_1, &w_2}) {
    if (m->rows() != d || m->cols() != d) {
      throw ShapeError("encoder block: weight " + m->shape_str() + " is not " +
                       std::to_string(d) + "x" + std::to_string(d));
    }
  }
  const bool biases = b_q.has_value();
  if (b_k.has_value() != biases || b_v.has_value() != biases || b_1.has_value() != biases ||
      b_2.has_value() != biases) {
    throw ShapeError("encoder block: biases must be all present or all absent");
  }
  const bool ln = gamma1.has_value();
  if (beta1.has_value() != ln || gamma2.has_value() != ln || beta2.has_value() != ln) {
    throw ShapeError("encoder block: layer-norm affines must be all present or all absent");
  }
  check_vector(b_q, d, "b_q");
  check_vector(b_k, d, "b_k");
  check_vector(b_v, d, "b_v");
  check_vector(b_1, d, "b_1");
  check_vector(b_2, d, "b_2");
  check_vector(gamma1, d, "gamma1");
  check_vector(beta1, d, "beta1");
  check_vector(gamma2, d, "gamma2");
  check_vector(beta2, d, "beta2");
}

void EncoderBlockWeights::validate(const EncoderOptions& options) const {
  validate();
  options.validate(dim());
  if (options.variant == TebVariant::full && !has_layernorm()) {
    throw ConfigError("encoder block: full variant needs layer-norm parameters");
  }
}

Matrix teb_forward(const EncoderBlockWeights& w, const EncoderOptions& options, const Matrix& z,
                   EncoderActivations& acts) {
  w.validate(options);
  const std::size_t d = w.dim();
  if (z.cols() != d) {
    throw ShapeError("teb_forward: input " + z.shape_str() + " does not match block width " +
                     std::to_string(d));
  }
  const bool full = options.variant == TebVariant::full;

  acts.z = z;
  acts.u1 = full ? layernorm_rows(z, *w.gamma1, *w.beta1, options.ln_eps, &acts.ln1) : z;
  acts.q = linear(acts.u1, w.w_q, w.b_q);
  acts.k = linear(acts.u1, w.w_k, w.b_k);
  acts.v = linear(acts.u1, w.w_v, w.b_v);

  const std::size_t heads = options.n_heads;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  acts.s.clear();
  if (heads == 1) {
    acts.s.push_back(softmax_rows(scale(matmul_nt_canonical(acts.q, acts.k), inv_sqrt)));
    acts.a = matmul_canonical(acts.s[0], acts.v);
  } else {
    acts.a = Matrix(z.rows(), d);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix qh = slice_cols(acts.q, h * dh, dh);
      const Matrix kh = slice_cols(acts.k, h * dh, dh);
      const Matrix vh = slice_cols(acts.v, h * dh, dh);
      acts.s.push_back(softmax_rows(scale(matmul_nt_canonical(qh, kh), inv_sqrt)));
      place_cols(acts.a, matmul_canonical(acts.s.back(), vh), h * dh);
    }
  }

  if (full) {
    acts.r1 = add(z, acts.a);
    acts.u2 = layernorm_rows(acts.r1, *w.gamma2, *w.beta2, options.ln_eps, &acts.ln2);
  } else {
    acts.u2 = acts.a;
  }
  acts.a1 = linear(acts.u2, w.w_1, w.b_1);
  acts.h = activate(acts.a1, options.activation);
  acts.a2 = linear(acts.h, w.w_2, w.b_2);
  acts.out = full ? add(acts.r1, acts.a2) : acts.a2;
  return acts.out;
}

EncoderGradients teb_backward(const EncoderBlockWeights& w, const EncoderOptions& options,
                              const EncoderActivations& acts, const Matrix& upstream) {
  w.validate(options);
  if (upstream.rows() != acts.out.rows() || upstream.cols() != acts.out.cols()) {
    throw ShapeError("teb_backward: upstream " + upstream.shape_str() + " vs output " +
                     acts.out.shape_str());
  }
  const bool full = options.variant == TebVariant::full;
  const bool biases = w.has_biases();
  EncoderGradients g;

  // MLP
  const Matrix& d_a2 = upstream;
  g.d_w_2 = matmul_tn_canonical(d_a2, acts.h);
  const Matrix d_h = matmul_canonical(d_a2, w.w_2);
  const Matrix d_a1 = hadamard(d_h, activate_grad(acts.a1, options.activation));
  g.d_w_1 = matmul_tn_canonical(d_a1, acts.u2);
  const Matrix d_u2 = matmul_canonical(d_a1, w.w_1);
  if (biases) {
    g.d_b_2 = column_sums(d_a2);
    g.d_b_1 = column_sums(d_a1);
  }

  Matrix d_a;
  Matrix d_r1;
  if (full) {
    LayerNormGrads ln2 = layernorm_rows_backward(acts.ln2, *w.gamma2, d_u2);
    d_r1 = add(upstream, ln2.d_x);
    g.d_gamma2 = std::move(ln2.d_gamma);
    g.d_beta2 = std::move(ln2.d_beta);
    d_a = d_r1;
  } else {
    d_a = d_u2;
  }

  // Attention
  const std::size_t d = w.dim();
  const std::size_t heads = options.n_heads;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix d_q, d_k, d_v;
  if (heads == 1) {
    const Matrix& s = acts.s[0];
    const Matrix d_s = matmul_nt_canonical(d_a, acts.v);
    d_v = matmul_tn_canonical(s, d_a);
    const Matrix d_scores = scale(softmax_rows_backward(s, d_s), inv_sqrt);
    d_q = matmul_canonical(d_scores, acts.k);
    d_k = matmul_tn_canonical(d_scores, acts.q);
  } else {
    const std::size_t p = acts.q.rows();
    d_q = Matrix(p, d);
    d_k = Matrix(p, d);
    d_v = Matrix(p, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& s = acts.s[h];
      const Matrix qh = slice_cols(acts.q, h * dh, dh);
      const Matrix kh = slice_cols(acts.k, h * dh, dh);
      const Matrix vh = slice_cols(acts.v, h * dh, dh);
      const Matrix dah = slice_cols(d_a, h * dh, dh);
      const Matrix d_s = matmul_nt_canonical(dah, vh);
      place_cols(d_v, matmul_tn_canonical(s, dah), h * dh);
      const Matrix d_scores = scale(softmax_rows_backward(s, d_s), inv_sqrt);
      place_cols(d_q, matmul_canonical(d_scores, kh), h * dh);
      place_cols(d_k, matmul_tn_canonical(d_scores, qh), h * dh);
    }
  }

  g.d_w_q = matmul_tn_canonical(d_q, acts.u1);
  g.d_w_k = matmul_tn_canonical(d_k, acts.u1);
  g.d_w_v = matmul_tn_canonical(d_v, acts.u1);
  if (biases) {
    g.d_b_q = column_sums(d_q);
    g.d_b_k = column_sums(d_k);
    g.d_b_v = column_sums(d_v);
  }
  const Matrix d_u1 = add(add(matmul_canonical(d_q, w.w_q), matmul_canonical(d_k, w.w_k)), matmul_canonical(d_v, w.w_v));

  if (full) {
    LayerNormGrads ln1 = layernorm_rows_backward(acts.ln1, *w.gamma1, d_u1);
    g.d_z = add(d_r1, ln1.d_x);
    g.d_gamma1 = std::move(ln1.d_gamma);
    g.d_beta1 = std::move(ln1.d_beta);
  } else {
    g.d_z = d_u1;
  }
  return g;
}

Matrix stack_forward(const EncoderStack& blocks, const EncoderOptions& options, const Matrix& z,
                     std::vector<EncoderActivations>& acts) {
  if (blocks.empty()) throw ShapeError("stack_forward: empty stack");
  const std::size_t d = blocks.front().dim();
  for (const auto& b : blocks) {
    if (b.dim() != d) throw ShapeError("stack_forward: blocks have inconsistent width");
  }
  acts.assign(blocks.size(), EncoderActivations{});
  Matrix x = z;
  for (std::size_t i = 0; i < blocks.size(); ++i) x = teb_forward(blocks[i], options, x, acts[i]);
  return x;
}

StackGradients stack_backward(const EncoderStack& blocks, const EncoderOptions& options,
                              const std::vector<EncoderActivations>& acts,
                              const Matrix& upstream) {
  if (acts.size() != blocks.size()) {
    throw ShapeError("stack_backward: " + std::to_string(acts.size()) +
                     " activation sets for " + std::to_string(blocks.size()) + " blocks");
  }
  StackGradients out;
  out.blocks.resize(blocks.size());
  Matrix g = upstream;
  for (std::size_t i = blocks.size(); i-- > 0;) {
    out.blocks[i] = teb_backward(blocks[i], options, acts[i], g);
    g = out.blocks[i].d_z;
  }
  out.d_z = std::move(g);
  return out;
}

EncoderStack init_blocks(std::size_t n_layers, std::size_t d, const EncoderOptions& options,
                         Rng& rng) {
  if (n_layers == 0 || d == 0) throw DomainError("init_blocks: n_layers and d must be >= 1");
  options.validate(d);
  const double bound = kInitScale / std::sqrt(static_cast<double>(d));
  auto matrix = [&] {
    Matrix m(d, d);
    for (double& v : m.data()) v = rng.uniform(-bound, bound);
    return m;
  };
  auto vector = [&] {
    Vector v(d);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return v;
  };

  EncoderStack blocks;
  for (std::size_t l = 0; l < n_layers; ++l) {
    EncoderBlockWeights w;
    w.w_q = matrix();
    w.w_k = matrix();
    w.w_v = matrix();
    w.w_1 = matrix();
    w.w_2 = matrix();
    if (options.variant == TebVariant::full) {
      w.b_q = vector();
      w.b_k = vector();
      w.b_v = vector();
      w.b_1 = vector();
      w.b_2 = vector();
      w.gamma1 = Vector(d, 1.0);
      w.beta1 = Vector(d, 0.0);
      w.gamma2 = Vector(d, 1.0);
      w.beta2 = Vector(d, 0.0);
    }
    blocks.push_back(std::move(w));
  }
  return blocks;
}

EncoderStack conjugate_stack(const EncoderStack& blocks, const Permutation& p_col,
                             const EncoderOptions& options) {
  if (options.n_heads > 1) {
    throw ConfigError("conjugate_stack: weight conjugation requires single-head attention");
  }
  EncoderStack out;
  out.reserve(blocks.size());
  for (const auto& w : blocks) {
    w.validate();
    EncoderBlockWeights c;
    c.w_q = conjugate_weight(w.w_q, p_col);
    c.w_k = conjugate_weight(w.w_k, p_col);
    c.w_v = conjugate_weight(w.w_v, p_col);
    c.w_1 = conjugate_weight(w.w_1, p_col);
    c.w_2 = conjugate_weight(w.w_2, p_col);
    c.b_q = permute_opt(w.b_q, p_col);
    c.b_k = permute_opt(w.b_k, p_col);
    c.b_v = permute_opt(w.b_v, p_col);
    c.b_1 = permute_opt(w.b_1, p_col);
    c.b_2 = permute_opt(w.b_2, p_col);
    c.gamma1 = permute_opt(w.gamma1, p_col);
    c.beta1 = permute_opt(w.beta1, p_col);
    c.gamma2 = permute_opt(w.gamma2, p_col);
    c.beta2 = permute_opt(w.beta2, p_col);
    out.push_back(std::move(c));
  }
  return out;
}

void sgd_update(EncoderBlockWeights& w, const EncoderGradients& g, double lr) {
  step(w.w_q, g.d_w_q, lr);
  step(w.w_k, g.d_w_k, lr);
  step(w.w_v, g.d_w_v, lr);
  step(w.w_1, g.d_w_1, lr);
  step(w.w_2, g.d_w_2, lr);
  step(w.b_q, g.d_b_q, lr);
  step(w.b_k, g.d_b_k, lr);
  step(w.b_v, g.d_b_v, lr);
  step(w.b_1, g.d_b_1, lr);
  step(w.b_2, g.d_b_2, lr);
  step(w.gamma1, g.d_gamma1, lr);
  step(w.beta1, g.d_beta1, lr);
  step(w.gamma2, g.d_gamma2, lr);
  step(w.beta2, g.d_beta2, lr);
}

void accumulate(EncoderGradients& acc, const EncoderGradients& g) {
  if (acc.d_w_q.empty()) {
    acc = g;
    return;
  }
  add_into(acc.d_w_q, g.d_w_q);
  add_into(acc.d_w_k, g.d_w_k);
  add_into(acc.d_w_v, g.d_w_v);
  add_into(acc.d_w_1, g.d_w_1);
  add_into(acc.d_w_2, g.d_w_2);
  add_into(acc.d_b_q, g.d_b_q);
  add_into(acc.d_b_k, g.d_b_k);
  add_into(acc.d_b_v, g.d_b_v);
  add_into(acc.d_b_1, g.d_b_1);
  add_into(acc.d_b_2, g.d_b_2);
  add_into(acc.d_gamma1, g.d_gamma1);
  add_into(acc.d_beta1, g.d_beta1);
  add_into(acc.d_gamma2, g.d_gamma2);
  add_into(acc.d_beta2, g.d_beta2);
}

// Weight container role tags.
namespace {

enum Role : std::uint8_t {
  kWq = 1, kWk, kWv, kW1, kW2,
  kBq = 16, kBk, kBv, kB1, kB2,
  kGamma1 = 32, kBeta1, kGamma2, kBeta2,
};

struct Entry {
  Role role;
  const Matrix* m;
  const std::optional<Vector>* v;
};

}  // namespace

std::vector<std::uint8_t> encode_stack(const EncoderStack& blocks) {
  ByteWriter out;
  out.u8(kWeightFileVersion);
  out.u32(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& w : blocks) {
    w.validate();
    const Entry entries[] = {
        {kWq, &w.w_q, nullptr},    {kWk, &w.w_k, nullptr},      {kWv, &w.w_v, nullptr},
        {kW1, &w.w_1, nullptr},    {kW2, &w.w_2, nullptr},      {kBq, nullptr, &w.b_q},
        {kBk, nullptr, &w.b_k},    {kBv, nullptr, &w.b_v},      {kB1, nullptr, &w.b_1},
        {kB2, nullptr, &w.b_2},    {kGamma1, nullptr, &w.gamma1}, {kBeta1, nullptr, &w.beta1},
        {kGamma2, nullptr, &w.gamma2}, {kBeta2, nullptr, &w.beta2},
    };
    std::uint8_t count = 0;
    for (const auto& e : entries) count += (e.m != nullptr || e.v->has_value()) ? 1 : 0;
    out.u8(count);
    for (const auto& e : entries) {
      if (e.m != nullptr) {
        out.u8(e.role);
        out.matrix(*e.m);
      } else if (e.v->has_value()) {
        out.u8(e.role);
        out.matrix(Matrix::row_vector(**e.v));
      }
    }
  }
  return out.take();
}

EncoderStack decode_stack(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const std::uint8_t version = in.u8();
  if (version != kWeightFileVersion) {
    throw DecodeError("unsupported weight container version " + std::to_string(version), 0);
  }
  const std::uint32_t n_blocks = in.u32();
  EncoderStack blocks;
  for (std::uint32_t b = 0; b < n_blocks; ++b) {
    EncoderBlockWeights w;
    const std::uint8_t count = in.u8();
    for (std::uint8_t i = 0; i < count; ++i) {
      const std::size_t at = in.offset();
      const auto role = static_cast<Role>(in.u8());
      Matrix m = in.matrix();
      auto vec = [&](std::optional<Vector>& dst) {
        if (m.rows() != 1) throw DecodeError("vector entry must have one row", at);
        dst = m.data();
      };
      switch (role) {
        case kWq: w.w_q = std::move(m); break;
        case kWk: w.w_k = std::move(m); break;
        case kWv: w.w_v = std::move(m); break;
        case kW1: w.w_1 = std::move(m); break;
        case kW2: w.w_2 = std::move(m); break;
        case kBq: vec(w.b_q); break;
        case kBk: vec(w.b_k); break;
        case kBv: vec(w.b_v); break;
        case kB1: vec(w.b_1); break;
        case kB2: vec(w.b_2); break;
        case kGamma1: vec(w.gamma1); break;
        case kBeta1: vec(w.beta1); break;
        case kGamma2: vec(w.gamma2); break;
        case kBeta2: vec(w.beta2); break;
        default: throw DecodeError("unknown weight role " + std::to_string(role), at);
      }
    }
    try {
      w.validate();
    } catch (const ShapeError& e) {
      throw DecodeError(std::string("invalid block: ") + e.what(), in.offset());
    }
    blocks.push_back(std::move(w));
  }
  if (!in.at_end()) throw DecodeError("trailing bytes after weight container", in.offset());
  return blocks;
}

void save_stack(const EncoderStack& blocks, const std::filesystem::path& path) {
  write_file(path, encode_stack(blocks));
}

EncoderStack load_stack(const std::filesystem::path& path) { return decode_stack(read_file(path)); }

}  // namespace pesl
