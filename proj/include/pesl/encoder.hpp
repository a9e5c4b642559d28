#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "pesl/permutation.hpp"
#include "pesl/random.hpp"
#include "pesl/tensor.hpp"

namespace pesl {

/// minimal: attention followed by a two-layer MLP, no norm, residual or bias.
/// full: pre-norm blocks with residual connections and biases.
enum class TebVariant { minimal, full };
enum class Activation { relu, tanh };

struct EncoderOptions {
  std::size_t n_heads = 1;
  TebVariant variant = TebVariant::minimal;
  Activation activation = Activation::relu;
  double ln_eps = 1e-5;
  /// Set when inputs arrive column-shuffled. Column shuffling scrambles the
  /// head partition of Q/K/V, so it is only valid with a single head.
  bool column_shuffle = false;

  /// Throws ConfigError for unusable head counts or head/shuffle combinations.
  void validate(std::size_t d) const;
};

/// Weights of one Transformer encoder block. All five projections are d x d.
struct EncoderBlockWeights {
  Matrix w_q, w_k, w_v, w_1, w_2;
  std::optional<Vector> b_q, b_k, b_v, b_1, b_2;
  std::optional<Vector> gamma1, beta1, gamma2, beta2;

  std::size_t dim() const noexcept { return w_q.rows(); }
  bool has_biases() const noexcept { return b_q.has_value(); }
  bool has_layernorm() const noexcept { return gamma1.has_value(); }

  /// Shape checks: square d x d weights, length-d vectors, biases and
  /// layer-norm parameters either all present or all absent.
  void validate() const;
  /// Checks that the optional parameters match what `variant` needs.
  void validate(const EncoderOptions& options) const;

  bool operator==(const EncoderBlockWeights&) const = default;
};

/// Everything teb_forward computes, kept for the backward pass.
struct EncoderActivations {
  Matrix z;       // block input
  Matrix u1;      // attention input (layer-normed z in the full variant)
  Matrix q, k, v;
  std::vector<Matrix> s;  // one p x p attention map per head
  Matrix a;       // attention output, heads concatenated
  Matrix r1;      // z + a (full variant only)
  Matrix u2;      // MLP input
  Matrix a1, h, a2;
  Matrix out;
  LayerNormCache ln1, ln2;
};

struct EncoderGradients {
  Matrix d_w_q, d_w_k, d_w_v, d_w_1, d_w_2;
  Matrix d_z;
  std::optional<Vector> d_b_q, d_b_k, d_b_v, d_b_1, d_b_2;
  std::optional<Vector> d_gamma1, d_beta1, d_gamma2, d_beta2;
};

/// Q = U Wq^T, K = U Wk^T, V = U Wv^T, S = softmax(Q K^T / sqrt(d_head)),
/// A = S V, A1 = A W1^T, H = act(A1), A2 = H W2^T.
/// Returns the block output (A2, or the residual sum in the full variant).
Matrix teb_forward(const EncoderBlockWeights& w, const EncoderOptions& options, const Matrix& z,
                   EncoderActivations& acts);

/// Reverse-mode pass through one block. `upstream` is dl/d(output). The input
/// gradient sums the Q, K and V paths.
EncoderGradients teb_backward(const EncoderBlockWeights& w, const EncoderOptions& options,
                              const EncoderActivations& acts, const Matrix& upstream);

using EncoderStack = std::vector<EncoderBlockWeights>;

struct StackGradients {
  std::vector<EncoderGradients> blocks;
  Matrix d_z;
};

Matrix stack_forward(const EncoderStack& blocks, const EncoderOptions& options, const Matrix& z,
                     std::vector<EncoderActivations>& acts);
StackGradients stack_backward(const EncoderStack& blocks, const EncoderOptions& options,
                              const std::vector<EncoderActivations>& acts,
                              const Matrix& upstream);

/// Largest |entry| init_blocks can produce is kInitScale / sqrt(d).
inline constexpr double kInitScale = 1.0;

/// Weights and biases uniform in [-kInitScale/sqrt(d), kInitScale/sqrt(d)];
/// layer-norm gamma = 1, beta = 0. Deterministic per rng state.
EncoderStack init_blocks(std::size_t n_layers, std::size_t d, const EncoderOptions& options,
                         Rng& rng);

/// W -> P W P^-1 for every projection, v -> v P^T for every bias and affine.
/// Throws ConfigError for multi-head options.
EncoderStack conjugate_stack(const EncoderStack& blocks, const Permutation& p_col,
                             const EncoderOptions& options);

/// Plain SGD: w -= lr * grad for every parameter.
void sgd_update(EncoderBlockWeights& w, const EncoderGradients& g, double lr);

/// Adds `g` into `acc` (shapes must agree). Used for batch accumulation.
void accumulate(EncoderGradients& acc, const EncoderGradients& g);

/// Binary weight container:
///   version u8 | n_blocks u32 | per block: n_entries u8, then per entry
///   role u8 | rows u32 | cols u32 | row-major f64 data (little-endian).
/// Vectors are stored as 1 x d entries.
inline constexpr std::uint8_t kWeightFileVersion = 1;
std::vector<std::uint8_t> encode_stack(const EncoderStack& blocks);
EncoderStack decode_stack(std::span<const std::uint8_t> bytes);
void save_stack(const EncoderStack& blocks, const std::filesystem::path& path);
EncoderStack load_stack(const std::filesystem::path& path);

}  // namespace pesl
