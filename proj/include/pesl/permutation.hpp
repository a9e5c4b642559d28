#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pesl/random.hpp"
#include "pesl/tensor.hpp"

namespace pesl {

/// A permutation of {0..n-1} stored as an index vector.
///
/// indices()[i] is the source row (or column) that lands at position i, so the
/// matching permutation matrix P has P(i, indices()[i]) = 1 and P * Z gathers
/// rows of Z. All shuffling in the library goes through the gather helpers
/// below; to_matrix() exists for test oracles.
class Permutation {
 public:
  Permutation() = default;
  /// Validates that indices is a bijection on {0..n-1}.
  explicit Permutation(std::vector<std::size_t> indices);

  static Permutation identity(std::size_t n);

  std::size_t size() const noexcept { return indices_.size(); }
  std::size_t operator[](std::size_t i) const { return indices_[i]; }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }

  Permutation inverse() const;
  bool is_identity() const;
  Matrix to_matrix() const;

  bool operator==(const Permutation&) const = default;

 private:
  std::vector<std::size_t> indices_;
};

/// Uniform permutation of size n by Fisher-Yates. n == 0 is a DomainError.
Permutation sample_permutation(std::size_t n, Rng& rng);

/// P * z (row gather).
Matrix apply_rows(const Permutation& p, const Matrix& z);
/// P^T * z, the inverse of apply_rows.
Matrix apply_rows_inv(const Permutation& p, const Matrix& z);
/// z * P^-1 = z * P^T (column gather).
Matrix apply_cols_inv(const Matrix& z, const Permutation& p);
/// z * P, the inverse of apply_cols_inv.
Matrix apply_cols(const Matrix& z, const Permutation& p);

/// P * w * P^-1 for square w.
Matrix conjugate_weight(const Matrix& w, const Permutation& p);
/// v * P^T: the permutation a bias or layer-norm affine undergoes when its
/// columns are conjugated together with the weights.
Vector permute_rowvector(const Vector& v, const Permutation& p);

/// log2(p! * d!), the size of the row-column permutation space of a p x d
/// feature, computed from log-gamma.
double log2_perm_space(std::size_t p, std::size_t d);

/// Order-of-magnitude enlargement b * p^2 of the permutation space under
/// mix-up shuffling. An asymptotic bound, not an exact count.
std::uint64_t mixup_space_factor(std::uint64_t batch, std::uint64_t p);

/// The edge's shuffling secret: a per-model column permutation and the seed
/// from which every per-sample row permutation is derived.
struct ShuffleKey {
  Permutation p_col;
  std::uint64_t row_seed = 0;
  std::size_t p = 0;
  std::size_t d = 0;

  /// Throws ConfigError unless p_col has size d and p, d >= 1.
  void validate() const;

  /// Row permutation for sample `index` of `epoch`. A pure function of
  /// (row_seed, epoch, index).
  Permutation row_permutation(std::uint64_t epoch, std::uint64_t index) const;

  static ShuffleKey generate(std::size_t p, std::size_t d, std::uint64_t seed);
};

inline constexpr int kKeyFileVersion = 1;

/// Key file: JSON {"version", "p", "d", "p_col", "row_seed"}.
void save_key(const ShuffleKey& key, const std::filesystem::path& path);
ShuffleKey load_key(const std::filesystem::path& path);

}  // namespace pesl
