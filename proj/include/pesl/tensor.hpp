#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pesl {

/// Row vectors (biases, layer-norm affines) are plain std::vector<double>.
using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
///
/// Every matrix built through the value constructors is checked to hold only
/// finite elements, so NaN/Inf cannot leak out of any operation in this
/// module without raising a DomainError at the point it first appears.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, double fill);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  /// Builds from nested braces: Matrix::from_rows({{1, 2}, {3, 4}}).
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  /// Single-row matrix holding v.
  static Matrix row_vector(const Vector& v);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool square() const noexcept { return rows_ == cols_; }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  Matrix transpose() const;
  /// "RxC" for error messages.
  std::string shape_str() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Throws DomainError if any element is NaN or infinite.
void check_finite(std::span<const double> values, const char* where);

// Products. Each output element is accumulated from 0.0 over the shared
// dimension in ascending index order; the transposed variants follow the same
// order as matmul applied to the explicit transpose.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b

/// Sums the terms in ascending value order, so the result depends only on the
/// multiset of terms and not on their arrangement. Reorders `terms` in place.
double canonical_sum(std::span<double> terms);

// Products whose output elements are canonical sums of the elementwise
// products. Permuting the shared dimension of both operands leaves every
// output bit unchanged. The cloud encoder uses these.
Matrix matmul_canonical(const Matrix& a, const Matrix& b);
Matrix matmul_nt_canonical(const Matrix& a, const Matrix& b);
Matrix matmul_tn_canonical(const Matrix& a, const Matrix& b);

Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
Matrix neg(const Matrix& a);

/// Adds v to every row of m.
Matrix add_row_vector(const Matrix& m, const Vector& v);
/// Column sums, each a canonical_sum over the rows.
Vector column_sums(const Matrix& m);
/// Row means, accumulated left to right.
Vector row_means(const Matrix& m);

Matrix relu(const Matrix& x);
/// Indicator x > 0; the subgradient at 0 is taken as 0.
Matrix relu_grad(const Matrix& x);
Matrix tanh_act(const Matrix& x);
Matrix tanh_grad(const Matrix& x);

/// Row-wise softmax, stabilized by subtracting each row's maximum.
Matrix softmax_rows(const Matrix& x);

/// Pulls `upstream` (dl/dS) back through S = softmax_rows(X):
///   out_ij = s_ij * (g_ij - sum_k g_ik * s_ik).
/// Throws ContractError when a row of s does not sum to 1 within 1e-6.
Matrix softmax_rows_backward(const Matrix& s, const Matrix& upstream);

/// Intermediates of layernorm_rows kept for the backward pass.
struct LayerNormCache {
  Matrix x_hat;  // normalized input before the affine
  Vector rstd;   // 1 / sqrt(var + eps), one per row
};

struct LayerNormGrads {
  Matrix d_x;
  Vector d_gamma;
  Vector d_beta;
};

/// Per-row (x - mean) / sqrt(var + eps) * gamma + beta, population variance.
Matrix layernorm_rows(const Matrix& x, const Vector& gamma, const Vector& beta, double eps,
                      LayerNormCache* cache = nullptr);
LayerNormGrads layernorm_rows_backward(const LayerNormCache& cache, const Vector& gamma,
                                       const Matrix& upstream);

double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs_diff(const Vector& a, const Vector& b);
double max_abs(const Matrix& a);
double trace(const Matrix& a);

}  // namespace pesl
