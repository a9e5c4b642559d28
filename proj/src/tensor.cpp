#include "pesl/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "pesl/errors.hpp"

namespace pesl {

namespace {

void require_positive(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("matrix dimensions must be positive, got " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

template <typename F>
Matrix map(const Matrix& x, F f) {
  std::vector<double> out(x.size());
  std::transform(x.data().begin(), x.data().end(), out.begin(), f);
  return Matrix(x.rows(), x.cols(), std::move(out));
}

template <typename F>
Matrix zip(const Matrix& a, const Matrix& b, const char* op, F f) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.size());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), f);
  return Matrix(a.rows(), a.cols(), std::move(out));
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : Matrix(rows, cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols) {
  require_positive(rows, cols);
  check_finite(std::span<const double>(&fill, 1), "Matrix fill");
  data_.assign(rows * cols, fill);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_positive(rows, cols);
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     shape_str());
  }
  check_finite(data_, "Matrix");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(const Vector& v) { return Matrix(1, v.size(), v); }

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void check_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw DomainError(std::string(where) + ": non-finite element");
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_str() + " by " + b.shape_str());
  }
  const std::size_t n = a.rows(), m = b.cols(), k_dim = a.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < k_dim; ++k) acc += a(i, k) * b(k, j);
      out[i * m + j] = acc;
    }
  }
  return Matrix(n, m, std::move(out));
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + a.shape_str() + " by transpose of " +
                     b.shape_str());
  }
  const std::size_t n = a.rows(), m = b.rows(), k_dim = a.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < k_dim; ++k) acc += a(i, k) * b(j, k);
      out[i * m + j] = acc;
    }
  }
  return Matrix(n, m, std::move(out));
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose of " + a.shape_str() + " by " +
                     b.shape_str());
  }
  const std::size_t n = a.cols(), m = b.cols(), k_dim = a.rows();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < k_dim; ++k) acc += a(k, i) * b(k, j);
      out[i * m + j] = acc;
    }
  }
  return Matrix(n, m, std::move(out));
}

double canonical_sum(std::span<double> terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

namespace {

// out(i, j) = canonical sum over k of term(i, j, k).
template <typename Term>
Matrix canonical_product(std::size_t n, std::size_t m, std::size_t k_dim, Term term) {
  std::vector<double> out(n * m);
  std::vector<double> buf(k_dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < k_dim; ++k) buf[k] = term(i, j, k);
      out[i * m + j] = canonical_sum(buf);
    }
  }
  return Matrix(n, m, std::move(out));
}

}  // namespace

Matrix matmul_canonical(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_str() + " by " + b.shape_str());
  }
  return canonical_product(a.rows(), b.cols(), a.cols(),
                           [&](std::size_t i, std::size_t j, std::size_t k) {
                             return a(i, k) * b(k, j);
                           });
}

Matrix matmul_nt_canonical(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + a.shape_str() + " by transpose of " +
                     b.shape_str());
  }
  return canonical_product(a.rows(), b.rows(), a.cols(),
                           [&](std::size_t i, std::size_t j, std::size_t k) {
                             return a(i, k) * b(j, k);
                           });
}

Matrix matmul_tn_canonical(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose of " + a.shape_str() + " by " +
                     b.shape_str());
  }
  return canonical_product(a.cols(), b.cols(), a.rows(),
                           [&](std::size_t i, std::size_t j, std::size_t k) {
                             return a(k, i) * b(k, j);
                           });
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  return zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

Matrix add(const Matrix& a, const Matrix& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Matrix sub(const Matrix& a, const Matrix& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Matrix scale(const Matrix& a, double c) {
  return map(a, [c](double x) { return x * c; });
}

Matrix neg(const Matrix& a) {
  return map(a, [](double x) { return -x; });
}

Matrix add_row_vector(const Matrix& m, const Vector& v) {
  if (v.size() != m.cols()) {
    throw ShapeError("add_row_vector: vector length " + std::to_string(v.size()) +
                     " vs matrix " + m.shape_str());
  }
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) += v[c];
  check_finite(out.data(), "add_row_vector");
  return out;
}

Vector column_sums(const Matrix& m) {
  Vector out(m.cols(), 0.0);
  std::vector<double> buf(m.rows());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    for (std::size_t r = 0; r < m.rows(); ++r) buf[r] = m(r, c);
    out[c] = canonical_sum(buf);
  }
  return out;
}

Vector row_means(const Matrix& m) {
  Vector out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    for (double v : m.row(r)) acc += v;
    out[r] = acc / static_cast<double>(m.cols());
  }
  return out;
}

Matrix relu(const Matrix& x) {
  return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Matrix relu_grad(const Matrix& x) {
  return map(x, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Matrix tanh_act(const Matrix& x) {
  return map(x, [](double v) { return std::tanh(v); });
}

Matrix tanh_grad(const Matrix& x) {
  return map(x, [](double v) {
    const double t = std::tanh(v);
    return 1.0 - t * t;
  });
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto dst = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    std::vector<double> terms(in.size());
    for (std::size_t c = 0; c < in.size(); ++c) terms[c] = dst[c] = std::exp(in[c] - mx);
    const double sum = canonical_sum(terms);
    for (double& v : dst) v /= sum;
  }
  check_finite(out.data(), "softmax_rows");
  return out;
}

Matrix softmax_rows_backward(const Matrix& s, const Matrix& upstream) {
  require_same_shape(s, upstream, "softmax_rows_backward");
  Matrix out(s.rows(), s.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto sr = s.row(r);
    auto gr = upstream.row(r);
    std::vector<double> s_terms(sr.begin(), sr.end()), g_terms(sr.size());
    for (std::size_t c = 0; c < sr.size(); ++c) g_terms[c] = gr[c] * sr[c];
    const double row_sum = canonical_sum(s_terms);
    const double dot = canonical_sum(g_terms);
    if (std::abs(row_sum - 1.0) > 1e-6) {
      throw ContractError("softmax_rows_backward: row " + std::to_string(r) +
                          " of s sums to " + std::to_string(row_sum) + ", expected 1");
    }
    auto dst = out.row(r);
    for (std::size_t c = 0; c < sr.size(); ++c) dst[c] = sr[c] * (gr[c] - dot);
  }
  check_finite(out.data(), "softmax_rows_backward");
  return out;
}

Matrix layernorm_rows(const Matrix& x, const Vector& gamma, const Vector& beta, double eps,
                      LayerNormCache* cache) {
  if (gamma.size() != x.cols() || beta.size() != x.cols()) {
    throw ShapeError("layernorm_rows: gamma/beta lengths " + std::to_string(gamma.size()) +
                     "/" + std::to_string(beta.size()) + " vs input " + x.shape_str());
  }
  if (!(eps > 0.0)) throw DomainError("layernorm_rows: eps must be positive");

  const auto n = static_cast<double>(x.cols());
  Matrix x_hat(x.rows(), x.cols());
  Vector rstd(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    std::vector<double> terms(in.begin(), in.end());
    const double mean = canonical_sum(terms) / n;
    for (std::size_t c = 0; c < in.size(); ++c) terms[c] = (in[c] - mean) * (in[c] - mean);
    const double var = canonical_sum(terms) / n;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    auto dst = x_hat.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) dst[c] = (in[c] - mean) * rstd[r];
  }

  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x_hat(r, c) * gamma[c] + beta[c];
  check_finite(out.data(), "layernorm_rows");

  if (cache != nullptr) {
    cache->x_hat = std::move(x_hat);
    cache->rstd = std::move(rstd);
  }
  return out;
}

LayerNormGrads layernorm_rows_backward(const LayerNormCache& cache, const Vector& gamma,
                                       const Matrix& upstream) {
  const Matrix& x_hat = cache.x_hat;
  require_same_shape(x_hat, upstream, "layernorm_rows_backward");
  if (gamma.size() != x_hat.cols()) throw ShapeError("layernorm_rows_backward: gamma length");

  const auto n = static_cast<double>(x_hat.cols());
  LayerNormGrads g{Matrix(x_hat.rows(), x_hat.cols()), Vector(x_hat.cols(), 0.0),
                   Vector(x_hat.cols(), 0.0)};
  for (std::size_t r = 0; r < x_hat.rows(); ++r) {
    std::vector<double> dxh_terms(x_hat.cols()), dxh_xh_terms(x_hat.cols());
    for (std::size_t c = 0; c < x_hat.cols(); ++c) {
      dxh_terms[c] = upstream(r, c) * gamma[c];
      dxh_xh_terms[c] = dxh_terms[c] * x_hat(r, c);
    }
    const double mean_dxh = canonical_sum(dxh_terms) / n;
    const double mean_dxh_xh = canonical_sum(dxh_xh_terms) / n;
    for (std::size_t c = 0; c < x_hat.cols(); ++c) {
      const double dxh = upstream(r, c) * gamma[c];
      g.d_x(r, c) = cache.rstd[r] * (dxh - mean_dxh - x_hat(r, c) * mean_dxh_xh);
    }
  }
  g.d_gamma = column_sums(hadamard(upstream, x_hat));
  g.d_beta = column_sums(upstream);
  check_finite(g.d_x.data(), "layernorm_rows_backward");
  return g;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double max_abs_diff(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: vector length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double trace(const Matrix& a) {
  if (!a.square()) throw ShapeError("trace: matrix " + a.shape_str() + " is not square");
  double t = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) t += a(i, i);
  return t;
}

}  // namespace pesl
