#include <cmath>
#include <limits>

#include "doctest.h"
#include "pesl/errors.hpp"
#include "pesl/permutation.hpp"
#include "pesl/tensor.hpp"
#include "test_util.hpp"

using namespace pesl;
using pesl::testing::naive_matmul;
using pesl::testing::random_matrix;

TEST_CASE("matmul small cases") {
  Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(a, Matrix::identity(2)) == a);
  CHECK(matmul(a, Matrix::from_rows({{5, 6}, {7, 8}})) == Matrix::from_rows({{19, 22}, {43, 50}}));
}

TEST_CASE("matmul matches a triple loop to the last bit") {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    Matrix a = random_matrix(7, 5, rng);
    Matrix b = random_matrix(5, 3, rng);
    CHECK(matmul(a, b) == naive_matmul(a, b));
    CHECK(matmul_nt(a, b.transpose()) == naive_matmul(a, b));
    CHECK(matmul_tn(a.transpose(), b) == naive_matmul(a, b));
  }
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Matrix(2, 2), Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(hadamard(Matrix(1, 2), Matrix(2, 1)), ShapeError);
}

TEST_CASE("canonical sums ignore the order of their terms") {
  std::vector<double> terms = {1e16, 1.0, -1e16, 1.0};
  CHECK(canonical_sum(terms) == 0.0);  // -1e16 + 1 + 1 + 1e16, ascending
  std::vector<double> none;
  CHECK(canonical_sum(none) == 0.0);

  Rng rng(12);
  for (int t = 0; t < 30; ++t) {
    Matrix a = random_matrix(6, 5, rng);
    Matrix b = random_matrix(5, 4, rng);
    Matrix c = random_matrix(6, 4, rng);
    CHECK(max_abs_diff(matmul_canonical(a, b), matmul(a, b)) < 1e-14);
    CHECK(matmul_nt_canonical(a, b.transpose()) == matmul_canonical(a, b));
    CHECK(matmul_tn_canonical(a.transpose(), b) == matmul_canonical(a, b));

    // Permuting the shared dimension of both operands changes no bit.
    Permutation k = sample_permutation(5, rng);
    CHECK(matmul_canonical(apply_cols(a, k), apply_rows(k.inverse(), b)) == matmul_canonical(a, b));
    Permutation r = sample_permutation(6, rng);
    CHECK(matmul_tn_canonical(apply_rows(r, a), apply_rows(r, c)) == matmul_tn_canonical(a, c));
    CHECK(column_sums(apply_rows(r, c)) == column_sums(c));
  }
  CHECK_THROWS_AS(matmul_canonical(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(matmul_nt_canonical(Matrix(2, 3), Matrix(2, 2)), ShapeError);
  CHECK_THROWS_AS(matmul_tn_canonical(Matrix(2, 3), Matrix(3, 3)), ShapeError);
}

TEST_CASE("elementwise identities") {
  Rng rng(2);
  Matrix a = random_matrix(4, 3, rng);
  CHECK(hadamard(a, Matrix(4, 3, 1.0)) == a);
  CHECK(add(a, neg(a)) == Matrix(4, 3, 0.0));
  CHECK(sub(a, a) == Matrix(4, 3, 0.0));

  Matrix b = random_matrix(4, 3, rng);
  Permutation p1 = sample_permutation(4, rng);
  Permutation p2 = sample_permutation(3, rng);
  Matrix lhs = hadamard(apply_cols(apply_rows(p1, a), p2), apply_cols(apply_rows(p1, b), p2));
  Matrix rhs = apply_cols(apply_rows(p1, hadamard(a, b)), p2);
  CHECK(lhs == rhs);
}

TEST_CASE("non-finite values are rejected") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Matrix(1, 2, std::vector<double>{1.0, nan}), DomainError);
  CHECK_THROWS_AS(Matrix(1, 1, std::numeric_limits<double>::infinity()), DomainError);
  CHECK_THROWS_AS(scale(Matrix(1, 1, 1e300), 1e300), DomainError);
}

TEST_CASE("relu and its gradient") {
  Matrix x = Matrix::from_rows({{-1, 2}});
  CHECK(relu(x) == Matrix::from_rows({{0, 2}}));
  CHECK(relu_grad(x) == Matrix::from_rows({{0, 1}}));
  CHECK(relu_grad(Matrix::from_rows({{0}})) == Matrix::from_rows({{0}}));

  // Central differences away from the kink.
  const double h = 1e-5;
  for (double v : {-0.7, -0.1, 0.3, 1.9}) {
    double fd = (relu(Matrix(1, 1, v + h))(0, 0) - relu(Matrix(1, 1, v - h))(0, 0)) / (2 * h);
    double g = relu_grad(Matrix(1, 1, v))(0, 0);
    CHECK(std::abs(fd - g) <= 1e-6 * std::max(1.0, std::abs(g)));
  }
}

TEST_CASE("tanh gradient against central differences") {
  const double h = 1e-6;
  for (double v : {-2.0, -0.3, 0.0, 0.8}) {
    double fd =
        (tanh_act(Matrix(1, 1, v + h))(0, 0) - tanh_act(Matrix(1, 1, v - h))(0, 0)) / (2 * h);
    CHECK(tanh_grad(Matrix(1, 1, v))(0, 0) == doctest::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("softmax closed forms") {
  Matrix s = softmax_rows(Matrix::from_rows({{0, 0, 0}}));
  for (std::size_t j = 0; j < 3; ++j) CHECK(s(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Matrix t = softmax_rows(Matrix::from_rows({{std::log(2.0), 0}}));
  CHECK(t(0, 0) == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(t(0, 1) == doctest::Approx(1.0 / 3).epsilon(1e-15));

  // Large logits must not overflow.
  Matrix u = softmax_rows(Matrix::from_rows({{1000, 1000}}));
  CHECK(u(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one and commute with permutations") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    Matrix x = random_matrix(4, 4, rng, -5, 5);
    Matrix s = softmax_rows(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double sum = 0;
      for (double v : s.row(i)) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    Permutation p1 = sample_permutation(4, rng);
    Permutation p2 = sample_permutation(4, rng);
    Matrix lhs = softmax_rows(apply_cols(apply_rows(p1, x), p2));
    Matrix rhs = apply_cols(apply_rows(p1, s), p2);
    CHECK(lhs == rhs);
  }
}

TEST_CASE("softmax backward") {
  Rng rng(8);
  Matrix s = softmax_rows(random_matrix(3, 5, rng));
  Matrix up(3, 5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) up(i, j) = static_cast<double>(i) - 2.5;
  CHECK(max_abs(softmax_rows_backward(s, up)) < 1e-15);

  Matrix sat = Matrix::from_rows({{1, 0}});
  CHECK(softmax_rows_backward(sat, Matrix::from_rows({{0.3, -4}})) == Matrix(1, 2, 0.0));

  CHECK_THROWS_AS(softmax_rows_backward(Matrix::from_rows({{0.5, 0.4}}), Matrix(1, 2, 1.0)),
                  ContractError);
  CHECK_THROWS_AS(softmax_rows_backward(sat, Matrix(2, 2, 1.0)), ShapeError);
}

TEST_CASE("softmax backward against central differences") {
  Rng rng(9);
  const double h = 1e-6;
  Matrix x = random_matrix(3, 4, rng);
  Matrix g = random_matrix(3, 4, rng);
  auto loss = [&](const Matrix& m) {
    Matrix s = softmax_rows(m);
    double l = 0;
    for (std::size_t i = 0; i < s.size(); ++i) l += s.data()[i] * g.data()[i];
    return l;
  };
  Matrix an = softmax_rows_backward(softmax_rows(x), g);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    double fd = (loss(xp) - loss(xm)) / (2 * h);
    CHECK(std::abs(fd - an.data()[i]) < 1e-8);
  }
}

TEST_CASE("layernorm") {
  Vector ones2{1, 1}, zeros2{0, 0};
  Matrix c = layernorm_rows(Matrix::from_rows({{3, 3}}), ones2, zeros2, 1e-5);
  CHECK(max_abs(c) == 0.0);

  Matrix y = layernorm_rows(Matrix::from_rows({{1, -1}}), ones2, zeros2, 1e-12);
  CHECK(y(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(y(0, 1) == doctest::Approx(-1.0).epsilon(1e-10));

  CHECK_THROWS_AS(layernorm_rows(Matrix(2, 3), ones2, zeros2, 1e-5), ShapeError);
}

TEST_CASE("layernorm backward against central differences") {
  Rng rng(10);
  const double h = 1e-6;
  Matrix x = random_matrix(3, 5, rng);
  Vector gamma = pesl::testing::random_vector(5, rng, 0.5, 1.5);
  Vector beta = pesl::testing::random_vector(5, rng);
  Matrix g = random_matrix(3, 5, rng);
  auto loss = [&](const Matrix& m, const Vector& ga, const Vector& be) {
    Matrix y = layernorm_rows(m, ga, be, 1e-5);
    double l = 0;
    for (std::size_t i = 0; i < y.size(); ++i) l += y.data()[i] * g.data()[i];
    return l;
  };
  LayerNormCache cache;
  layernorm_rows(x, gamma, beta, 1e-5, &cache);
  LayerNormGrads an = layernorm_rows_backward(cache, gamma, g);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    double fd = (loss(xp, gamma, beta) - loss(xm, gamma, beta)) / (2 * h);
    CHECK(std::abs(fd - an.d_x.data()[i]) < 1e-7);
  }
  for (std::size_t j = 0; j < 5; ++j) {
    Vector gp = gamma, gm = gamma;
    gp[j] += h;
    gm[j] -= h;
    CHECK(std::abs((loss(x, gp, beta) - loss(x, gm, beta)) / (2 * h) - an.d_gamma[j]) < 1e-7);
    Vector bp = beta, bm = beta;
    bp[j] += h;
    bm[j] -= h;
    CHECK(std::abs((loss(x, gamma, bp) - loss(x, gamma, bm)) / (2 * h) - an.d_beta[j]) < 1e-7);
  }
}

TEST_CASE("reductions") {
  Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(column_sums(m) == Vector{4, 6});
  CHECK(row_means(m) == Vector{1.5, 3.5});
  CHECK(trace(m) == 5.0);
  CHECK(add_row_vector(m, {1, -1}) == Matrix::from_rows({{2, 1}, {4, 3}}));
  CHECK_THROWS_AS(add_row_vector(m, {1}), ShapeError);
}
