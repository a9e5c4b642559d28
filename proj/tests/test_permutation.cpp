#include <gmp.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "pesl/errors.hpp"
#include "pesl/permutation.hpp"
#include "test_util.hpp"

using namespace pesl;
using pesl::testing::naive_matmul;
using pesl::testing::random_matrix;

namespace {

// Exact log2(p! * d!) from GMP factorials, reduced to a double only at the end.
double exact_log2_perm_space(unsigned long p, unsigned long d) {
  mpz_t a, b;
  mpz_inits(a, b, nullptr);
  mpz_fac_ui(a, p);
  mpz_fac_ui(b, d);
  mpz_mul(a, a, b);
  long exp = 0;
  double mant = mpz_get_d_2exp(&exp, a);
  mpz_clears(a, b, nullptr);
  return std::log2(mant) + static_cast<double>(exp);
}

// Characteristic polynomial coefficients by Faddeev-LeVerrier.
std::vector<double> char_poly(const Matrix& a) {
  const std::size_t n = a.rows();
  std::vector<double> c(n + 1, 0.0);
  c[n] = 1.0;
  Matrix m(n, n, 0.0);
  for (std::size_t k = 1; k <= n; ++k) {
    Matrix am = matmul(a, m);
    for (std::size_t i = 0; i < n; ++i) am(i, i) += c[n - k + 1];
    m = am;
    c[n - k] = -trace(matmul(a, m)) / static_cast<double>(k);
  }
  return c;
}

}  // namespace

TEST_CASE("row shuffle worked example") {
  Matrix z = Matrix::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10, 11, 12}});
  // P_R has ones at (0,1), (1,2), (2,0).
  Permutation p({1, 2, 0});
  Matrix expect = Matrix::from_rows({{5, 6, 7, 8}, {9, 10, 11, 12}, {1, 2, 3, 4}});
  CHECK(apply_rows(p, z) == expect);
  CHECK(matmul(p.to_matrix(), z) == expect);
  CHECK(p.to_matrix() == Matrix::from_rows({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}}));
}

TEST_CASE("constructor validates bijection") {
  CHECK_THROWS_AS(Permutation({0, 0}), DomainError);
  CHECK_THROWS_AS(Permutation({0, 2}), DomainError);
  CHECK_NOTHROW(Permutation({1, 0}));
}

TEST_CASE("sampling") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_permutation(0, rng), DomainError);
  CHECK(sample_permutation(1, rng).is_identity());

  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(sample_permutation(3, a) == sample_permutation(3, b));
}

TEST_CASE("sampling is uniform at n = 3") {
  Rng rng(2024);
  const int draws = 60000;
  std::map<std::vector<std::size_t>, int> counts;
  for (int i = 0; i < draws; ++i) ++counts[sample_permutation(3, rng).indices()];
  REQUIRE(counts.size() == 6);
  const double expected = draws / 6.0;
  double chi2 = 0;
  for (const auto& [perm, c] : counts) {
    chi2 += (c - expected) * (c - expected) / expected;
    CHECK(std::abs(c / static_cast<double>(draws) - 1.0 / 6) < 0.01);
  }
  // Chi-square critical value for 5 degrees of freedom at p = 0.001.
  CHECK(chi2 < 20.515);
}

TEST_CASE("gather helpers agree with explicit permutation matrices") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::size_t r = 1 + rng.below(7), c = 1 + rng.below(7);
    Matrix z = random_matrix(r, c, rng);
    Permutation pr = sample_permutation(r, rng);
    Permutation pc = sample_permutation(c, rng);
    Matrix mr = pr.to_matrix(), mc = pc.to_matrix();
    CHECK(apply_rows(pr, z) == naive_matmul(mr, z));
    CHECK(apply_rows_inv(pr, z) == naive_matmul(mr.transpose(), z));
    CHECK(apply_cols(z, pc) == naive_matmul(z, mc));
    CHECK(apply_cols_inv(z, pc) == naive_matmul(z, mc.transpose()));

    CHECK(apply_rows(pr, apply_rows(pr.inverse(), z)) == z);
    CHECK(apply_rows_inv(pr, apply_rows(pr, z)) == z);
    CHECK(apply_cols(apply_cols_inv(z, pc), pc) == z);
  }
  Matrix z = random_matrix(3, 4, rng);
  CHECK(apply_rows(Permutation::identity(3), z) == z);
  CHECK(apply_cols_inv(z, Permutation::identity(4)) == z);
  CHECK_THROWS_AS(apply_rows(Permutation::identity(2), z), ShapeError);
  CHECK_THROWS_AS(apply_cols(z, Permutation::identity(3)), ShapeError);
}

TEST_CASE("conjugation") {
  Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    std::size_t n = 1 + rng.below(5);
    Matrix w = random_matrix(n, n, rng);
    Permutation p = sample_permutation(n, rng);
    Matrix cw = conjugate_weight(w, p);
    CHECK(cw == naive_matmul(naive_matmul(p.to_matrix(), w), p.to_matrix().transpose()));
    CHECK(conjugate_weight(cw, p.inverse()) == w);
    CHECK(std::abs(trace(cw) - trace(w)) < 1e-12);
    std::vector<double> a = char_poly(w), b = char_poly(cw);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) < 1e-9);
  }
  Matrix w = random_matrix(3, 3, rng);
  CHECK(conjugate_weight(w, Permutation::identity(3)) == w);
  CHECK_THROWS_AS(conjugate_weight(Matrix(2, 3), Permutation::identity(2)), ShapeError);
}

TEST_CASE("row vector permutation") {
  Rng rng(5);
  Vector v = pesl::testing::random_vector(6, rng);
  Permutation p = sample_permutation(6, rng);
  CHECK(permute_rowvector(v, Permutation::identity(6)) == v);
  CHECK(permute_rowvector(permute_rowvector(v, p), p.inverse()) == v);
  Matrix as_matrix = naive_matmul(Matrix::row_vector(v), p.to_matrix().transpose());
  CHECK(Matrix::row_vector(permute_rowvector(v, p)) == as_matrix);
  CHECK_THROWS_AS(permute_rowvector(v, Permutation::identity(5)), ShapeError);
}

TEST_CASE("to_matrix of inverse is the transpose, up to n = 64") {
  Rng rng(6);
  for (std::size_t n : {1u, 2u, 7u, 33u, 64u}) {
    Permutation p = sample_permutation(n, rng);
    CHECK(matmul(p.to_matrix(), p.inverse().to_matrix()) == Matrix::identity(n));
  }
}

TEST_CASE("permutation space against big-integer factorials") {
  CHECK(log2_perm_space(3, 2) == doctest::Approx(std::log2(12.0)).epsilon(1e-14));
  CHECK(log2_perm_space(1, 1) == 0.0);
  CHECK(log2_perm_space(4, 8) == doctest::Approx(std::log2(24.0 * 40320.0)).epsilon(1e-14));
  for (unsigned long p = 1; p <= 20; ++p)
    for (unsigned long d = 1; d <= 20; ++d) {
      double exact = exact_log2_perm_space(p, d);
      CHECK(std::abs(log2_perm_space(p, d) - exact) <= 1e-10 * std::max(1.0, exact));
    }
  double big = exact_log2_perm_space(197, 768);
  CHECK(std::abs(log2_perm_space(197, 768) - big) <= 1e-10 * big);
}

TEST_CASE("mixup space factor") {
  CHECK(mixup_space_factor(1, 1) == 1);
  CHECK(mixup_space_factor(8, 4) == 128);
  CHECK(mixup_space_factor(256, 197) == 256ULL * 197 * 197);
}

TEST_CASE("shuffle key") {
  ShuffleKey k = ShuffleKey::generate(5, 7, 99);
  CHECK(k.p == 5);
  CHECK(k.d == 7);
  CHECK(k.p_col.size() == 7);
  CHECK(k.row_permutation(2, 3) == k.row_permutation(2, 3));
  CHECK(ShuffleKey::generate(5, 7, 99).p_col == k.p_col);

  auto path = std::filesystem::temp_directory_path() / "pesl_test_key.json";
  save_key(k, path);
  ShuffleKey back = load_key(path);
  CHECK(back.p_col == k.p_col);
  CHECK(back.row_seed == k.row_seed);
  CHECK(back.p == 5);
  CHECK(back.d == 7);
  std::filesystem::remove(path);

  ShuffleKey bad = k;
  bad.d = 6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(load_key(path), IoError);
}
