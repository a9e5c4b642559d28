#include "pesl/permutation.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "pesl/errors.hpp"

namespace pesl {

namespace {

void require_size(std::size_t expected, std::size_t got, const char* op, const char* what) {
  if (expected != got) {
    throw ShapeError(std::string(op) + ": permutation of size " + std::to_string(expected) +
                     " applied to " + what + " of size " + std::to_string(got));
  }
}

}  // namespace

Permutation::Permutation(std::vector<std::size_t> indices) : indices_(std::move(indices)) {
  std::vector<bool> seen(indices_.size(), false);
  for (std::size_t v : indices_) {
    if (v >= indices_.size() || seen[v]) {
      throw DomainError("Permutation: indices are not a bijection on 0.." +
                        std::to_string(indices_.size()));
    }
    seen[v] = true;
  }
}

Permutation Permutation::identity(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return Permutation(std::move(idx));
}

Permutation Permutation::inverse() const {
  std::vector<std::size_t> inv(indices_.size());
  for (std::size_t i = 0; i < indices_.size(); ++i) inv[indices_[i]] = i;
  return Permutation(std::move(inv));
}

bool Permutation::is_identity() const {
  for (std::size_t i = 0; i < indices_.size(); ++i)
    if (indices_[i] != i) return false;
  return true;
}

Matrix Permutation::to_matrix() const {
  Matrix m(size(), size());
  for (std::size_t i = 0; i < size(); ++i) m(i, indices_[i]) = 1.0;
  return m;
}

Permutation sample_permutation(std::size_t n, Rng& rng) {
  if (n == 0) throw DomainError("sample_permutation: n must be at least 1");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(idx[i], idx[j]);
  }
  return Permutation(std::move(idx));
}

Matrix apply_rows(const Permutation& p, const Matrix& z) {
  require_size(p.size(), z.rows(), "apply_rows", "rows");
  Matrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto src = z.row(p[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix apply_rows_inv(const Permutation& p, const Matrix& z) {
  require_size(p.size(), z.rows(), "apply_rows_inv", "rows");
  Matrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto src = z.row(i);
    std::copy(src.begin(), src.end(), out.row(p[i]).begin());
  }
  return out;
}

Matrix apply_cols_inv(const Matrix& z, const Permutation& p) {
  require_size(p.size(), z.cols(), "apply_cols_inv", "columns");
  Matrix out(z.rows(), z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t j = 0; j < z.cols(); ++j) out(r, j) = z(r, p[j]);
  return out;
}

Matrix apply_cols(const Matrix& z, const Permutation& p) {
  require_size(p.size(), z.cols(), "apply_cols", "columns");
  Matrix out(z.rows(), z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t j = 0; j < z.cols(); ++j) out(r, p[j]) = z(r, j);
  return out;
}

Matrix conjugate_weight(const Matrix& w, const Permutation& p) {
  if (!w.square()) {
    throw ShapeError("conjugate_weight: weight " + w.shape_str() + " is not square");
  }
  require_size(p.size(), w.rows(), "conjugate_weight", "weight");
  Matrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) = w(p[i], p[j]);
  return out;
}

Vector permute_rowvector(const Vector& v, const Permutation& p) {
  require_size(p.size(), v.size(), "permute_rowvector", "vector");
  Vector out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = v[p[j]];
  return out;
}

double log2_perm_space(std::size_t p, std::size_t d) {
  if (p == 0 || d == 0) throw DomainError("log2_perm_space: p and d must be at least 1");
  const double ln2 = std::log(2.0);
  return (std::lgamma(static_cast<double>(p) + 1.0) +
          std::lgamma(static_cast<double>(d) + 1.0)) / ln2;
}

std::uint64_t mixup_space_factor(std::uint64_t batch, std::uint64_t p) {
  if (batch == 0 || p == 0) throw DomainError("mixup_space_factor: batch and p must be >= 1");
  return batch * p * p;
}

void ShuffleKey::validate() const {
  if (p == 0 || d == 0) throw ConfigError("key: p and d must be at least 1");
  if (p_col.size() != d) {
    throw ConfigError("key: p_col has size " + std::to_string(p_col.size()) + " but d = " +
                      std::to_string(d));
  }
}

Permutation ShuffleKey::row_permutation(std::uint64_t epoch, std::uint64_t index) const {
  Rng rng(derive_seed(row_seed, "row_perm", {epoch, index}));
  return sample_permutation(p, rng);
}

ShuffleKey ShuffleKey::generate(std::size_t p, std::size_t d, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "key"));
  ShuffleKey key;
  key.p = p;
  key.d = d;
  key.p_col = sample_permutation(d, rng);
  key.row_seed = rng.next_u64();
  key.validate();
  return key;
}

void save_key(const ShuffleKey& key, const std::filesystem::path& path) {
  nlohmann::json j;
  j["version"] = kKeyFileVersion;
  j["p"] = key.p;
  j["d"] = key.d;
  j["p_col"] = key.p_col.indices();
  j["row_seed"] = key.row_seed;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write key file " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing key file " + path.string());
}

ShuffleKey load_key(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open key file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("version").get<int>() != kKeyFileVersion) {
      throw ConfigError("key file " + path.string() + ": unsupported version");
    }
    ShuffleKey key;
    key.p = j.at("p").get<std::size_t>();
    key.d = j.at("d").get<std::size_t>();
    key.p_col = Permutation(j.at("p_col").get<std::vector<std::size_t>>());
    key.row_seed = j.at("row_seed").get<std::uint64_t>();
    key.validate();
    return key;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("key file " + path.string() + ": " + e.what());
  } catch (const DomainError& e) {
    throw ConfigError("key file " + path.string() + ": " + e.what());
  }
}

}  // namespace pesl
