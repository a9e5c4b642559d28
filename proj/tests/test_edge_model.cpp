#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "pesl/edge_model.hpp"
#include "pesl/errors.hpp"
#include "pesl/permutation.hpp"
#include "test_util.hpp"

using namespace pesl;
using pesl::testing::random_matrix;

namespace {

Image random_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  Image im(c, h, w);
  for (auto& v : im.pixels) v = rng.uniform01();
  return im;
}

}  // namespace

TEST_CASE("1x1 patches on a 2x2 image") {
  PatchGeometry g{1, 2, 2, 1, 1};
  CHECK(g.patches() == 4);
  CHECK(g.patch_dim() == 1);
  Rng rng(1);
  EdgeWeights w = init_edge(g, 3, 2, false, rng);
  Image im(1, 2, 2);
  im.pixels = {0.1, 0.2, 0.3, 0.4};
  Matrix z = patch_embed(w, g, im);
  REQUIRE(z.rows() == 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(z(r, j) == im.pixels[r] * w.w_embed(0, j) + w.b_embed[j]);
}

TEST_CASE("zero image with zero bias embeds to zero") {
  PatchGeometry g;
  Rng rng(2);
  EdgeWeights w = init_edge(g, 5, 3, false, rng);
  w.b_embed.assign(5, 0.0);
  CHECK(max_abs(patch_embed(w, g, Image(1, 8, 8))) == 0.0);
}

TEST_CASE("8x8 image with 4x4 patches against an index oracle") {
  PatchGeometry g{2, 8, 8, 4, 4};
  REQUIRE(g.patches() == 4);
  REQUIRE(g.patch_dim() == 32);
  Rng rng(3);
  Image im = random_image(2, 8, 8, rng);
  Matrix patches = patchify(g, im);
  for (std::size_t py = 0; py < 2; ++py)
    for (std::size_t px = 0; px < 2; ++px)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < 4; ++y)
          for (std::size_t x = 0; x < 4; ++x)
            CHECK(patches(py * 2 + px, c * 16 + y * 4 + x) == im.at(c, py * 4 + y, px * 4 + x));
  CHECK(unpatchify(g, patches) == im);

  EdgeWeights w = init_edge(g, 6, 3, false, rng);
  Matrix z = patch_embed(w, g, im);
  for (std::size_t j = 0; j < 6; ++j) {
    double s = 0;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) s += im.at(c, y, x) * w.w_embed(c * 16 + y * 4 + x, j);
    CHECK(z(0, j) == doctest::Approx(s + w.b_embed[j]).epsilon(1e-14));
  }
}

TEST_CASE("geometry must divide evenly") {
  PatchGeometry g{1, 8, 8, 3, 4};
  CHECK_THROWS_AS(g.validate(), ShapeError);
}

TEST_CASE("cross-entropy") {
  for (std::size_t n : {2u, 4u, 10u}) {
    LossResult r = cross_entropy(Vector(n, 0.7), 1);
    CHECK(r.loss == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-14));
  }
  LossResult s = cross_entropy(Vector{100, 0, 0}, 0);
  CHECK(s.loss < 1e-40);
  CHECK_THROWS_AS(cross_entropy(Vector{0, 0}, 2), DomainError);

  LossResult hard = cross_entropy(Vector{0.3, -1.2, 2.0}, 2);
  LossResult soft = cross_entropy(Vector{0.3, -1.2, 2.0}, Vector{0, 0, 1});
  CHECK(hard.loss == doctest::Approx(soft.loss).epsilon(1e-15));
}

TEST_CASE("edge gradients against central differences") {
  PatchGeometry g{1, 4, 4, 2, 2};
  Rng rng(4);
  EdgeWeights w = init_edge(g, 3, 3, true, rng);
  Image im = random_image(1, 4, 4, rng);
  Matrix patches = patchify(g, im);
  Matrix mix = random_matrix(3, 3, rng);  // stands in for the cloud
  const std::size_t label = 2;
  auto loss = [&] {
    Matrix a = matmul(embed_patches(w, patches), mix);
    return cross_entropy(head_forward(w, a), label).loss;
  };
  Matrix z = embed_patches(w, patches);
  Matrix a = matmul(z, mix);
  LossResult lr = cross_entropy(head_forward(w, a), label);
  HeadBackward hb = head_backward(w, a, lr.d_logits);
  EmbedBackward eb = embed_backward(w, patches, matmul_nt(hb.d_a_final, mix));

  const double h = 1e-6;
  auto check = [&](std::vector<double>& param, const std::vector<double>& grad) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      double keep = param[i];
      param[i] = keep + h;
      double lp = loss();
      param[i] = keep - h;
      double lm = loss();
      param[i] = keep;
      CHECK(std::abs((lp - lm) / (2 * h) - grad[i]) < 1e-8);
    }
  };
  check(w.w_head.data(), hb.d_w_head.data());
  check(w.b_head, hb.d_b_head);
  check(w.w_embed.data(), eb.d_w_embed.data());
  check(w.b_embed, eb.d_b_embed);
  check(w.pos_embed->data(), eb.d_pos_embed->data());
}

TEST_CASE("mean pooling ignores row order") {
  PatchGeometry g;
  Rng rng(5);
  EdgeWeights w = init_edge(g, 4, 3, false, rng);
  for (int t = 0; t < 20; ++t) {
    Matrix a = random_matrix(4, 4, rng);
    Permutation p = sample_permutation(4, rng);
    CHECK(max_abs_diff(head_forward(w, a), head_forward(w, apply_rows(p, a))) < 1e-15);
  }
}

TEST_CASE("edge weight file round trip") {
  PatchGeometry g;
  Rng rng(6);
  EdgeWeights w = init_edge(g, 4, 3, true, rng);
  CHECK(decode_edge(encode_edge(w)) == w);
  auto path = std::filesystem::temp_directory_path() / "pesl_test_edge.bin";
  save_edge(w, path);
  CHECK(load_edge(path) == w);
  std::filesystem::remove(path);
}
