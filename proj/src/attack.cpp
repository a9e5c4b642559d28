#include "pesl/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pesl/data.hpp"
#include "pesl/errors.hpp"
#include "pesl/shuffle.hpp"

namespace pesl {

DecoderWeights init_decoder(std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                            Rng& rng) {
  if (in_dim == 0 || hidden == 0 || out_dim == 0) {
    throw ShapeError("decoder: dimensions must be positive");
  }
  DecoderWeights g{Matrix(in_dim, hidden), Vector(hidden, 0.0), Matrix(hidden, out_dim),
                   Vector(out_dim, 0.0)};
  const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (double& v : g.w1.data()) v = rng.uniform(-s1, s1);
  for (double& v : g.w2.data()) v = rng.uniform(-s2, s2);
  return g;
}

namespace {

struct DecoderPass {
  Vector pre;  // hidden pre-activation
  Vector h;
  Vector out;
};

DecoderPass decoder_pass(const DecoderWeights& g, const Vector& x) {
  if (x.size() != g.in_dim()) {
    throw ShapeError("decoder: input has " + std::to_string(x.size()) + " entries, expected " +
                     std::to_string(g.in_dim()));
  }
  const std::size_t hidden = g.w1.cols();
  DecoderPass p{Vector(g.b1), Vector(hidden), Vector(g.b2)};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    for (std::size_t j = 0; j < hidden; ++j) p.pre[j] += xi * g.w1(i, j);
  }
  for (std::size_t j = 0; j < hidden; ++j) p.h[j] = p.pre[j] > 0.0 ? p.pre[j] : 0.0;
  for (std::size_t j = 0; j < hidden; ++j) {
    const double hj = p.h[j];
    if (hj == 0.0) continue;
    for (std::size_t k = 0; k < p.out.size(); ++k) p.out[k] += hj * g.w2(j, k);
  }
  return p;
}

}  // namespace

Vector decode_features(const DecoderWeights& g, const Vector& input) {
  return decoder_pass(g, input).out;
}

Vector flatten_observations(std::span<const Matrix> observations) {
  Vector out;
  for (const Matrix& m : observations) out.insert(out.end(), m.data().begin(), m.data().end());
  return out;
}

DecoderWeights train_blackbox(DecoderWeights g, std::span<const AuxExample> aux,
                              std::size_t epochs, double lr, Rng& rng) {
  if (aux.empty()) throw DomainError("train_blackbox: auxiliary set is empty");
  if (!(lr > 0.0)) throw DomainError("train_blackbox: learning rate must be positive");
  std::vector<Vector> inputs;
  inputs.reserve(aux.size());
  for (const AuxExample& ex : aux) {
    inputs.push_back(flatten_observations(ex.observations));
    if (inputs.back().size() != g.in_dim()) {
      throw ShapeError("train_blackbox: observation size does not match decoder input");
    }
    if (ex.image.pixels.size() != g.out_dim()) {
      throw ShapeError("train_blackbox: image size does not match decoder output");
    }
  }

  const std::size_t hidden = g.w1.cols();
  std::vector<std::size_t> order(aux.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }
    for (std::size_t idx : order) {
      const Vector& x = inputs[idx];
      const std::vector<double>& target = aux[idx].image.pixels;
      const DecoderPass p = decoder_pass(g, x);
      const double scale = 2.0 / static_cast<double>(target.size());
      Vector d_out(target.size());
      for (std::size_t k = 0; k < target.size(); ++k) d_out[k] = scale * (p.out[k] - target[k]);

      Vector d_pre(hidden, 0.0);
      for (std::size_t j = 0; j < hidden; ++j) {
        if (p.pre[j] <= 0.0) continue;
        double acc = 0.0;
        for (std::size_t k = 0; k < d_out.size(); ++k) acc += g.w2(j, k) * d_out[k];
        d_pre[j] = acc;
      }
      for (std::size_t j = 0; j < hidden; ++j) {
        const double hj = p.h[j];
        if (hj == 0.0) continue;
        for (std::size_t k = 0; k < d_out.size(); ++k) g.w2(j, k) -= lr * hj * d_out[k];
      }
      for (std::size_t k = 0; k < d_out.size(); ++k) g.b2[k] -= lr * d_out[k];
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        for (std::size_t j = 0; j < hidden; ++j) g.w1(i, j) -= lr * xi * d_pre[j];
      }
      for (std::size_t j = 0; j < hidden; ++j) g.b1[j] -= lr * d_pre[j];
    }
  }
  return g;
}

namespace {

// Target rows for the current features: observed rows reordered so that row i
// is the one compared against feature row i.
Matrix match_rows(const Matrix& features, const Matrix& observed, Matching matching) {
  if (matching == Matching::naive) return observed;
  const std::size_t p = features.rows();
  struct Pair {
    double cost;
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  pairs.reserve(p * p);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double c = 0.0;
      for (std::size_t k = 0; k < features.cols(); ++k) {
        const double diff = features(i, k) - observed(j, k);
        c += diff * diff;
      }
      pairs.push_back({c, i, j});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& a, const Pair& b) { return a.cost < b.cost; });
  std::vector<bool> row_used(p, false), obs_used(p, false);
  std::vector<std::size_t> source(p, 0);
  for (const Pair& pr : pairs) {
    if (row_used[pr.i] || obs_used[pr.j]) continue;
    row_used[pr.i] = obs_used[pr.j] = true;
    source[pr.i] = pr.j;
  }
  return apply_rows(Permutation(source), observed);
}

double objective_of(const Matrix& features, const Matrix& target) {
  double acc = 0.0;
  for (std::size_t i = 0; i < features.data().size(); ++i) {
    const double diff = features.data()[i] - target.data()[i];
    acc += diff * diff;
  }
  return acc / static_cast<double>(features.data().size());
}

void check_observed(const EdgeWeights& edge, const PatchGeometry& geometry,
                    const Matrix& observed) {
  edge.validate(geometry);
  if (observed.rows() != geometry.patches() || observed.cols() != edge.dim()) {
    throw ShapeError("whitebox: observed feature is " + observed.shape_str() + ", F1 gives " +
                     std::to_string(geometry.patches()) + "x" + std::to_string(edge.dim()));
  }
}

}  // namespace

double whitebox_objective(const EdgeWeights& edge, const PatchGeometry& geometry,
                          const Matrix& observed, const Image& guess, Matching matching) {
  check_observed(edge, geometry, observed);
  const Matrix f = patch_embed(edge, geometry, guess);
  return objective_of(f, match_rows(f, observed, matching));
}

WhiteBoxResult whitebox_invert(const EdgeWeights& edge, const PatchGeometry& geometry,
                               const Matrix& observed, std::size_t iters, double lr,
                               Matching matching, const Image& initial_guess) {
  check_observed(edge, geometry, observed);
  if (!(lr > 0.0)) throw DomainError("whitebox: learning rate must be positive");
  WhiteBoxResult r{initial_guess, {}};
  Matrix patches = patchify(geometry, initial_guess);
  r.objective.reserve(iters + 1);
  const double k = 2.0 / static_cast<double>(observed.rows() * observed.cols());
  for (std::size_t it = 0;; ++it) {
    const Matrix f = embed_patches(edge, patches);
    const Matrix target = match_rows(f, observed, matching);
    r.objective.push_back(objective_of(f, target));
    if (it == iters) break;
    const Matrix d_f = scale(sub(f, target), k);
    const Matrix d_patches = matmul_nt(d_f, edge.w_embed);
    for (std::size_t i = 0; i < patches.data().size(); ++i) {
      patches.data()[i] = std::clamp(patches.data()[i] - lr * d_patches.data()[i], 0.0, 1.0);
    }
  }
  r.estimate = unpatchify(geometry, patches);
  return r;
}

WhiteBoxResult whitebox_invert(const EdgeWeights& edge, const PatchGeometry& geometry,
                               const Matrix& observed, std::size_t iters, double lr,
                               Matching matching) {
  return whitebox_invert(edge, geometry, observed, iters, lr, matching,
                         Image(geometry.channels, geometry.image_h, geometry.image_w, 0.5));
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("mse: inputs differ in size");
  if (a.empty()) throw ShapeError("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc / static_cast<double>(a.size());
}

double mse(const Image& a, const Image& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
    throw ShapeError("mse: images differ in shape");
  }
  return mse(std::span<const double>(a.pixels), std::span<const double>(b.pixels));
}

double psnr(const Image& a, const Image& b, double max_val) {
  if (!(max_val > 0.0)) throw DomainError("psnr: max_val must be positive");
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrInfinite;
  return 10.0 * std::log10(max_val * max_val / m);
}

Matrix observe(const EdgeWeights& edge, const PatchGeometry& geometry, const Image& image,
               ShuffleMode mode, const ShuffleKey& key, std::uint64_t epoch,
               std::uint64_t index) {
  const Matrix z = patch_embed(edge, geometry, image);
  const SamplePermutations perms =
      permutations_for(mode, key, geometry.patches(), edge.dim(), epoch, index);
  return shuffle_feature(z, perms.p_r, perms.p_c);
}

AttackReport run_attack(const ModelConfig& model, ShuffleMode mode, const AttackConfig& config,
                        std::uint64_t seed, bool run_blackbox, bool run_whitebox) {
  model.validate();
  if (config.rounds == 0) throw ConfigError("attack.rounds: must be at least 1");
  if (config.test_samples == 0) throw ConfigError("attack.test_samples: must be at least 1");
  const PatchGeometry& g = model.geometry;
  Rng edge_rng(derive_seed(seed, "edge_init"));
  const EdgeWeights edge = init_edge(g, model.d, model.n_classes, model.position_embedding,
                                     edge_rng);
  const ShuffleKey key = ShuffleKey::generate(model.p(), model.d, derive_seed(seed, "key"));

  SyntheticSpec spec;
  spec.geometry = g;
  spec.n_classes = std::min<std::size_t>(model.n_classes, 4);
  spec.n = config.aux_samples;
  spec.seed = derive_seed(seed, "attack_aux");
  const std::vector<Sample> aux_set = make_synthetic(spec);
  spec.n = config.test_samples;
  spec.seed = derive_seed(seed, "attack_private");
  const std::vector<Sample> private_set = make_synthetic(spec);

  AttackReport report;
  report.mode = mode;
  report.rounds = config.rounds;
  report.seed = seed;

  if (run_blackbox) {
    std::vector<AuxExample> aux;
    aux.reserve(aux_set.size());
    for (std::size_t i = 0; i < aux_set.size(); ++i) {
      AuxExample ex{aux_set[i].image, {}};
      for (std::size_t e = 0; e < config.rounds; ++e) {
        ex.observations.push_back(observe(edge, g, aux_set[i].image, mode, key, e, i));
      }
      aux.push_back(std::move(ex));
    }
    Rng dec_rng(derive_seed(seed, "decoder"));
    DecoderWeights dec = init_decoder(config.rounds * model.p() * model.d, config.hidden,
                                      g.channels * g.image_h * g.image_w, dec_rng);
    dec = train_blackbox(std::move(dec), aux, config.epochs, config.lr, dec_rng);

    double mse_sum = 0.0;
    for (std::size_t i = 0; i < private_set.size(); ++i) {
      // Private samples sit in rounds the attacker never trained on.
      std::vector<Matrix> obs;
      for (std::size_t e = 0; e < config.rounds; ++e) {
        obs.push_back(observe(edge, g, private_set[i].image, mode, key, config.rounds + e,
                              aux_set.size() + i));
      }
      const Vector rec = decode_features(dec, flatten_observations(obs));
      mse_sum += mse(std::span<const double>(rec), std::span<const double>(private_set[i].image.pixels));
    }
    report.blackbox_mse = mse_sum / static_cast<double>(private_set.size());
    report.blackbox_psnr =
        report.blackbox_mse == 0.0 ? kPsnrInfinite : -10.0 * std::log10(report.blackbox_mse);
  }

  if (run_whitebox) {
    double mse_sum = 0.0;
    report.objective.assign(config.whitebox_iters + 1, 0.0);
    for (std::size_t i = 0; i < private_set.size(); ++i) {
      const Matrix obs =
          observe(edge, g, private_set[i].image, mode, key, 0, aux_set.size() + i);
      const WhiteBoxResult wb =
          whitebox_invert(edge, g, obs, config.whitebox_iters, config.whitebox_lr, config.matching);
      for (std::size_t t = 0; t < wb.objective.size(); ++t) report.objective[t] += wb.objective[t];
      mse_sum += mse(wb.estimate, private_set[i].image);
    }
    const double n = static_cast<double>(private_set.size());
    for (double& v : report.objective) v /= n;
    report.whitebox_mse = mse_sum / n;
    report.whitebox_psnr =
        report.whitebox_mse == 0.0 ? kPsnrInfinite : -10.0 * std::log10(report.whitebox_mse);
  }
  return report;
}

std::string attack_report_json(const AttackReport& r) {
  auto num = [](double v) -> std::string {
    if (std::isinf(v)) return "\"inf\"";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  };
  std::string out = std::string("{\"mode\":\"") + to_string(r.mode) +
                    "\",\"e\":" + std::to_string(r.rounds) + ",\"seed\":" + std::to_string(r.seed) +
                    ",\"blackbox\":{\"mse\":" + num(r.blackbox_mse) +
                    ",\"psnr\":" + num(r.blackbox_psnr) + "},\"whitebox\":{\"mse\":" +
                    num(r.whitebox_mse) + ",\"psnr\":" + num(r.whitebox_psnr) + ",\"objective\":[";
  for (std::size_t i = 0; i < r.objective.size(); ++i) {
    if (i) out += ',';
    out += num(r.objective[i]);
  }
  return out + "]}}";
}

}  // namespace pesl
