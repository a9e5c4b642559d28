#include "pesl/properties.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <cstdio>

#include "pesl/data.hpp"
#include "pesl/encoder.hpp"
#include "pesl/errors.hpp"
#include "pesl/shuffle.hpp"
#include "pesl/split.hpp"
#include "pesl/trainer.hpp"

namespace pesl {

namespace {

constexpr double kFdStep = 1e-6;
constexpr double kFdTolerance = 1e-5;
constexpr double kFdNormFloor = 1e-3;
constexpr double kEquivTolerance = 1e-9;
constexpr double kEdgeStepTolerance = 1e-12;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

Vector random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

double dot(const Matrix& a, const Matrix& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

struct Tracker {
  PropertyResult r;

  Tracker(std::string name, double tol) {
    r.name = std::move(name);
    r.tolerance = tol;
    r.passed = true;
  }
  void observe(double err, const std::string& where) {
    if (!(err <= r.max_error)) r.max_error = std::isnan(err) ? INFINITY : err;
    if (!(err < r.tolerance) && r.passed) {
      r.passed = false;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3g", err);
      r.detail = where + ": error " + buf;
    }
  }
  PropertyResult done(std::size_t trials) {
    r.trials = trials;
    return r;
  }
};

// Central-difference estimate of df/dparams compared with `analytic`,
// norm-wise: |a - f| / max(|a| + |f|, kFdNormFloor). Rounding in the
// difference quotient leaves ~1e-10 of noise per entry, so tensors whose
// true gradient is zero (b_K: softmax ignores per-row shifts) are compared
// against the floor rather than against their own noise.
double fd_relative_error(const std::function<double()>& f, std::span<double> params,
                         std::span<const double> analytic) {
  double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + kFdStep;
    const double up = f();
    params[i] = saved - kFdStep;
    const double down = f();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * kFdStep);
    diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
    a2 += analytic[i] * analytic[i];
    f2 += numeric * numeric;
  }
  return std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(f2), kFdNormFloor);
}

std::span<double> span_of(Matrix& m) { return m.data(); }
std::span<const double> span_of(const Matrix& m) { return m.data(); }

using ParamList = std::vector<std::pair<std::string, std::span<double>>>;
using GradList = std::vector<std::span<const double>>;

ParamList block_params(EncoderBlockWeights& w) {
  ParamList out{{"W_Q", span_of(w.w_q)},
                {"W_K", span_of(w.w_k)},
                {"W_V", span_of(w.w_v)},
                {"W_1", span_of(w.w_1)},
                {"W_2", span_of(w.w_2)}};
  if (w.has_biases()) {
    out.emplace_back("b_Q", std::span<double>(*w.b_q));
    out.emplace_back("b_K", std::span<double>(*w.b_k));
    out.emplace_back("b_V", std::span<double>(*w.b_v));
    out.emplace_back("b_1", std::span<double>(*w.b_1));
    out.emplace_back("b_2", std::span<double>(*w.b_2));
  }
  if (w.has_layernorm()) {
    out.emplace_back("gamma1", std::span<double>(*w.gamma1));
    out.emplace_back("beta1", std::span<double>(*w.beta1));
    out.emplace_back("gamma2", std::span<double>(*w.gamma2));
    out.emplace_back("beta2", std::span<double>(*w.beta2));
  }
  return out;
}

GradList block_grads(const EncoderGradients& g) {
  GradList out{span_of(g.d_w_q), span_of(g.d_w_k), span_of(g.d_w_v), span_of(g.d_w_1),
               span_of(g.d_w_2)};
  if (g.d_b_q) {
    for (const auto* v : {&g.d_b_q, &g.d_b_k, &g.d_b_v, &g.d_b_1, &g.d_b_2}) {
      out.emplace_back(**v);
    }
  }
  if (g.d_gamma1) {
    for (const auto* v : {&g.d_gamma1, &g.d_beta1, &g.d_gamma2, &g.d_beta2}) {
      out.emplace_back(**v);
    }
  }
  return out;
}

struct Instance {
  EncoderOptions options;
  EncoderStack blocks;
  Matrix z;
  Permutation p_r;
  Permutation p_c;
  std::string label;
};

// A random stack and input. Layer-norm affines and biases are drawn away from
// their neutral values so that a mis-permuted vector cannot hide.
Instance random_instance(Rng& rng, bool allow_multihead) {
  const std::size_t p = pick(rng, 2, 8);
  const std::size_t d = pick(rng, 2, 8);
  const std::size_t layers = pick(rng, 1, 3);
  Instance in;
  in.options.variant = rng.below(2) ? TebVariant::full : TebVariant::minimal;
  in.options.activation = rng.below(2) ? Activation::tanh : Activation::relu;
  in.options.n_heads = 1;
  if (allow_multihead && rng.below(3) == 0) {
    std::vector<std::size_t> divisors;
    for (std::size_t h = 2; h <= d; ++h)
      if (d % h == 0) divisors.push_back(h);
    if (!divisors.empty()) in.options.n_heads = divisors[rng.below(divisors.size())];
  }
  in.options.column_shuffle = in.options.n_heads == 1;
  in.blocks = init_blocks(layers, d, in.options, rng);
  for (auto& b : in.blocks) {
    if (!b.has_biases()) continue;
    for (auto* v : {&b.b_q, &b.b_k, &b.b_v, &b.b_1, &b.b_2, &b.beta1, &b.beta2}) {
      **v = random_vector(rng, d, -0.5, 0.5);
    }
    *b.gamma1 = random_vector(rng, d, 0.5, 1.5);
    *b.gamma2 = random_vector(rng, d, 0.5, 1.5);
  }
  in.z = random_matrix(rng, p, d);
  in.p_r = sample_permutation(p, rng);
  in.p_c = in.options.n_heads == 1 ? sample_permutation(d, rng) : Permutation::identity(d);
  in.label = "p=" + std::to_string(p) + " d=" + std::to_string(d) +
             " layers=" + std::to_string(layers) + " heads=" +
             std::to_string(in.options.n_heads) +
             (in.options.variant == TebVariant::full ? " full" : " minimal");
  return in;
}

EncoderStack shuffled_stack(const Instance& in, bool corrupt) {
  if (in.options.n_heads > 1) return in.blocks;
  EncoderStack c = conjugate_stack(in.blocks, in.p_c, in.options);
  if (corrupt) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      c[i].w_q = conjugate_weight(in.blocks[i].w_q, in.p_c.inverse());
    }
  }
  return c;
}

std::vector<EncoderGradients> conjugated_grads(const std::vector<EncoderGradients>& g,
                                               const Permutation& p_c) {
  std::vector<EncoderGradients> out;
  for (const auto& b : g) {
    EncoderGradients c = b;
    c.d_w_q = conjugate_weight(b.d_w_q, p_c);
    c.d_w_k = conjugate_weight(b.d_w_k, p_c);
    c.d_w_v = conjugate_weight(b.d_w_v, p_c);
    c.d_w_1 = conjugate_weight(b.d_w_1, p_c);
    c.d_w_2 = conjugate_weight(b.d_w_2, p_c);
    for (auto* v : {&c.d_b_q, &c.d_b_k, &c.d_b_v, &c.d_b_1, &c.d_b_2, &c.d_gamma1, &c.d_beta1,
                    &c.d_gamma2, &c.d_beta2}) {
      if (*v) **v = permute_rowvector(**v, p_c);
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::size_t scaled(double effort, std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(effort * static_cast<double>(n))));
}

}  // namespace

PropertyResult check_forward_equivalence(std::uint64_t seed, std::size_t trials, bool corrupt) {
  Tracker t("encoder.forward_equivalence", kEquivTolerance);
  Rng rng(derive_seed(seed, "prop_forward"));
  for (std::size_t i = 0; i < trials; ++i) {
    const Instance in = random_instance(rng, true);
    std::vector<EncoderActivations> acts;
    const Matrix plain = stack_forward(in.blocks, in.options, in.z, acts);
    const Matrix shuffled = stack_forward(shuffled_stack(in, corrupt), in.options,
                                          shuffle_feature(in.z, in.p_r, in.p_c), acts);
    t.observe(max_abs_diff(shuffled, shuffle_feature(plain, in.p_r, in.p_c)),
              "trial " + std::to_string(i) + " (" + in.label + ")");
  }
  return t.done(trials);
}

PropertyResult check_gradient_conjugation(std::uint64_t seed, std::size_t trials, bool corrupt) {
  Tracker t("encoder.gradient_conjugation", kEquivTolerance);
  Rng rng(derive_seed(seed, "prop_grad_conj"));
  for (std::size_t i = 0; i < trials; ++i) {
    const Instance in = random_instance(rng, true);
    const Matrix upstream = random_matrix(rng, in.z.rows(), in.z.cols());
    std::vector<EncoderActivations> acts, acts_s;
    stack_forward(in.blocks, in.options, in.z, acts);
    const StackGradients g = stack_backward(in.blocks, in.options, acts, upstream);
    const EncoderStack conj = shuffled_stack(in, corrupt);
    stack_forward(conj, in.options, shuffle_feature(in.z, in.p_r, in.p_c), acts_s);
    const StackGradients gs = stack_backward(conj, in.options, acts_s,
                                             shuffle_gradient(upstream, in.p_r, in.p_c));
    const std::string where = "trial " + std::to_string(i) + " (" + in.label + ")";
    t.observe(max_abs_diff(gs.d_z, shuffle_feature(g.d_z, in.p_r, in.p_c)), where + " dZ");
    const auto expected = conjugated_grads(g.blocks, in.p_c);
    for (std::size_t b = 0; b < expected.size(); ++b) {
      const GradList want = block_grads(expected[b]);
      const GradList got = block_grads(gs.blocks[b]);
      EncoderBlockWeights names = in.blocks[b];
      const ParamList labels = block_params(names);
      for (std::size_t k = 0; k < want.size(); ++k) {
        double err = 0.0;
        for (std::size_t e = 0; e < want[k].size(); ++e) {
          err = std::max(err, std::abs(want[k][e] - got[k][e]));
        }
        t.observe(err, where + " block " + std::to_string(b) + " d" + labels[k].first);
      }
    }
  }
  return t.done(trials);
}

PropertyResult check_tensor_gradients(std::uint64_t seed, std::size_t trials) {
  Tracker t("tensor.backward_fd", kFdTolerance);
  Rng rng(derive_seed(seed, "prop_tensor_fd"));
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t r = pick(rng, 1, 6), c = pick(rng, 2, 8);
    const std::string where = "trial " + std::to_string(i) + " (" + std::to_string(r) + "x" +
                              std::to_string(c) + ")";
    Matrix x = random_matrix(rng, r, c, -2.0, 2.0);
    const Matrix up = random_matrix(rng, r, c);

    const Matrix s = softmax_rows(x);
    const Matrix d_soft = softmax_rows_backward(s, up);
    t.observe(fd_relative_error([&] { return dot(softmax_rows(x), up); }, span_of(x),
                                span_of(d_soft)),
              where + " softmax");

    Vector gamma = random_vector(rng, c, 0.5, 1.5);
    Vector beta = random_vector(rng, c, -0.5, 0.5);
    LayerNormCache cache;
    layernorm_rows(x, gamma, beta, 1e-5, &cache);
    const LayerNormGrads lg = layernorm_rows_backward(cache, gamma, up);
    auto ln = [&] { return dot(layernorm_rows(x, gamma, beta, 1e-5), up); };
    t.observe(fd_relative_error(ln, span_of(x), span_of(lg.d_x)), where + " layernorm dX");
    t.observe(fd_relative_error(ln, gamma, lg.d_gamma), where + " layernorm dgamma");
    t.observe(fd_relative_error(ln, beta, lg.d_beta), where + " layernorm dbeta");

    const Matrix d_tanh = hadamard(tanh_grad(x), up);
    t.observe(fd_relative_error([&] { return dot(tanh_act(x), up); }, span_of(x),
                                span_of(d_tanh)),
              where + " tanh");

    Matrix a = random_matrix(rng, r, c);
    Matrix b = random_matrix(rng, pick(rng, 1, 5), c);
    const Matrix up_nt = random_matrix(rng, r, b.rows());
    auto nt = [&] { return dot(matmul_nt(a, b), up_nt); };
    t.observe(fd_relative_error(nt, span_of(a), span_of(matmul(up_nt, b))), where + " matmul dA");
    t.observe(fd_relative_error(nt, span_of(b), span_of(matmul_tn(up_nt, a))),
              where + " matmul dB");
  }
  return t.done(trials);
}

PropertyResult check_encoder_gradients(std::uint64_t seed, std::size_t trials) {
  Tracker t("encoder.backward_fd", kFdTolerance);
  Rng rng(derive_seed(seed, "prop_encoder_fd"));
  for (std::size_t i = 0; i < trials; ++i) {
    Instance in = random_instance(rng, true);
    const Matrix up = random_matrix(rng, in.z.rows(), in.z.cols());
    std::vector<EncoderActivations> acts;
    stack_forward(in.blocks, in.options, in.z, acts);
    const StackGradients g = stack_backward(in.blocks, in.options, acts, up);
    auto loss = [&] {
      std::vector<EncoderActivations> scratch;
      return dot(stack_forward(in.blocks, in.options, in.z, scratch), up);
    };
    const std::string where = "trial " + std::to_string(i) + " (" + in.label + ")";
    t.observe(fd_relative_error(loss, span_of(in.z), span_of(g.d_z)), where + " dZ");
    for (std::size_t b = 0; b < in.blocks.size(); ++b) {
      const ParamList params = block_params(in.blocks[b]);
      const GradList grads = block_grads(g.blocks[b]);
      for (std::size_t k = 0; k < params.size(); ++k) {
        const std::string name = where + " block " + std::to_string(b) + " d" + params[k].first;
        if (params[k].first == "b_K") {
          // A key bias shifts each score row by a constant that softmax
          // cancels, so the exact gradient is zero and a difference quotient
          // only measures rounding. Check the analytic value instead.
          double worst = 0.0;
          for (double v : grads[k]) worst = std::max(worst, std::abs(v));
          t.observe(worst, name);
          continue;
        }
        t.observe(fd_relative_error(loss, params[k].second, grads[k]), name);
      }
    }
  }
  return t.done(trials);
}

PropertyResult check_edge_gradients(std::uint64_t seed, std::size_t trials) {
  Tracker t("edgemodel.backward_fd", kFdTolerance);
  Rng rng(derive_seed(seed, "prop_edge_fd"));
  for (std::size_t i = 0; i < trials; ++i) {
    PatchGeometry g;
    g.channels = pick(rng, 1, 2);
    g.patch_h = pick(rng, 1, 3);
    g.patch_w = pick(rng, 1, 3);
    g.image_h = g.patch_h * pick(rng, 1, 3);
    g.image_w = g.patch_w * pick(rng, 1, 3);
    const std::size_t d = pick(rng, 2, 6);
    const std::size_t n_classes = pick(rng, 2, 5);
    EdgeWeights w = init_edge(g, d, n_classes, rng.below(2) == 1, rng);
    if (w.pos_embed) *w.pos_embed = random_matrix(rng, g.patches(), d, -0.5, 0.5);
    Matrix patches = random_matrix(rng, g.patches(), g.patch_dim(), 0.0, 1.0);
    // A fixed elementwise gain stands in for the cloud between F1 and F3.
    const Matrix gain = random_matrix(rng, g.patches(), d, 0.5, 1.5);
    Vector target(n_classes);
    double total = 0.0;
    for (double& v : target) total += (v = rng.uniform01());
    for (double& v : target) v /= total;

    auto forward = [&](const EdgeWeights& ew, const Matrix& x) {
      const Matrix y = hadamard(embed_patches(ew, x), gain);
      return cross_entropy(head_forward(ew, y), target);
    };
    const Matrix y = hadamard(embed_patches(w, patches), gain);
    const LossResult lr = cross_entropy(head_forward(w, y), target);
    const HeadBackward hb = head_backward(w, y, lr.d_logits);
    const EmbedBackward eb = embed_backward(w, patches, hadamard(hb.d_a_final, gain));
    auto loss = [&] { return forward(w, patches).loss; };

    const std::string where = "trial " + std::to_string(i);
    t.observe(fd_relative_error(loss, span_of(w.w_head), span_of(hb.d_w_head)),
              where + " dW_head");
    t.observe(fd_relative_error(loss, w.b_head, hb.d_b_head), where + " db_head");
    t.observe(fd_relative_error(loss, span_of(w.w_embed), span_of(eb.d_w_embed)),
              where + " dW_embed");
    t.observe(fd_relative_error(loss, w.b_embed, eb.d_b_embed), where + " db_embed");
    if (w.pos_embed) {
      t.observe(fd_relative_error(loss, span_of(*w.pos_embed), span_of(*eb.d_pos_embed)),
                where + " dpos");
    }
    Vector logits = head_forward(w, y);
    const std::size_t label = static_cast<std::size_t>(rng.below(n_classes));
    const LossResult hard = cross_entropy(logits, label);
    t.observe(fd_relative_error([&] { return cross_entropy(logits, label).loss; }, logits,
                                hard.d_logits),
              where + " dlogits");
  }
  return t.done(trials);
}

PropertyResult check_edge_step(std::uint64_t seed, std::size_t trials) {
  Tracker t("shuffle_runtime.edge_step_equivalence", kEdgeStepTolerance);
  for (std::size_t i = 0; i < trials; ++i) {
    TrainConfig cfg;
    cfg.seed = derive_seed(seed, "prop_edge_step", {i});
    cfg.batch_size = 8;
    cfg.model.d = 8;
    cfg.model.n_layers = 1 + i % 2;
    cfg.model.teb_variant = i % 2 ? TebVariant::full : TebVariant::minimal;
    cfg.model.position_embedding = i % 3 == 0;
    cfg.mixup_prob = i % 2 ? 0.5 : 0.0;
    SyntheticSpec spec;
    spec.n = cfg.batch_size;
    spec.seed = cfg.seed;
    spec.geometry = cfg.model.geometry;
    spec.n_classes = cfg.model.n_classes;
    const std::vector<Sample> data = make_synthetic(spec);
    const ShuffleKey key = ShuffleKey::generate(cfg.model.p(), cfg.model.d,
                                                derive_seed(cfg.seed, "key"));
    const InitialModel init = init_model(cfg);

    auto one_step = [&](ShuffleMode mode) {
      TrainConfig c = cfg;
      c.mode = mode;
      CloudServer server(initial_cloud_for_mode(c, init.cloud, key),
                         c.model.encoder_options(mode), c.lr);
      LoopbackTransport transport(server);
      CloudClient client(transport);
      client.hello(Dims{static_cast<std::uint32_t>(c.model.p()),
                        static_cast<std::uint32_t>(c.model.d),
                        static_cast<std::uint32_t>(c.model.n_layers)});
      EdgeWeights edge = init.edge;
      train_epoch(c, edge, client, data, key, 0);
      return edge;
    };
    const EdgeWeights plain = one_step(ShuffleMode::vanilla);
    for (ShuffleMode mode : {ShuffleMode::row_shuffle, ShuffleMode::row_column_shuffle}) {
      t.observe(max_abs_diff(plain, one_step(mode)),
                "trial " + std::to_string(i) + " " + to_string(mode));
    }
  }
  return t.done(trials);
}

namespace {

PropertyResult check_permutation_algebra(std::uint64_t seed, std::size_t trials) {
  Tracker t("permutation.matrix_agreement", 0.5);  // exact: any mismatch is >= 1 element
  Rng rng(derive_seed(seed, "prop_perm"));
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t p = pick(rng, 1, 9), d = pick(rng, 1, 9);
    const Permutation pr = sample_permutation(p, rng), pc = sample_permutation(d, rng);
    const Matrix z = random_matrix(rng, p, d);
    const Matrix mr = pr.to_matrix(), mc = pc.to_matrix();
    const std::string where = "trial " + std::to_string(i);
    auto mismatch = [](const Matrix& a, const Matrix& b) { return a == b ? 0.0 : 1.0; };
    t.observe(mismatch(apply_rows(pr, z), matmul(mr, z)), where + " P_R Z");
    t.observe(mismatch(apply_rows_inv(pr, z), matmul_tn(mr, z)), where + " P_R^T Z");
    t.observe(mismatch(apply_cols(z, pc), matmul(z, mc)), where + " Z P_C");
    t.observe(mismatch(apply_cols_inv(z, pc), matmul_nt(z, mc)), where + " Z P_C^T");
    t.observe(mismatch(pr.inverse().to_matrix(), mr.transpose()), where + " inverse");
    t.observe(mismatch(apply_rows_inv(pr, apply_rows(pr, z)), z), where + " round trip");
    const Matrix w = random_matrix(rng, d, d);
    t.observe(mismatch(conjugate_weight(w, pc), matmul_nt(matmul(mc, w), mc)),
              where + " conjugation");
  }
  return t.done(trials);
}

PropertyResult check_operator_equivariance(std::uint64_t seed, std::size_t trials) {
  Tracker t("tensor.operator_equivariance", kEquivTolerance);
  Rng rng(derive_seed(seed, "prop_ops"));
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t p = pick(rng, 2, 8), d = pick(rng, 2, 8);
    const Permutation pr = sample_permutation(p, rng), pc = sample_permutation(d, rng);
    const Matrix x = random_matrix(rng, p, d, -2.0, 2.0);
    auto sh = [&](const Matrix& m) { return apply_cols_inv(apply_rows(pr, m), pc); };
    const std::string where = "trial " + std::to_string(i);
    t.observe(max_abs_diff(relu(sh(x)), sh(relu(x))), where + " relu");
    t.observe(max_abs_diff(tanh_act(sh(x)), sh(tanh_act(x))), where + " tanh");
    // Row-wise softmax of a p x p score matrix under P_R on both sides.
    const Matrix s = random_matrix(rng, p, p, -3.0, 3.0);
    const Matrix ps = apply_cols_inv(apply_rows(pr, s), pr);
    t.observe(max_abs_diff(softmax_rows(ps), apply_cols_inv(apply_rows(pr, softmax_rows(s)), pr)),
              where + " softmax");
    const Vector gamma = random_vector(rng, d, 0.5, 1.5), beta = random_vector(rng, d, -0.5, 0.5);
    t.observe(max_abs_diff(layernorm_rows(sh(x), permute_rowvector(gamma, pc),
                                          permute_rowvector(beta, pc), 1e-5),
                           sh(layernorm_rows(x, gamma, beta, 1e-5))),
              where + " layernorm");
    const Matrix w = random_matrix(rng, d, d);
    t.observe(max_abs_diff(matmul_nt(sh(x), conjugate_weight(w, pc)), sh(matmul_nt(x, w))),
              where + " linear");
  }
  return t.done(trials);
}

PropertyResult check_shuffle_roundtrip(std::uint64_t seed, std::size_t trials) {
  Tracker t("shuffle_runtime.roundtrip", 0.5);
  Rng rng(derive_seed(seed, "prop_roundtrip"));
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t p = pick(rng, 1, 9), d = pick(rng, 1, 9);
    const ShuffleKey key = ShuffleKey::generate(p, d, rng.next_u64());
    const Permutation pr = key.row_permutation(rng.below(10), rng.below(1000));
    const Matrix z = random_matrix(rng, p, d);
    t.observe(unshuffle_output(shuffle_feature(z, pr, key), pr, key) == z ? 0.0 : 1.0,
              "trial " + std::to_string(i));
  }
  return t.done(trials);
}

PropertyResult check_authorization(std::uint64_t seed, std::size_t trials) {
  Tracker t("shuffle_runtime.authorization_roundtrip", 0.5);
  Rng rng(derive_seed(seed, "prop_auth"));
  for (std::size_t i = 0; i < trials; ++i) {
    Instance in = random_instance(rng, false);
    const ShuffleKey key = ShuffleKey::generate(in.z.rows(), in.z.cols(), rng.next_u64());
    const EncoderStack auth = authorize(in.blocks, key.p_col, in.options);
    t.observe(deauthorize(auth, key, in.options) == in.blocks ? 0.0 : 1.0,
              "trial " + std::to_string(i) + " (" + in.label + ")");
  }
  return t.done(trials);
}

PropertyResult check_pool_invariance(std::uint64_t seed, std::size_t trials) {
  Tracker t("edgemodel.pool_row_invariance", kEquivTolerance);
  Rng rng(derive_seed(seed, "prop_pool"));
  for (std::size_t i = 0; i < trials; ++i) {
    PatchGeometry g;
    const std::size_t d = pick(rng, 2, 8);
    const EdgeWeights w = init_edge(g, d, 4, false, rng);
    const Matrix a = random_matrix(rng, g.patches(), d);
    const Permutation pr = sample_permutation(g.patches(), rng);
    t.observe(max_abs_diff(head_forward(w, apply_rows(pr, a)), head_forward(w, a)),
              "trial " + std::to_string(i));
  }
  return t.done(trials);
}

using Runner = std::function<PropertyResult(const VerifyOptions&)>;

const std::vector<std::pair<std::string, Runner>>& registry() {
  static const std::vector<std::pair<std::string, Runner>> r = {
      {"tensor.backward_fd",
       [](const VerifyOptions& o) { return check_tensor_gradients(o.seed, scaled(o.effort, 50)); }},
      {"tensor.operator_equivariance",
       [](const VerifyOptions& o) {
         return check_operator_equivariance(o.seed, scaled(o.effort, 100));
       }},
      {"permutation.matrix_agreement",
       [](const VerifyOptions& o) {
         return check_permutation_algebra(o.seed, scaled(o.effort, 100));
       }},
      {"encoder.forward_equivalence",
       [](const VerifyOptions& o) {
         return check_forward_equivalence(o.seed, scaled(o.effort, 100), o.corrupt_conjugation);
       }},
      {"encoder.backward_fd",
       [](const VerifyOptions& o) { return check_encoder_gradients(o.seed, scaled(o.effort, 50)); }},
      {"encoder.gradient_conjugation",
       [](const VerifyOptions& o) {
         return check_gradient_conjugation(o.seed, scaled(o.effort, 50), o.corrupt_conjugation);
       }},
      {"edgemodel.backward_fd",
       [](const VerifyOptions& o) { return check_edge_gradients(o.seed, scaled(o.effort, 50)); }},
      {"edgemodel.pool_row_invariance",
       [](const VerifyOptions& o) { return check_pool_invariance(o.seed, scaled(o.effort, 50)); }},
      {"shuffle_runtime.roundtrip",
       [](const VerifyOptions& o) { return check_shuffle_roundtrip(o.seed, scaled(o.effort, 100)); }},
      {"shuffle_runtime.authorization_roundtrip",
       [](const VerifyOptions& o) { return check_authorization(o.seed, scaled(o.effort, 30)); }},
      {"shuffle_runtime.edge_step_equivalence",
       [](const VerifyOptions& o) { return check_edge_step(o.seed, scaled(o.effort, 6)); }},
  };
  return r;
}

}  // namespace

std::vector<std::string> property_names() {
  std::vector<std::string> names;
  for (const auto& [name, run] : registry()) names.push_back(name);
  return names;
}

std::vector<PropertyResult> run_properties(const VerifyOptions& options) {
  std::vector<const std::pair<std::string, Runner>*> selected;
  if (!options.only) {
    for (const auto& entry : registry()) selected.push_back(&entry);
  } else {
    for (const std::string& name : *options.only) {
      if (name.empty()) continue;
      const auto it = std::find_if(registry().begin(), registry().end(),
                                   [&](const auto& e) { return e.first == name; });
      if (it == registry().end()) throw ConfigError("verify: unknown property '" + name + "'");
      if (std::find(selected.begin(), selected.end(), &*it) == selected.end()) {
        selected.push_back(&*it);
      }
    }
  }
  if (selected.empty()) throw ConfigError("no properties selected");
  std::vector<PropertyResult> results;
  for (const auto* entry : selected) results.push_back(entry->second(options));
  return results;
}

std::string properties_json(const std::vector<PropertyResult>& results) {
  nlohmann::ordered_json doc;
  bool all = true;
  doc["passed"] = true;
  doc["properties"] = nlohmann::ordered_json::array();
  for (const PropertyResult& r : results) {
    all = all && r.passed;
    doc["properties"].push_back({{"name", r.name},
                                 {"passed", r.passed},
                                 {"max_error", r.max_error},
                                 {"tolerance", r.tolerance},
                                 {"trials", r.trials},
                                 {"detail", r.detail}});
  }
  doc["passed"] = all;
  return doc.dump();
}

}  // namespace pesl
