// Acceptance harness: one PASS/FAIL line per criterion. Tolerances and run
// sizes are pinned here; exit status is nonzero if any criterion fails.

#include <gmp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "pesl/attack.hpp"
#include "pesl/data.hpp"
#include "pesl/permutation.hpp"
#include "pesl/properties.hpp"
#include "pesl/shuffle.hpp"
#include "pesl/split.hpp"
#include "pesl/trainer.hpp"
#include "pesl/transport.hpp"
#include "pesl/wire.hpp"

using namespace pesl;

namespace {

constexpr std::uint64_t kSeed = 1;

// Criterion tolerances.
constexpr double kForwardTol = 1e-9;
constexpr double kFdTol = 1e-5;
constexpr double kConjTol = 1e-9;
constexpr double kLossTol = 1e-10;
constexpr double kWeightConjTol = 1e-8;
constexpr double kChanceBand = 0.10;
constexpr double kEdgeStepTol = 1e-12;
constexpr double kOrderAccuracy = 0.90;
constexpr double kBlackboxRatio = 2.0;
constexpr double kWhiteboxRatio = 10.0;
constexpr double kChi2Critical5 = 20.515;  // 5 dof, p = 0.001

// Training runs for criteria 4, 5, 6, 8, 12.
constexpr std::size_t kSamples = 1336;  // 1002 train + 334 test
constexpr std::size_t kEpochs = 6;

// Attack runs for criterion 10.
constexpr std::size_t kAttackSeeds = 10;

int failures = 0;

void report(int id, bool ok, const std::string& what) {
  std::printf("%s %2d %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

TrainConfig train_config(ShuffleMode mode, SyntheticTask task, double mixup = 0.0) {
  TrainConfig c;
  c.mode = mode;
  c.mixup_prob = mixup;
  c.lr = 0.1;
  c.epochs = kEpochs;
  c.batch_size = 16;
  c.seed = 3;
  c.model.d = 16;
  c.model.n_layers = 2;
  c.model.teb_variant = TebVariant::full;
  c.model.activation = Activation::relu;
  if (task == SyntheticTask::order_dependent) {
    c.model.n_classes = 2;
    c.model.position_embedding = true;
  } else {
    c.model.n_classes = 4;
  }
  return c;
}

struct Split {
  std::vector<Sample> train, test;
};

Split make_split(SyntheticTask task, std::size_t n_classes) {
  std::vector<Sample> all = make_synthetic(SyntheticSpec{kSamples, task, n_classes, {}, 11});
  const std::size_t n_test = kSamples / 4;
  Split s;
  s.train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_test));
  s.test.assign(all.end() - static_cast<std::ptrdiff_t>(n_test), all.end());
  return s;
}

struct Trained {
  std::vector<double> losses;
  EdgeWeights edge;
  EncoderStack cloud;
  EvalResult matched;
};

ShuffleKey acceptance_key(const TrainConfig& c) {
  return ShuffleKey::generate(c.model.p(), c.model.d, derive_seed(c.seed, "key"));
}

EvalResult eval_with(const TrainConfig& c, ShuffleMode mode, const EdgeWeights& edge,
                     const EncoderStack& cloud, const std::vector<Sample>& test) {
  CloudServer server(cloud, c.model.encoder_options(mode), c.lr);
  LoopbackTransport t(server);
  CloudClient client(t);
  client.hello(Dims{static_cast<std::uint32_t>(c.model.p()), static_cast<std::uint32_t>(c.model.d),
                    static_cast<std::uint32_t>(c.model.n_layers)});
  return evaluate(c.model, mode, edge, client, test, acceptance_key(c));
}

Trained train_run(const TrainConfig& c, const Split& data) {
  const ShuffleKey key = acceptance_key(c);
  const InitialModel init = init_model(c);
  CloudServer server(initial_cloud_for_mode(c, init.cloud, key), c.model.encoder_options(c.mode),
                     c.lr);
  LoopbackTransport t(server);
  CloudClient client(t);
  Trained r;
  r.edge = init.edge;
  train(c, r.edge, client, data.train, key, [&](const StepMetrics& m) { r.losses.push_back(m.loss); });
  r.cloud = server.blocks();
  r.matched = eval_with(c, c.mode, r.edge, r.cloud, data.test);
  return r;
}

double max_loss_gap(const Trained& a, const Trained& b) {
  if (a.losses.size() != b.losses.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.losses.size(); ++i) m = std::max(m, std::abs(a.losses[i] - b.losses[i]));
  return m;
}

double stack_gap(const EncoderStack& a, const EncoderStack& b) {
  double m = 0;
  auto vec = [&](const std::optional<Vector>& x, const std::optional<Vector>& y) {
    if (x && y) m = std::max(m, max_abs_diff(*x, *y));
    else if (x.has_value() != y.has_value()) m = INFINITY;
  };
  for (std::size_t l = 0; l < a.size(); ++l) {
    m = std::max({m, max_abs_diff(a[l].w_q, b[l].w_q), max_abs_diff(a[l].w_k, b[l].w_k),
                  max_abs_diff(a[l].w_v, b[l].w_v), max_abs_diff(a[l].w_1, b[l].w_1),
                  max_abs_diff(a[l].w_2, b[l].w_2)});
    vec(a[l].b_q, b[l].b_q);
    vec(a[l].b_k, b[l].b_k);
    vec(a[l].b_v, b[l].b_v);
    vec(a[l].b_1, b[l].b_1);
    vec(a[l].b_2, b[l].b_2);
    vec(a[l].gamma1, b[l].gamma1);
    vec(a[l].beta1, b[l].beta1);
    vec(a[l].gamma2, b[l].gamma2);
    vec(a[l].beta2, b[l].beta2);
  }
  return m;
}

struct DualOutcome {
  bool lossless = false;
  bool mismatch = false;
  std::string lossless_detail;
  std::string mismatch_detail;
  Trained vanilla;
};

// Criteria 4 and 5 on one task.
DualOutcome dual_runs(SyntheticTask task, double mixup) {
  const TrainConfig cv = train_config(ShuffleMode::vanilla, task, mixup);
  const TrainConfig cr = train_config(ShuffleMode::row_shuffle, task, mixup);
  const TrainConfig cc = train_config(ShuffleMode::row_column_shuffle, task, mixup);
  const Split data = make_split(task, cv.model.n_classes);

  DualOutcome o;
  o.vanilla = train_run(cv, data);
  const Trained rs = train_run(cr, data);
  const Trained rcs = train_run(cc, data);

  const double gap_rs = max_loss_gap(o.vanilla, rs);
  const double gap_rcs = max_loss_gap(o.vanilla, rcs);
  const EncoderStack expect =
      conjugate_stack(o.vanilla.cloud, acceptance_key(cc).p_col, cc.model.encoder_options(cc.mode));
  const double wgap = stack_gap(expect, rcs.cloud);
  const bool acc_equal = o.vanilla.matched.accuracy == rs.matched.accuracy;
  o.lossless = !o.vanilla.losses.empty() && gap_rs < kLossTol && gap_rcs < kLossTol && acc_equal &&
               wgap < kWeightConjTol;
  o.lossless_detail = std::to_string(o.vanilla.losses.size()) + " steps, loss gap RS " + sci(gap_rs) +
                      " RCS " + sci(gap_rcs) + ", test acc vanilla " + sci(o.vanilla.matched.accuracy) +
                      " RS " + sci(rs.matched.accuracy) + ", W(P) vs P W P^-1 " + sci(wgap);

  const double chance = 1.0 / static_cast<double>(cv.model.n_classes);
  const EvalResult mism = eval_with(cc, ShuffleMode::vanilla, rcs.edge, rcs.cloud, data.test);
  o.mismatch = std::abs(mism.accuracy - chance) <= kChanceBand &&
               rcs.matched.accuracy == o.vanilla.matched.accuracy;
  o.mismatch_detail = "unshuffled " + sci(mism.accuracy) + " (chance " + sci(chance) +
                      "), matched " + sci(rcs.matched.accuracy) + " vs vanilla " +
                      sci(o.vanilla.matched.accuracy);
  return o;
}

double exact_log2_factorial_product(unsigned long p, unsigned long d) {
  mpz_t a, b;
  mpz_inits(a, b, nullptr);
  mpz_fac_ui(a, p);
  mpz_fac_ui(b, d);
  mpz_mul(a, a, b);
  long e = 0;
  double m = mpz_get_d_2exp(&e, a);
  mpz_clears(a, b, nullptr);
  return std::log2(m) + static_cast<double>(e);
}

Message random_message(Rng& rng) {
  Matrix m(1 + rng.below(8), 1 + rng.below(8));
  for (auto& v : m.data()) {
    switch (rng.below(4)) {
      case 0: v = -0.0; break;
      case 1: v = std::numeric_limits<double>::denorm_min() * static_cast<double>(rng.below(100)); break;
      default: v = rng.uniform(-1e3, 1e3);
    }
  }
  Dims d{static_cast<std::uint32_t>(rng.next_u64()), static_cast<std::uint32_t>(rng.next_u64()),
         static_cast<std::uint32_t>(rng.next_u64())};
  switch (rng.below(9)) {
    case 0: return Message::hello(d);
    case 1: return Message::config_ack(d);
    case 2: return Message::fwd_req(m);
    case 3: return Message::fwd_resp(m);
    case 4: return Message::bwd_req(m);
    case 5: return rng.below(2) ? Message::bwd_ack(m) : Message::bwd_ack();
    case 6: return Message::step();
    case 7: return Message::shutdown();
    default: return Message::error(static_cast<std::uint32_t>(rng.below(6)), "e" + std::to_string(rng.below(1000)));
  }
}

bool same_bits(const Message& a, const Message& b) {
  if (a.kind != b.kind || a.payload.index() != b.payload.index()) return false;
  if (!a.has_matrix()) return a == b;
  return a.matrix().rows() == b.matrix().rows() && a.matrix().cols() == b.matrix().cols() &&
         std::memcmp(a.matrix().data().data(), b.matrix().data().data(),
                     a.matrix().size() * sizeof(double)) == 0;
}

void criterion_9() {
  TrainConfig c = train_config(ShuffleMode::row_column_shuffle, SyntheticTask::plain);
  c.epochs = 2;
  std::vector<Sample> data = make_synthetic(SyntheticSpec{128, SyntheticTask::plain, 4, {}, 21});
  const ShuffleKey key = acceptance_key(c);
  const InitialModel init = init_model(c);
  auto fresh = [&] {
    return CloudServer(initial_cloud_for_mode(c, init.cloud, key), c.model.encoder_options(c.mode), c.lr);
  };

  CloudServer loop_server = fresh();
  LoopbackTransport loop(loop_server);
  RecordingTransport rec(loop);
  CloudClient loop_client(rec);
  EdgeWeights loop_edge = init.edge;
  train(c, loop_edge, loop_client, data, key);
  loop_client.shutdown();

  CloudServer tcp_server = fresh();
  TcpListener listener("127.0.0.1", 0);
  std::thread cloud([&] { run_cloud(listener, tcp_server, 1); });
  EdgeWeights tcp_edge = init.edge;
  {
    TcpTransport tcp = TcpTransport::connect("127.0.0.1:" + std::to_string(listener.port()));
    CloudClient client(tcp);
    train(c, tcp_edge, client, data, key);
    client.shutdown();
  }
  cloud.join();
  const bool transports_equal = encode_stack(tcp_server.blocks()) == encode_stack(loop_server.blocks()) &&
                                encode_edge(tcp_edge) == encode_edge(loop_edge);

  Rng rng(kSeed);
  std::size_t round_trips = 0;
  for (int i = 0; i < 1000; ++i) {
    Message m = random_message(rng);
    std::vector<std::uint8_t> bytes = encode(m);
    Message back = decode(bytes);
    if (same_bits(m, back) && encode(back) == bytes) ++round_trips;
  }

  // Boundary: frame kinds and payload shapes are whitelisted; neither the key's
  // row seed nor its column permutation ever appears in the byte stream.
  std::vector<std::uint8_t> seed_le(8), pcol;
  for (int i = 0; i < 8; ++i) seed_le[i] = static_cast<std::uint8_t>(key.row_seed >> (8 * i));
  for (std::size_t v : key.p_col.indices()) pcol.push_back(static_cast<std::uint8_t>(v));
  std::size_t violations = 0;
  const std::size_t p = c.model.p(), d = c.model.d;
  for (const auto& f : rec.frames()) {
    Message m = decode(f.bytes);
    bool ok = false;
    switch (m.kind) {
      case MessageKind::hello:
      case MessageKind::config_ack:
        ok = m.dims() == Dims{static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(d),
                              static_cast<std::uint32_t>(c.model.n_layers)};
        break;
      case MessageKind::fwd_req:
      case MessageKind::fwd_resp:
      case MessageKind::bwd_req:
        ok = m.matrix().rows() == p && m.matrix().cols() == d;
        break;
      case MessageKind::bwd_ack:
        ok = !m.has_matrix() || (m.matrix().rows() == p && m.matrix().cols() == d);
        break;
      case MessageKind::step:
      case MessageKind::shutdown:
        ok = std::holds_alternative<std::monostate>(m.payload);
        break;
      default:
        ok = false;
    }
    if (std::search(f.bytes.begin(), f.bytes.end(), seed_le.begin(), seed_le.end()) != f.bytes.end())
      ok = false;
    if (std::search(f.bytes.begin(), f.bytes.end(), pcol.begin(), pcol.end()) != f.bytes.end())
      ok = false;
    if (!ok) ++violations;
  }
  report(9, transports_equal && round_trips == 1000 && violations == 0,
         std::string("protocol: TCP vs loopback 2 epochs ") + (transports_equal ? "bit-identical" : "DIFFER") +
             ", " + std::to_string(round_trips) + "/1000 round trips, " +
             std::to_string(rec.frames().size()) + " frames recorded, " + std::to_string(violations) +
             " boundary violations");
}

void criterion_10() {
  ModelConfig m;
  m.geometry = PatchGeometry{1, 8, 8, 4, 4};
  m.d = 24;
  m.position_embedding = true;
  m.n_classes = 4;
  AttackConfig a;
  a.aux_samples = 128;
  a.test_samples = 32;
  a.epochs = 300;
  a.lr = 0.01;
  a.hidden = 64;
  a.whitebox_iters = 1000;
  a.whitebox_lr = 5.0;

  std::size_t bb_wins = 0, wb_wins = 0;
  double min_bb = INFINITY, min_wb = INFINITY;
  for (std::size_t s = 0; s < kAttackSeeds; ++s) {
    const AttackReport plain = run_attack(m, ShuffleMode::vanilla, a, kSeed + s);
    const AttackReport rcs = run_attack(m, ShuffleMode::row_column_shuffle, a, kSeed + s);
    const double bb = rcs.blackbox_mse / plain.blackbox_mse;
    const double wb = plain.final_objective() > 0 ? rcs.final_objective() / plain.final_objective() : INFINITY;
    if (bb >= kBlackboxRatio) ++bb_wins;
    if (wb >= kWhiteboxRatio) ++wb_wins;
    min_bb = std::min(min_bb, bb);
    min_wb = std::min(min_wb, wb);
  }
  report(10, 2 * bb_wins > kAttackSeeds && wb_wins == kAttackSeeds,
         "privacy delta over " + std::to_string(kAttackSeeds) + " seeds: black-box RCS/vanilla MSE >= 2x on " +
             std::to_string(bb_wins) + " (min ratio " + sci(min_bb) + "), white-box objective >= 10x on " +
             std::to_string(wb_wins) + " (min ratio " + sci(min_wb) + ")");
}

void criterion_11() {
  double worst = 0;
  for (unsigned long p = 1; p <= 20; ++p)
    for (unsigned long d = 1; d <= 20; ++d) {
      const double exact = exact_log2_factorial_product(p, d);
      worst = std::max(worst, std::abs(log2_perm_space(p, d) - exact) / std::max(1.0, exact));
    }
  Rng rng(kSeed);
  std::map<std::vector<std::size_t>, int> counts;
  const int draws = 60000;
  for (int i = 0; i < draws; ++i) ++counts[sample_permutation(3, rng).indices()];
  double chi2 = 0;
  for (const auto& [perm, n] : counts) chi2 += (n - draws / 6.0) * (n - draws / 6.0) / (draws / 6.0);
  report(11, worst < 1e-12 && counts.size() == 6 && chi2 < kChi2Critical5,
         "sigma-privacy: log2_perm_space rel err " + sci(worst) + " vs GMP (p,d <= 20), chi2 " +
             sci(chi2) + " < " + sci(kChi2Critical5) + " over 60000 draws of n=3");
}

bool cutmix_identity() {
  Rng data(kSeed);
  std::vector<Sample> batch;
  for (std::size_t i = 0; i < 16; ++i) {
    Sample s{Image(3, 8, 8), i % 4};
    for (auto& v : s.image.pixels) v = data.uniform01();
    batch.push_back(s);
  }
  Rng rng(kSeed + 1);
  for (int round = 0; round < 200; ++round) {
    for (const MixedSample& m : cutmix(batch, 1.0, 4, rng)) {
      double mass = 0;
      for (double v : m.soft_label) mass += v;
      if (std::abs(mass - 1.0) > 1e-15) return false;
      const double cut = static_cast<double>(m.rect.w * m.rect.h) / 64.0;
      if (m.soft_label[batch[m.partner].label] + 1e-15 < cut) return false;
    }
  }
  // Pixel-level identity against an explicit mask.
  for (int round = 0; round < 200; ++round) {
    std::vector<MixedSample> mixed = cutmix(batch, 1.0, 4, rng);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const MixedSample& m = mixed[i];
      const Image& xa = batch[i].image;
      const Image& xb = batch[m.partner].image;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) {
            const bool in = x >= m.rect.x && x < m.rect.x + m.rect.w && y >= m.rect.y &&
                            y < m.rect.y + m.rect.h;
            const double mask = in ? 0.0 : 1.0;
            if (m.image.at(c, y, x) != mask * xa.at(c, y, x) + (1.0 - mask) * xb.at(c, y, x))
              return false;
          }
      if (m.lambda != 1.0 - static_cast<double>(m.rect.w * m.rect.h) / 64.0) return false;
    }
  }
  return true;
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();

  {
    PropertyResult r = check_forward_equivalence(kSeed, 100);
    report(1, r.passed && r.max_error < kForwardTol,
           "forward equivalence: max err " + sci(r.max_error) + " over " + std::to_string(r.trials) +
               " stacks (tol " + sci(kForwardTol) + ")");
  }
  {
    PropertyResult t = check_tensor_gradients(kSeed, 50);
    PropertyResult e = check_encoder_gradients(kSeed, 50);
    PropertyResult g = check_edge_gradients(kSeed, 50);
    const double worst = std::max({t.max_error, e.max_error, g.max_error});
    report(2, t.passed && e.passed && g.passed && worst < kFdTol,
           "gradients vs central differences (h=1e-6): tensor " + sci(t.max_error) + ", encoder " +
               sci(e.max_error) + ", edge " + sci(g.max_error) + " over 50 instances each (tol " +
               sci(kFdTol) + ")");
  }
  {
    PropertyResult r = check_gradient_conjugation(kSeed, 50);
    report(3, r.passed && r.max_error < kConjTol,
           "weight-gradient conjugation: max err " + sci(r.max_error) + " over " +
               std::to_string(r.trials) + " instances (tol " + sci(kConjTol) + ")");
  }

  DualOutcome plain = dual_runs(SyntheticTask::plain, 0.0);
  report(4, plain.lossless, "lossless training: " + plain.lossless_detail);
  report(5, plain.mismatch, "mismatch degradation: " + plain.mismatch_detail);

  {
    const TrainConfig cv = train_config(ShuffleMode::vanilla, SyntheticTask::plain);
    const TrainConfig cc = train_config(ShuffleMode::row_column_shuffle, SyntheticTask::plain);
    const Split data = make_split(SyntheticTask::plain, 4);
    const ShuffleKey key = acceptance_key(cc);
    const EncoderOptions opts = cc.model.encoder_options(cc.mode);
    const EncoderStack authorized = authorize(plain.vanilla.cloud, key.p_col, opts);
    const EvalResult base = eval_with(cv, ShuffleMode::vanilla, plain.vanilla.edge, plain.vanilla.cloud, data.test);
    const EvalResult shuffled = eval_with(cc, ShuffleMode::row_column_shuffle, plain.vanilla.edge, authorized, data.test);
    const bool same_argmax = base.predictions == shuffled.predictions;
    const bool round_trip = encode_stack(deauthorize(authorized, key, opts)) == encode_stack(plain.vanilla.cloud);
    report(6, same_argmax && round_trip,
           std::string("authorization: argmax ") + (same_argmax ? "identical" : "DIFFERS") + " on " +
               std::to_string(base.predictions.size()) + " test samples, deauthorize " +
               (round_trip ? "bit-identical" : "NOT bit-identical"));
  }

  {
    PropertyResult r = check_edge_step(kSeed, 6);
    report(7, r.passed && r.max_error < kEdgeStepTol,
           "edge-parameter step: max diff " + sci(r.max_error) + " over " + std::to_string(r.trials) +
               " runs (tol " + sci(kEdgeStepTol) + ")");
  }

  {
    DualOutcome ord = dual_runs(SyntheticTask::order_dependent, 0.0);
    const double acc = ord.vanilla.matched.accuracy;
    report(8, acc > kOrderAccuracy && ord.lossless && ord.mismatch,
           "order-dependent task: test acc " + sci(acc) + "; " + ord.lossless_detail + "; " +
               ord.mismatch_detail);
  }

  criterion_9();
  criterion_10();
  criterion_11();

  {
    const bool identity = cutmix_identity();
    DualOutcome mixed = dual_runs(SyntheticTask::plain, 0.5);
    report(12, identity && mixed.lossless,
           std::string("cutmix: mask identity ") + (identity ? "exact" : "BROKEN") +
               ", label mass conserved; with mixup 0.5: " + mixed.lossless_detail);
  }

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s: %d criteria failed, %.1f s\n", failures ? "FAILED" : "OK", failures, secs);
  return failures ? 1 : 0;
}
