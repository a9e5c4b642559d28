#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pesl/edge_model.hpp"
#include "pesl/permutation.hpp"
#include "pesl/random.hpp"
#include "pesl/trainer.hpp"

namespace pesl {

/// G: flattened observation -> flattened image, relu(x W1 + b1) W2 + b2.
struct DecoderWeights {
  Matrix w1;  // in x hidden
  Vector b1;
  Matrix w2;  // hidden x out
  Vector b2;

  std::size_t in_dim() const noexcept { return w1.rows(); }
  std::size_t out_dim() const noexcept { return w2.cols(); }
  bool operator==(const DecoderWeights&) const = default;
};

DecoderWeights init_decoder(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, Rng& rng);
Vector decode_features(const DecoderWeights& g, const Vector& input);

/// One auxiliary sample as the attacker holds it: the raw image and the
/// feature bytes it saw for that image in each of e rounds.
struct AuxExample {
  Image image;
  std::vector<Matrix> observations;
};

/// Concatenates e observations row-major into one decoder input.
Vector flatten_observations(std::span<const Matrix> observations);

/// Per-sample SGD on mean squared pixel error, visiting examples in an order
/// drawn from `rng` each epoch. Zero epochs returns `init` unchanged.
DecoderWeights train_blackbox(DecoderWeights init, std::span<const AuxExample> aux,
                              std::size_t epochs, double lr, Rng& rng);

enum class Matching { naive, greedy_row };

struct WhiteBoxResult {
  Image estimate;
  /// Objective at the start of every iteration, then after the last one:
  /// iters + 1 entries.
  std::vector<double> objective;
};

/// Gradient descent on a guess image so that F1(guess) matches `observed`,
/// projected onto [0, 1] after every step. naive compares row for row;
/// greedy_row first pairs rows by greedy nearest assignment. The attacker
/// holds F1 but no key.
WhiteBoxResult whitebox_invert(const EdgeWeights& edge, const PatchGeometry& geometry,
                               const Matrix& observed, std::size_t iters, double lr,
                               Matching matching, const Image& initial_guess);
/// Initial guess: every pixel 0.5.
WhiteBoxResult whitebox_invert(const EdgeWeights& edge, const PatchGeometry& geometry,
                               const Matrix& observed, std::size_t iters, double lr,
                               Matching matching);

/// Objective of whitebox_invert for a fixed guess.
double whitebox_objective(const EdgeWeights& edge, const PatchGeometry& geometry,
                          const Matrix& observed, const Image& guess, Matching matching);

double mse(std::span<const double> a, std::span<const double> b);
double mse(const Image& a, const Image& b);
/// 10 log10(max_val^2 / mse); +infinity when mse is 0.
double psnr(const Image& a, const Image& b, double max_val = 1.0);

inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

/// Victim side: the feature the cloud receives for `image` as sample `index`
/// of round `epoch` under `mode`. Only this function touches the key.
Matrix observe(const EdgeWeights& edge, const PatchGeometry& geometry, const Image& image,
               ShuffleMode mode, const ShuffleKey& key, std::uint64_t epoch,
               std::uint64_t index);

struct AttackConfig {
  std::size_t aux_samples = 128;
  std::size_t test_samples = 32;
  std::size_t rounds = 1;  // e, observations per sample
  std::size_t epochs = 200;
  double lr = 0.01;
  std::size_t hidden = 64;
  std::size_t whitebox_iters = 300;
  double whitebox_lr = 0.5;
  Matching matching = Matching::naive;
};

struct AttackReport {
  ShuffleMode mode = ShuffleMode::vanilla;
  std::size_t rounds = 1;
  std::uint64_t seed = 0;
  double blackbox_mse = 0.0;
  double blackbox_psnr = 0.0;
  double whitebox_mse = 0.0;
  double whitebox_psnr = 0.0;
  std::vector<double> objective;  // white-box curve, averaged over test samples
  double final_objective() const { return objective.empty() ? 0.0 : objective.back(); }
};

/// Paired attack run for one protection mode. The edge model, key, auxiliary
/// set (disjoint seed) and held-out set all derive from `seed`, so runs that
/// differ only in `mode` see the same images and F1.
AttackReport run_attack(const ModelConfig& model, ShuffleMode mode, const AttackConfig& config,
                        std::uint64_t seed, bool run_blackbox = true, bool run_whitebox = true);

/// {"mode", "e", "seed", "blackbox": {"mse", "psnr"}, "whitebox": {"mse",
/// "psnr", "objective": [...]}}; psnr is the string "inf" when infinite.
std::string attack_report_json(const AttackReport& report);

}  // namespace pesl
