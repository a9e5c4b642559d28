#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pesl/edge_model.hpp"
#include "pesl/encoder.hpp"
#include "pesl/errors.hpp"
#include "pesl/permutation.hpp"
#include "pesl/split.hpp"

namespace pesl {

enum class ShuffleMode { vanilla, row_shuffle, row_column_shuffle };

const char* to_string(ShuffleMode mode);
/// Accepts "vanilla", "row_shuffle", "row_column_shuffle".
ShuffleMode parse_shuffle_mode(const std::string& text);

struct ModelConfig {
  PatchGeometry geometry;
  std::size_t d = 8;
  std::size_t n_layers = 1;
  std::size_t n_heads = 1;
  TebVariant teb_variant = TebVariant::minimal;
  Activation activation = Activation::relu;
  bool position_embedding = false;
  std::size_t n_classes = 4;

  std::size_t p() const noexcept { return geometry.patches(); }
  EncoderOptions encoder_options(ShuffleMode mode) const;
  void validate() const;
};

struct TrainConfig {
  ShuffleMode mode = ShuffleMode::vanilla;
  double mixup_prob = 0.0;
  double lr = 0.05;
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  ModelConfig model;

  /// ConfigError naming the offending field.
  void validate() const;
};

struct StepMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  ShuffleMode mode = ShuffleMode::vanilla;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::vector<StepMetrics> steps;
};

/// {"epoch":..,"step":..,"loss":..,"accuracy":..,"mode":..} with losses
/// printed at full precision so dual runs can be diffed.
std::string metrics_json_line(const StepMetrics& m);

using MetricsSink = std::function<void(const StepMetrics&)>;

/// Raised when the transport fails mid-training. Carries the metrics gathered
/// so far and the global step index at which training stopped.
class TrainingAborted : public IoError {
 public:
  TrainingAborted(const std::string& what, std::size_t step, std::vector<EpochMetrics> partial)
      : IoError(what), step_(step), partial_(std::move(partial)) {}
  std::size_t step() const noexcept { return step_; }
  const std::vector<EpochMetrics>& partial() const noexcept { return partial_; }

 private:
  std::size_t step_;
  std::vector<EpochMetrics> partial_;
};

/// Initial weights drawn from the config seed's "edge_init" and "cloud_init"
/// sub-streams. The cloud stack is the plain (unauthorized) model.
struct InitialModel {
  EdgeWeights edge;
  EncoderStack cloud;
};
InitialModel init_model(const TrainConfig& config);

/// The cloud stack that training in `config.mode` must start from: the plain
/// stack, conjugated with the key's column permutation in row-column mode.
EncoderStack initial_cloud_for_mode(const TrainConfig& config, const EncoderStack& plain,
                                    const ShuffleKey& key);

/// Row and column permutations the edge applies to sample `index` of `epoch`.
struct SamplePermutations {
  Permutation p_r;
  Permutation p_c;
};
SamplePermutations permutations_for(ShuffleMode mode, const ShuffleKey& key, std::size_t p,
                                    std::size_t d, std::uint64_t epoch, std::uint64_t index);

/// One epoch of split training driven from the edge. Per batch: optional
/// CutMix, patch embedding, per-sample shuffle, cloud forward, unshuffle,
/// head and loss, backward to the head input, shuffled gradient to the cloud,
/// unshuffled input gradient back through F1, then STEP and the edge SGD
/// update. `epoch` selects the data-order, mixup and row-permutation streams.
EpochMetrics train_epoch(const TrainConfig& config, EdgeWeights& edge, CloudClient& cloud,
                         std::span<const Sample> data, const ShuffleKey& key, std::size_t epoch,
                         const MetricsSink& sink = {});

/// HELLO followed by config.epochs epochs. Transport failures are rethrown as
/// TrainingAborted.
std::vector<EpochMetrics> train(const TrainConfig& config, EdgeWeights& edge, CloudClient& cloud,
                                std::span<const Sample> data, const ShuffleKey& key,
                                const MetricsSink& sink = {});

struct EvalResult {
  double accuracy = 0.0;
  std::vector<Vector> logits;
  std::vector<std::size_t> predictions;
};

/// Forward-only pass over `data` through the cloud, shuffling per `mode`.
/// Row permutations come from the key's stream at epoch `stream_epoch`.
EvalResult evaluate(const ModelConfig& model, ShuffleMode mode, const EdgeWeights& edge,
                    CloudClient& cloud, std::span<const Sample> data, const ShuffleKey& key,
                    std::uint64_t stream_epoch = 0xFFFFFFFFULL);

/// Monolithic F3(F2(F1(x))) without any transport or shuffling.
Vector infer_local(const ModelConfig& model, const EdgeWeights& edge, const EncoderStack& cloud,
                   const EncoderOptions& options, const Image& image);

}  // namespace pesl
