#include "pesl/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "pesl/shuffle.hpp"

namespace pesl {

const char* to_string(ShuffleMode mode) {
  switch (mode) {
    case ShuffleMode::vanilla: return "vanilla";
    case ShuffleMode::row_shuffle: return "row_shuffle";
    case ShuffleMode::row_column_shuffle: return "row_column_shuffle";
  }
  return "unknown";
}

ShuffleMode parse_shuffle_mode(const std::string& text) {
  if (text == "vanilla") return ShuffleMode::vanilla;
  if (text == "row_shuffle") return ShuffleMode::row_shuffle;
  if (text == "row_column_shuffle") return ShuffleMode::row_column_shuffle;
  throw ConfigError("train.mode: unknown mode '" + text + "'");
}

EncoderOptions ModelConfig::encoder_options(ShuffleMode mode) const {
  EncoderOptions o;
  o.n_heads = n_heads;
  o.variant = teb_variant;
  o.activation = activation;
  o.column_shuffle = mode == ShuffleMode::row_column_shuffle;
  return o;
}

void ModelConfig::validate() const {
  try {
    geometry.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("model.image/patch: ") + e.what());
  }
  if (d == 0) throw ConfigError("model.d: must be at least 1");
  if (n_layers == 0) throw ConfigError("model.n_layers: must be at least 1");
  if (n_heads == 0) throw ConfigError("model.n_heads: must be at least 1");
  if (d % n_heads != 0) throw ConfigError("model.n_heads: must divide model.d");
  if (n_classes < 2) throw ConfigError("model.n_classes: must be at least 2");
}

void TrainConfig::validate() const {
  model.validate();
  if (mode == ShuffleMode::row_column_shuffle && model.n_heads != 1) {
    throw ConfigError(
        "model.n_heads: row_column_shuffle mode needs single-head attention (column shuffle "
        "mixes features across heads)");
  }
  if (!(mixup_prob >= 0.0 && mixup_prob <= 1.0)) {
    throw ConfigError("train.mixup_prob: must lie in [0, 1]");
  }
  if (!(lr > 0.0)) throw ConfigError("train.lr: must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size: must be at least 1");
  if (mixup_prob > 0.0 && batch_size < 2) {
    throw ConfigError("train.batch_size: mixup needs batches of at least 2");
  }
}

std::string metrics_json_line(const StepMetrics& m) {
  char loss[64];
  std::snprintf(loss, sizeof(loss), "%.17g", m.loss);
  char acc[64];
  std::snprintf(acc, sizeof(acc), "%.17g", m.accuracy);
  return std::string("{\"epoch\":") + std::to_string(m.epoch) +
         ",\"step\":" + std::to_string(m.step) + ",\"loss\":" + loss + ",\"accuracy\":" + acc +
         ",\"mode\":\"" + to_string(m.mode) + "\"}";
}

InitialModel init_model(const TrainConfig& config) {
  config.validate();
  const ModelConfig& m = config.model;
  Rng edge_rng(derive_seed(config.seed, "edge_init"));
  Rng cloud_rng(derive_seed(config.seed, "cloud_init"));
  InitialModel out;
  out.edge = init_edge(m.geometry, m.d, m.n_classes, m.position_embedding, edge_rng);
  out.cloud = init_blocks(m.n_layers, m.d, m.encoder_options(ShuffleMode::vanilla), cloud_rng);
  return out;
}

EncoderStack initial_cloud_for_mode(const TrainConfig& config, const EncoderStack& plain,
                                    const ShuffleKey& key) {
  if (config.mode != ShuffleMode::row_column_shuffle) return plain;
  return conjugate_stack(plain, key.p_col, config.model.encoder_options(config.mode));
}

SamplePermutations permutations_for(ShuffleMode mode, const ShuffleKey& key, std::size_t p,
                                    std::size_t d, std::uint64_t epoch, std::uint64_t index) {
  SamplePermutations perms{Permutation::identity(p), Permutation::identity(d)};
  if (mode != ShuffleMode::vanilla) perms.p_r = key.row_permutation(epoch, index);
  if (mode == ShuffleMode::row_column_shuffle) perms.p_c = key.p_col;
  return perms;
}

namespace {

void check_key(const ModelConfig& model, ShuffleMode mode, const ShuffleKey& key) {
  if (mode == ShuffleMode::vanilla) return;
  key.validate();
  if (key.p != model.p() || key.d != model.d) {
    throw ConfigError("key: dims p=" + std::to_string(key.p) + " d=" + std::to_string(key.d) +
                      " do not match model p=" + std::to_string(model.p()) +
                      " d=" + std::to_string(model.d));
  }
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "data_order", {epoch}));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

EpochMetrics train_epoch(const TrainConfig& config, EdgeWeights& edge, CloudClient& cloud,
                         std::span<const Sample> data, const ShuffleKey& key, std::size_t epoch,
                         const MetricsSink& sink) {
  config.validate();
  const ModelConfig& model = config.model;
  check_key(model, config.mode, key);
  edge.validate(model.geometry);

  EpochMetrics metrics;
  metrics.epoch = epoch;
  if (data.empty()) return metrics;

  const std::vector<std::size_t> order = epoch_order(config.seed, epoch, data.size());
  const std::size_t n_batches = (data.size() + config.batch_size - 1) / config.batch_size;
  double loss_sum = 0.0;
  std::size_t correct = 0;

  for (std::size_t b = 0; b < n_batches; ++b) {
    const std::size_t begin = b * config.batch_size;
    const std::size_t end = std::min(begin + config.batch_size, data.size());
    std::vector<Sample> batch;
    batch.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) batch.push_back(data[order[i]]);

    // A trailing batch of one cannot be mixed; it passes through unmixed.
    const double prob = batch.size() >= 2 ? config.mixup_prob : 0.0;
    Rng mix_rng(derive_seed(config.seed, "mixup", {epoch, b}));
    const std::vector<MixedSample> mixed = cutmix(batch, prob, model.n_classes, mix_rng);

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    EdgeGradients edge_grads;
    double batch_loss = 0.0;
    std::size_t batch_correct = 0;

    for (std::size_t s = 0; s < mixed.size(); ++s) {
      const MixedSample& sample = mixed[s];
      const SamplePermutations perms =
          permutations_for(config.mode, key, model.p(), model.d, epoch, begin + s);

      const Matrix patches = patchify(model.geometry, sample.image);
      const Matrix z = embed_patches(edge, patches);
      const Matrix y =
          unshuffle_output(cloud.forward(shuffle_feature(z, perms.p_r, perms.p_c)), perms.p_r,
                           perms.p_c);

      const Vector logits = head_forward(edge, y);
      LossResult loss = cross_entropy(logits, sample.soft_label);
      batch_loss += loss.loss;
      if (argmax(logits) == sample.label) ++batch_correct;
      for (double& g : loss.d_logits) g *= inv_batch;

      HeadBackward head = head_backward(edge, y, loss.d_logits);
      const Matrix d_z = unshuffle_output(
          cloud.backward(shuffle_gradient(head.d_a_final, perms.p_r, perms.p_c)), perms.p_r,
          perms.p_c);
      EmbedBackward embed = embed_backward(edge, patches, d_z);

      accumulate(edge_grads, EdgeGradients{std::move(embed.d_w_embed), std::move(embed.d_b_embed),
                                           std::move(embed.d_pos_embed),
                                           std::move(head.d_w_head), std::move(head.d_b_head)});
    }

    cloud.step();
    sgd_update(edge, edge_grads, config.lr);

    StepMetrics step{epoch, b, batch_loss * inv_batch,
                     static_cast<double>(batch_correct) * inv_batch, config.mode};
    loss_sum += batch_loss;
    correct += batch_correct;
    metrics.steps.push_back(step);
    if (sink) sink(step);
  }

  metrics.mean_loss = loss_sum / static_cast<double>(data.size());
  metrics.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return metrics;
}

std::vector<EpochMetrics> train(const TrainConfig& config, EdgeWeights& edge, CloudClient& cloud,
                                std::span<const Sample> data, const ShuffleKey& key,
                                const MetricsSink& sink) {
  config.validate();
  std::vector<EpochMetrics> history;
  std::size_t steps_done = 0;
  std::vector<StepMetrics> current;
  auto counting_sink = [&](const StepMetrics& m) {
    ++steps_done;
    current.push_back(m);
    if (sink) sink(m);
  };

  const ModelConfig& model = config.model;
  cloud.hello(Dims{static_cast<std::uint32_t>(model.p()), static_cast<std::uint32_t>(model.d),
                   static_cast<std::uint32_t>(model.n_layers)});
  for (std::size_t e = 0; e < config.epochs; ++e) {
    current.clear();
    auto abort = [&](const std::exception& err) {
      EpochMetrics partial;
      partial.epoch = e;
      partial.steps = current;
      history.push_back(std::move(partial));
      return TrainingAborted("training aborted at step " + std::to_string(steps_done) +
                                 " (epoch " + std::to_string(e) + "): " + err.what(),
                             steps_done, std::move(history));
    };
    try {
      history.push_back(train_epoch(config, edge, cloud, data, key, e, counting_sink));
    } catch (const IoError& err) {
      throw abort(err);
    } catch (const ProtocolError& err) {
      throw abort(err);
    }
  }
  return history;
}

EvalResult evaluate(const ModelConfig& model, ShuffleMode mode, const EdgeWeights& edge,
                    CloudClient& cloud, std::span<const Sample> data, const ShuffleKey& key,
                    std::uint64_t stream_epoch) {
  model.validate();
  check_key(model, mode, key);
  EvalResult r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SamplePermutations perms =
        permutations_for(mode, key, model.p(), model.d, stream_epoch, i);
    const Matrix z = patch_embed(edge, model.geometry, data[i].image);
    const Matrix y = unshuffle_output(cloud.forward(shuffle_feature(z, perms.p_r, perms.p_c)),
                                      perms.p_r, perms.p_c);
    Vector logits = head_forward(edge, y);
    const std::size_t pred = argmax(logits);
    if (pred == data[i].label) ++correct;
    r.predictions.push_back(pred);
    r.logits.push_back(std::move(logits));
  }
  r.accuracy = data.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

Vector infer_local(const ModelConfig& model, const EdgeWeights& edge, const EncoderStack& cloud,
                   const EncoderOptions& options, const Image& image) {
  std::vector<EncoderActivations> acts;
  const Matrix z = patch_embed(edge, model.geometry, image);
  return head_forward(edge, stack_forward(cloud, options, z, acts));
}

}  // namespace pesl
