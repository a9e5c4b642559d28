#include "pesl/config.hpp"

#include <json.hpp>

#include <cmath>
#include <set>

#include "pesl/bytes.hpp"
#include "pesl/errors.hpp"

namespace pesl {

namespace {

using nlohmann::json;

// Typed field access on one JSON object, with the object's path as prefix
// for every message.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(label() + "must be an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, v] : obj_.items()) {
      if (!known.contains(k)) throw ConfigError(field(k) + ": unknown field");
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }

  Section section(const char* key) const {
    if (!has(key)) throw ConfigError(field(key) + ": missing");
    return Section(obj_.at(key), field(key));
  }

  std::size_t size(const char* key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_number_unsigned()) {
      if (v.is_number_integer() && v.get<long long>() >= 0) return v.get<std::size_t>();
      throw ConfigError(field(key) + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(field(key) + ": must be finite");
    return x;
  }

  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) throw ConfigError(field(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string text(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  std::string label() const { return path_.empty() ? "config: " : path_ + ": "; }

  const json& obj_;
  std::string path_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void parse_model(const Section& s, ModelConfig& m) {
  s.allow({"p", "d", "n_layers", "n_heads", "patch_h", "patch_w", "channels", "image_h",
           "image_w", "n_classes", "teb_variant", "activation", "position_embedding"});
  m.geometry.channels = s.size("channels", m.geometry.channels);
  m.geometry.image_h = s.size("image_h", m.geometry.image_h);
  m.geometry.image_w = s.size("image_w", m.geometry.image_w);
  m.geometry.patch_h = s.size("patch_h", m.geometry.patch_h);
  m.geometry.patch_w = s.size("patch_w", m.geometry.patch_w);
  m.d = s.size("d", m.d);
  m.n_layers = s.size("n_layers", m.n_layers);
  m.n_heads = s.size("n_heads", m.n_heads);
  m.n_classes = s.size("n_classes", m.n_classes);
  m.position_embedding = s.boolean("position_embedding", m.position_embedding);

  const std::string variant = s.text("teb_variant", "minimal");
  if (variant == "minimal") {
    m.teb_variant = TebVariant::minimal;
  } else if (variant == "full") {
    m.teb_variant = TebVariant::full;
  } else {
    throw ConfigError(s.field("teb_variant") + ": expected \"minimal\" or \"full\"");
  }
  const std::string act = s.text("activation", "relu");
  if (act == "relu") {
    m.activation = Activation::relu;
  } else if (act == "tanh") {
    m.activation = Activation::tanh;
  } else {
    throw ConfigError(s.field("activation") + ": expected \"relu\" or \"tanh\"");
  }

  for (const char* key : {"channels", "image_h", "image_w", "patch_h", "patch_w"}) {
    if (s.size(key, 1) == 0) throw ConfigError(s.field(key) + ": must be at least 1");
  }
  if (m.geometry.image_h % m.geometry.patch_h != 0) {
    throw ConfigError(s.field("patch_h") + ": must divide model.image_h");
  }
  if (m.geometry.image_w % m.geometry.patch_w != 0) {
    throw ConfigError(s.field("patch_w") + ": must divide model.image_w");
  }
  if (s.has("p") && s.size("p", 0) != m.p()) {
    throw ConfigError(s.field("p") + ": image and patch sizes give " + std::to_string(m.p()) +
                      " patches");
  }
}

void parse_train(const Section& s, TrainConfig& t) {
  s.allow({"mode", "lr", "epochs", "batch_size", "mixup_prob", "seed"});
  try {
    t.mode = parse_shuffle_mode(s.text("mode", "vanilla"));
  } catch (const ConfigError&) {
    throw ConfigError(s.field("mode") +
                      ": expected \"vanilla\", \"row_shuffle\" or \"row_column_shuffle\"");
  }
  t.lr = s.number("lr", t.lr);
  t.epochs = s.size("epochs", t.epochs);
  t.batch_size = s.size("batch_size", t.batch_size);
  t.mixup_prob = s.number("mixup_prob", t.mixup_prob);
  t.seed = s.size("seed", t.seed);
}

void parse_transport(const Section& s, TransportConfig& t) {
  s.allow({"kind", "endpoint"});
  const std::string kind = s.text("kind", "loopback");
  if (kind == "loopback") {
    t.kind = TransportKind::loopback;
  } else if (kind == "tcp") {
    t.kind = TransportKind::tcp;
    t.endpoint = s.text("endpoint", "");
    try {
      parse_endpoint(t.endpoint);
    } catch (const ConfigError& e) {
      throw ConfigError(s.field("endpoint") + ": " + e.what());
    }
  } else {
    throw ConfigError(s.field("kind") + ": expected \"loopback\" or \"tcp\"");
  }
}

void parse_data(const Section& s, DataConfig& d, const std::filesystem::path& base) {
  s.allow({"synthetic", "csv", "test_fraction"});
  if (s.has("synthetic") == s.has("csv")) {
    throw ConfigError(s.field("synthetic") + ": exactly one of data.synthetic or data.csv");
  }
  if (s.has("synthetic")) {
    const Section syn = s.section("synthetic");
    syn.allow({"n", "task"});
    d.synthetic = true;
    d.n = syn.size("n", d.n);
    const std::string task = syn.text("task", "plain");
    if (task == "plain") {
      d.task = SyntheticTask::plain;
    } else if (task == "order_dependent") {
      d.task = SyntheticTask::order_dependent;
    } else {
      throw ConfigError(syn.field("task") + ": expected \"plain\" or \"order_dependent\"");
    }
  } else {
    const Section csv = s.section("csv");
    csv.allow({"path"});
    d.synthetic = false;
    d.csv_path = resolve(base, csv.text("path", ""));
    if (d.csv_path.empty()) throw ConfigError(csv.field("path") + ": missing");
  }
  d.test_fraction = s.number("test_fraction", d.test_fraction);
  if (!(d.test_fraction >= 0.0 && d.test_fraction < 1.0)) {
    throw ConfigError(s.field("test_fraction") + ": must lie in [0, 1)");
  }
}

void parse_attack(const Section& s, AttackConfig& a) {
  s.allow({"aux_samples", "test_samples", "rounds", "epochs", "lr", "hidden", "whitebox_iters",
           "whitebox_lr", "matching"});
  a.aux_samples = s.size("aux_samples", a.aux_samples);
  a.test_samples = s.size("test_samples", a.test_samples);
  a.rounds = s.size("rounds", a.rounds);
  a.epochs = s.size("epochs", a.epochs);
  a.lr = s.number("lr", a.lr);
  a.hidden = s.size("hidden", a.hidden);
  a.whitebox_iters = s.size("whitebox_iters", a.whitebox_iters);
  a.whitebox_lr = s.number("whitebox_lr", a.whitebox_lr);
  const std::string matching = s.text("matching", "naive");
  if (matching == "naive") {
    a.matching = Matching::naive;
  } else if (matching == "greedy_row") {
    a.matching = Matching::greedy_row;
  } else {
    throw ConfigError(s.field("matching") + ": expected \"naive\" or \"greedy_row\"");
  }
  if (a.aux_samples == 0) throw ConfigError(s.field("aux_samples") + ": must be at least 1");
  if (a.rounds == 0) throw ConfigError(s.field("rounds") + ": must be at least 1");
  if (a.hidden == 0) throw ConfigError(s.field("hidden") + ": must be at least 1");
  if (!(a.lr > 0.0)) throw ConfigError(s.field("lr") + ": must be positive");
  if (!(a.whitebox_lr > 0.0)) throw ConfigError(s.field("whitebox_lr") + ": must be positive");
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON (") + e.what() + ")");
  }
  const Section root(doc, "");
  root.allow({"model", "train", "transport", "data", "attack", "key", "weights_dir", "metrics"});

  RunConfig rc;
  if (root.has("model")) parse_model(root.section("model"), rc.train.model);
  if (root.has("train")) parse_train(root.section("train"), rc.train);
  if (root.has("transport")) parse_transport(root.section("transport"), rc.transport);
  if (root.has("data")) parse_data(root.section("data"), rc.data, base_dir);
  if (root.has("attack")) parse_attack(root.section("attack"), rc.attack);
  rc.key_file = resolve(base_dir, root.text("key", ""));
  rc.weights_dir = resolve(base_dir, root.text("weights_dir", ""));
  rc.metrics_file = resolve(base_dir, root.text("metrics", ""));

  rc.train.validate();
  if (rc.data.synthetic) {
    if (rc.data.n == 0) throw ConfigError("data.synthetic.n: must be at least 1");
    if (rc.data.task == SyntheticTask::order_dependent && rc.train.model.n_classes != 2) {
      throw ConfigError("model.n_classes: the order_dependent task is binary");
    }
    if (rc.data.task == SyntheticTask::plain && rc.train.model.n_classes > 4) {
      throw ConfigError("model.n_classes: the synthetic blob task supports 2-4 classes");
    }
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

Dataset load_dataset(const RunConfig& config) {
  const ModelConfig& m = config.train.model;
  std::vector<Sample> all;
  if (config.data.synthetic) {
    SyntheticSpec spec;
    spec.n = config.data.n;
    spec.task = config.data.task;
    spec.n_classes = m.n_classes;
    spec.geometry = m.geometry;
    spec.seed = config.train.seed;
    all = make_synthetic(spec);
  } else {
    all = read_csv(config.data.csv_path, m.geometry, m.n_classes);
  }
  const auto n_test =
      static_cast<std::size_t>(std::floor(config.data.test_fraction * static_cast<double>(all.size())));
  Dataset ds;
  const std::size_t n_train = all.size() - n_test;
  ds.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
  return ds;
}

}  // namespace pesl
