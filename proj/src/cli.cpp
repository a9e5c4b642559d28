#include "pesl/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "pesl/attack.hpp"
#include "pesl/config.hpp"
#include "pesl/errors.hpp"
#include "pesl/properties.hpp"
#include "pesl/shuffle.hpp"
#include "pesl/split.hpp"
#include "pesl/trainer.hpp"
#include "pesl/transport.hpp"

namespace pesl {

namespace {

ShuffleKey key_for(const RunConfig& rc) {
  if (rc.train.mode == ShuffleMode::vanilla && rc.key_file.empty()) {
    return ShuffleKey{Permutation::identity(rc.train.model.d), 0, rc.train.model.p(),
                      rc.train.model.d};
  }
  if (rc.key_file.empty()) {
    throw ConfigError("key: " + std::string(to_string(rc.train.mode)) + " mode needs a key file");
  }
  ShuffleKey key = load_key(rc.key_file);
  if (key.p != rc.train.model.p() || key.d != rc.train.model.d) {
    throw ConfigError("key: file dims p=" + std::to_string(key.p) + " d=" + std::to_string(key.d) +
                      " do not match the model");
  }
  return key;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, std::ostream& fallback) : out_(&fallback) {
    if (!path.empty()) {
      file_.emplace(path);
      if (!*file_) throw IoError("cannot write metrics file " + path.string());
      out_ = &*file_;
    }
  }
  void line(const std::string& s) {
    *out_ << s << '\n';
    out_->flush();
  }

 private:
  std::optional<std::ofstream> file_;
  std::ostream* out_;
};

// Edge-side run shared by `train` and `run-edge`: trains over the given
// transport, evaluates on the held-out split, saves weights.
int edge_session(const RunConfig& rc, Transport& transport, std::ostream& out) {
  const Dataset ds = load_dataset(rc);
  const ShuffleKey key = key_for(rc);
  const InitialModel init = init_model(rc.train);
  EdgeWeights edge = init.edge;
  CloudClient client(transport);
  MetricsWriter metrics(rc.metrics_file, out);
  train(rc.train, edge, client, ds.train, key,
        [&](const StepMetrics& m) { metrics.line(metrics_json_line(m)); });
  const EvalResult eval =
      evaluate(rc.train.model, rc.train.mode, edge, client, ds.test, key);
  client.shutdown();
  metrics.line(std::string("{\"mode\":\"") + to_string(rc.train.mode) +
               "\",\"test_accuracy\":" + fmt(eval.accuracy) +
               ",\"test_samples\":" + std::to_string(ds.test.size()) + "}");
  if (!rc.weights_dir.empty()) {
    std::filesystem::create_directories(rc.weights_dir);
    save_edge(edge, rc.weights_dir / "edge.bin");
  }
  return kExitOk;
}

int cmd_verify(const std::string& only, bool only_given, std::uint64_t seed,
               double effort, bool corrupt, std::ostream& out) {
  VerifyOptions o;
  o.seed = seed;
  o.effort = effort;
  o.corrupt_conjugation = corrupt;
  if (only_given) {
    std::vector<std::string> names;
    std::stringstream ss(only);
    std::string name;
    while (std::getline(ss, name, ',')) names.push_back(name);
    o.only = names;
  }
  const std::vector<PropertyResult> results = run_properties(o);
  out << properties_json(results) << '\n';
  const bool ok = std::all_of(results.begin(), results.end(),
                              [](const PropertyResult& r) { return r.passed; });
  return ok ? kExitOk : kExitFailure;
}

int cmd_keygen(const RunConfig& rc, const std::filesystem::path& out_path,
               std::optional<std::uint64_t> seed, std::ostream& out) {
  const std::uint64_t s = seed ? *seed : derive_seed(rc.train.seed, "key");
  const ShuffleKey key = ShuffleKey::generate(rc.train.model.p(), rc.train.model.d, s);
  save_key(key, out_path);
  out << "{\"key\":\"" << out_path.string() << "\",\"p\":" << key.p << ",\"d\":" << key.d
      << "}\n";
  return kExitOk;
}

int cmd_authorize(const std::filesystem::path& in, const std::filesystem::path& key_path,
                  const std::filesystem::path& out_path, bool inverse, std::ostream& out) {
  const ShuffleKey key = load_key(key_path);
  const EncoderStack blocks = load_stack(in);
  if (blocks.front().dim() != key.d) {
    throw ConfigError("key: d=" + std::to_string(key.d) + " does not match weight width " +
                      std::to_string(blocks.front().dim()));
  }
  EncoderOptions options;
  const EncoderStack result =
      inverse ? deauthorize(blocks, key, options) : authorize(blocks, key.p_col, options);
  save_stack(result, out_path);
  out << "{\"weights\":\"" << out_path.string() << "\",\"blocks\":" << result.size()
      << ",\"direction\":\"" << (inverse ? "deauthorize" : "authorize") << "\"}\n";
  return kExitOk;
}

int cmd_train(const RunConfig& rc, const std::filesystem::path& capture, std::ostream& out) {
  if (rc.transport.kind == TransportKind::tcp) {
    TcpTransport tcp = TcpTransport::connect(rc.transport.endpoint);
    RecordingTransport rec(tcp, capture.empty() ? std::nullopt
                                                : std::optional<std::filesystem::path>(capture));
    return edge_session(rc, rec, out);
  }
  const ShuffleKey key = key_for(rc);
  const InitialModel init = init_model(rc.train);
  CloudServer server(initial_cloud_for_mode(rc.train, init.cloud, key),
                     rc.train.model.encoder_options(rc.train.mode), rc.train.lr);
  LoopbackTransport loop(server);
  RecordingTransport rec(loop, capture.empty() ? std::nullopt
                                               : std::optional<std::filesystem::path>(capture));
  const int rc_code = edge_session(rc, rec, out);
  if (!rc.weights_dir.empty()) save_stack(server.blocks(), rc.weights_dir / "cloud.bin");
  return rc_code;
}

int cmd_serve_cloud(const RunConfig& rc, const std::filesystem::path& weights,
                    std::size_t sessions, std::ostream& out) {
  if (rc.transport.kind != TransportKind::tcp) {
    throw ConfigError("transport.kind: serve-cloud needs a tcp endpoint");
  }
  EncoderStack blocks;
  if (!weights.empty()) {
    blocks = load_stack(weights);
  } else {
    const InitialModel init = init_model(rc.train);
    blocks = initial_cloud_for_mode(rc.train, init.cloud, key_for(rc));
  }
  if (blocks.size() != rc.train.model.n_layers || blocks.front().dim() != rc.train.model.d) {
    throw ConfigError("model: cloud weights do not match model.d / model.n_layers");
  }
  CloudServer server(std::move(blocks), rc.train.model.encoder_options(rc.train.mode),
                     rc.train.lr);
  const auto [host, port] = parse_endpoint(rc.transport.endpoint);
  TcpListener listener(host, port);
  out << "{\"listening\":" << listener.port() << "}\n";
  out.flush();
  run_cloud(listener, server, sessions);
  if (!rc.weights_dir.empty()) {
    std::filesystem::create_directories(rc.weights_dir);
    save_stack(server.blocks(), rc.weights_dir / "cloud.bin");
  }
  return kExitOk;
}

int cmd_attack(const RunConfig& rc, const std::vector<std::string>& modes, std::size_t seeds,
               std::ostream& out) {
  std::vector<ShuffleMode> selected;
  for (const std::string& m : modes) selected.push_back(parse_shuffle_mode(m));
  if (selected.empty()) selected = {rc.train.mode};
  for (std::size_t s = 0; s < seeds; ++s) {
    for (ShuffleMode mode : selected) {
      const AttackReport r = run_attack(rc.train.model, mode, rc.attack, rc.train.seed + s);
      out << attack_report_json(r) << '\n';
    }
  }
  return kExitOk;
}

int cmd_info(const RunConfig& rc, std::ostream& out) {
  const ModelConfig& m = rc.train.model;
  const std::size_t p = m.p(), d = m.d;
  const std::uint64_t edge = p * m.geometry.patch_dim() * d + d * m.n_classes;
  const std::uint64_t cloud = m.n_layers * (5 * p * d * d + 2 * p * p * d);
  nlohmann::ordered_json doc;
  doc["p"] = p;
  doc["d"] = d;
  doc["edge_macc"] = edge;
  doc["cloud_macc"] = cloud;
  doc["log2_perm_space"] = log2_perm_space(p, d);
  doc["mixup_space_factor"] = mixup_space_factor(rc.train.batch_size, p);
  out << doc.dump() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Permutation-equivalent split learning: edge, cloud and tools", "pesl");
  app.require_subcommand(1);

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Run config (JSON)")->required();
  };

  auto* verify = app.add_subcommand("verify", "Run the equivalence property suites");
  std::string only;
  std::uint64_t verify_seed = 1;
  double effort = 1.0;
  bool corrupt = false;
  auto* only_opt = verify->add_option("--only", only, "Comma-separated property names");
  verify->add_option("--seed", verify_seed, "Instance seed");
  verify->add_option("--effort", effort, "Scale on instance counts")->check(CLI::PositiveNumber);
  verify->add_flag("--corrupt-conjugation", corrupt, "Test hook: break W_Q conjugation");
  bool list = false;
  verify->add_flag("--list", list, "Print property names and exit");

  auto* keygen = app.add_subcommand("keygen", "Generate a shuffle key");
  add_config(keygen);
  std::string key_out;
  std::optional<std::uint64_t> key_seed;
  keygen->add_option("-o,--out", key_out, "Key file to write")->required();
  keygen->add_option("--seed", key_seed, "Seed (default: derived from train.seed)");

  auto* auth = app.add_subcommand("authorize", "Conjugate cloud weights with a key");
  std::string w_in, w_out, key_path;
  bool inverse = false;
  auth->add_option("--weights-in", w_in)->required();
  auth->add_option("--key", key_path)->required();
  auth->add_option("--weights-out", w_out)->required();
  auth->add_flag("--inverse", inverse, "Remove the key's permutation instead");

  std::string capture;
  auto* trn = app.add_subcommand("train", "Split training over the configured transport");
  add_config(trn);
  trn->add_option("--capture", capture, "Record every wire frame to this file");

  auto* serve = app.add_subcommand("serve-cloud", "Serve F2 over TCP");
  add_config(serve);
  std::string cloud_weights;
  std::size_t sessions = 1;
  serve->add_option("--weights", cloud_weights, "Initial cloud weights");
  serve->add_option("--sessions", sessions, "Sessions to serve, 0 = forever");

  auto* edge = app.add_subcommand("run-edge", "Edge side of split training over TCP");
  add_config(edge);
  edge->add_option("--capture", capture, "Record every wire frame to this file");

  auto* atk = app.add_subcommand("attack", "Black-box and white-box inversion attacks");
  add_config(atk);
  std::vector<std::string> modes;
  std::size_t seeds = 1;
  atk->add_option("--mode", modes, "Protection modes (default: train.mode)");
  atk->add_option("--seeds", seeds, "Consecutive seeds from train.seed")->check(CLI::PositiveNumber);

  auto* info = app.add_subcommand("info", "Analytic op counts and permutation space");
  add_config(info);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (verify->parsed()) {
      if (list) {
        for (const std::string& n : property_names()) out << n << '\n';
        return kExitOk;
      }
      return cmd_verify(only, only_opt->count() > 0, verify_seed, effort, corrupt, out);
    }
    if (auth->parsed()) return cmd_authorize(w_in, key_path, w_out, inverse, out);

    const RunConfig rc = load_run_config(config_path);
    if (keygen->parsed()) return cmd_keygen(rc, key_out, key_seed, out);
    if (info->parsed()) return cmd_info(rc, out);
    if (trn->parsed()) return cmd_train(rc, capture, out);
    if (serve->parsed()) return cmd_serve_cloud(rc, cloud_weights, sessions, out);
    if (edge->parsed()) {
      if (rc.transport.kind != TransportKind::tcp) {
        throw ConfigError("transport.kind: run-edge needs a tcp endpoint");
      }
      return cmd_train(rc, capture, out);
    }
    if (atk->parsed()) return cmd_attack(rc, modes, seeds, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingAborted& e) {
    err << "training aborted: " << e.what() << '\n';
    return kExitIo;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ProtocolError& e) {
    err << "protocol error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DecodeError& e) {
    err << "decode error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace pesl
