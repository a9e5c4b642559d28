#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "pesl/bytes.hpp"
#include "pesl/cli.hpp"
#include "pesl/config.hpp"
#include "pesl/data.hpp"
#include "pesl/encoder.hpp"
#include "pesl/errors.hpp"

using namespace pesl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("pesl_cli_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

json base_config() {
  return json::parse(R"({
    "model": {"d": 8, "n_layers": 1, "teb_variant": "full", "n_classes": 4,
              "image_h": 8, "image_w": 8, "patch_h": 4, "patch_w": 4},
    "train": {"mode": "vanilla", "lr": 0.1, "epochs": 1, "batch_size": 8, "seed": 2},
    "data": {"synthetic": {"n": 48, "task": "plain"}, "test_fraction": 0.25}
  })");
}

fs::path write_config(const TempDir& dir, const json& cfg, const std::string& name = "cfg.json") {
  fs::path p = dir.path / name;
  std::ofstream(p) << cfg.dump(2);
  return p;
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string config_error(const json& cfg) {
  try {
    parse_run_config(cfg.dump());
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("config errors name the field") {
  json c = base_config();
  c["train"]["lr"] = -1;
  CHECK(config_error(c).rfind("train.lr:", 0) == 0);

  c = base_config();
  c["model"]["colour"] = 1;
  CHECK(config_error(c).rfind("model.colour:", 0) == 0);

  c = base_config();
  c["model"]["patch_h"] = 3;
  CHECK_FALSE(config_error(c).empty());

  c = base_config();
  c["train"]["mode"] = "row_column_shuffle";
  c["model"]["n_heads"] = 2;
  CHECK_FALSE(config_error(c).empty());

  c = base_config();
  c["train"]["mode"] = "sideways";
  CHECK(config_error(c).rfind("train.mode:", 0) == 0);

  c = base_config();
  c["data"]["synthetic"]["task"] = "order_dependent";
  CHECK_FALSE(config_error(c).empty());  // needs n_classes = 2

  CHECK(config_error(base_config()).empty());
  CHECK_THROWS_AS(load_run_config("/nonexistent/pesl.json"), IoError);
}

TEST_CASE("synthetic data is deterministic and order labels flip") {
  SyntheticSpec spec{64, SyntheticTask::plain, 4, {}, 3};
  auto a = make_synthetic(spec);
  auto b = make_synthetic(spec);
  REQUIRE(a.size() == 64);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].label == b[i].label);
    for (double v : a[i].image.pixels) CHECK((v >= 0.0 && v <= 1.0));
  }
  spec.seed = 4;
  CHECK_FALSE(make_synthetic(spec)[0].image == a[0].image);

  SyntheticSpec ord{40, SyntheticTask::order_dependent, 2, {}, 5};
  PatchGeometry g;
  std::size_t positives = 0;
  for (const Sample& s : make_synthetic(ord)) {
    CHECK(order_label(g, s.image) == s.label);
    if (s.label == 1) {
      ++positives;
      // Reverse the patch order and the label must flip.
      Image r = s.image;
      const std::size_t p = g.patches(), per = g.image_w / g.patch_w;
      for (std::size_t k = 0; k < p; ++k) {
        std::size_t src = p - 1 - k;
        for (std::size_t y = 0; y < g.patch_h; ++y)
          for (std::size_t x = 0; x < g.patch_w; ++x)
            r.at(0, (k / per) * g.patch_h + y, (k % per) * g.patch_w + x) =
                s.image.at(0, (src / per) * g.patch_h + y, (src % per) * g.patch_w + x);
      }
      CHECK(order_label(g, r) == 0);
    }
  }
  CHECK(positives == 20);
}

TEST_CASE("csv round trip and rejection") {
  TempDir dir;
  auto samples = make_synthetic(SyntheticSpec{10, SyntheticTask::plain, 4, {}, 6});
  fs::path path = dir.path / "d.csv";
  write_csv(samples, path);
  auto back = read_csv(path, PatchGeometry{}, 4);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].image == samples[i].image);
    CHECK(back[i].label == samples[i].label);
  }

  std::ofstream(dir.path / "bad.csv") << "1,0.5\n";
  CHECK_THROWS_AS(read_csv(dir.path / "bad.csv", PatchGeometry{}, 4), ConfigError);
  std::string row = "7";
  for (int i = 0; i < 64; ++i) row += ",0.5";
  std::ofstream(dir.path / "label.csv") << row << "\n";
  try {
    read_csv(dir.path / "label.csv", PatchGeometry{}, 4);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("label.csv:1") != std::string::npos);
  }
}

TEST_CASE("info reports the permutation space") {
  TempDir dir;
  CliResult r = cli({"info", "-c", write_config(dir, base_config()).string()});
  REQUIRE(r.code == kExitOk);
  json doc = json::parse(r.out);
  CHECK(doc["p"] == 4);
  CHECK(doc["d"] == 8);
  CHECK(doc["log2_perm_space"].get<double>() == doctest::Approx(std::log2(24.0 * 40320.0)));
  CHECK(doc["mixup_space_factor"] == 8 * 16);
}

TEST_CASE("keygen, authorize and its inverse") {
  TempDir dir;
  json c = base_config();
  c["weights_dir"] = "w";
  fs::path cfg = write_config(dir, c);
  REQUIRE(cli({"train", "-c", cfg.string()}).code == kExitOk);
  fs::path cloud = dir.path / "w" / "cloud.bin";
  REQUIRE(fs::exists(cloud));

  fs::path key = dir.path / "k.json";
  REQUIRE(cli({"keygen", "-c", cfg.string(), "-o", key.string()}).code == kExitOk);
  fs::path auth = dir.path / "auth.bin", back = dir.path / "back.bin";
  REQUIRE(cli({"authorize", "--weights-in", cloud.string(), "--key", key.string(),
               "--weights-out", auth.string()})
              .code == kExitOk);
  REQUIRE(cli({"authorize", "--weights-in", auth.string(), "--key", key.string(),
               "--weights-out", back.string(), "--inverse"})
              .code == kExitOk);
  CHECK_FALSE(load_stack(auth) == load_stack(cloud));
  CHECK(read_file(back) == read_file(cloud));
}

TEST_CASE("vanilla and row-shuffle metrics differ only in the mode") {
  TempDir dir;
  json c = base_config();
  c["metrics"] = "vanilla.jsonl";
  fs::path cfg_v = write_config(dir, c, "v.json");
  c["train"]["mode"] = "row_shuffle";
  c["metrics"] = "rs.jsonl";
  c["key"] = "k.json";
  fs::path cfg_r = write_config(dir, c, "r.json");
  REQUIRE(cli({"keygen", "-c", cfg_r.string(), "-o", (dir.path / "k.json").string()}).code == 0);
  REQUIRE(cli({"train", "-c", cfg_v.string()}).code == kExitOk);
  REQUIRE(cli({"train", "-c", cfg_r.string()}).code == kExitOk);

  std::ifstream fv(dir.path / "vanilla.jsonl"), fr(dir.path / "rs.jsonl");
  std::stringstream sv, sr;
  sv << fv.rdbuf();
  sr << fr.rdbuf();
  auto lv = lines_of(sv.str()), lr = lines_of(sr.str());
  REQUIRE(lv.size() == lr.size());
  REQUIRE(lv.size() == 5 + 1);  // 36 training samples in batches of 8, then the summary
  for (std::size_t i = 0; i < lv.size(); ++i) {
    json a = json::parse(lv[i]), b = json::parse(lr[i]);
    CHECK(a["mode"] == "vanilla");
    CHECK(b["mode"] == "row_shuffle");
    a.erase("mode");
    b.erase("mode");
    if (a.contains("loss")) {
      CHECK(std::abs(a["loss"].get<double>() - b["loss"].get<double>()) < 1e-10);
      a.erase("loss");
      b.erase("loss");
    }
    CHECK(a == b);
  }
}

TEST_CASE("exit codes") {
  TempDir dir;
  CHECK(cli({"verify", "--only", ""}).code == kExitUsage);
  CHECK(cli({"verify", "--only", "no.such"}).code == kExitUsage);
  CHECK(cli({"bogus"}).code == kExitUsage);
  CHECK(cli({"info", "-c", (dir.path / "missing.json").string()}).code == kExitIo);

  json c = base_config();
  c["train"]["mode"] = "row_shuffle";
  c["key"] = "absent.json";
  CHECK(cli({"train", "-c", write_config(dir, c).string()}).code == kExitIo);

  c.erase("key");
  CHECK(cli({"train", "-c", write_config(dir, c).string()}).code == kExitUsage);

  c = base_config();
  c["train"]["lr"] = "fast";
  CliResult bad = cli({"train", "-c", write_config(dir, c).string()});
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("train.lr") != std::string::npos);
}

TEST_CASE("verify from the installed binary") {
  auto run = [](const std::string& args) {
    int status = std::system((std::string(PESL_BIN) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  CHECK(run("verify --effort 0.2") == 0);
  CHECK(run("verify --effort 0.2 --corrupt-conjugation --only encoder.forward_equivalence") == 1);
  CHECK(run("verify --only ''") == 2);

  std::ostringstream out, err;
  run_cli({"verify", "--effort", "0.2", "--corrupt-conjugation", "--only",
           "encoder.forward_equivalence,encoder.gradient_conjugation"},
          out, err);
  json doc = json::parse(out.str());
  CHECK(doc["passed"] == false);
  for (const auto& p : doc["properties"]) CHECK(p["passed"] == false);
}
