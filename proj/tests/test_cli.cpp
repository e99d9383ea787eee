#include <sstream>

#include "doctest.h"
#include "dyadfuse/cli.hpp"
#include "dyadfuse/config.hpp"
#include "dyadfuse/data.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace dyadfuse;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Writes a small synthetic dataset plus a config sized for it; returns the config path.
std::string small_setup(const testutil::TempDir& dir) {
  const Run gen = cli({"synth-gen", "--out", (dir / "data").string(), "--listeners", "2", "--frames", "500",
                       "--speaker-dim", "6", "--listener-dim", "4", "--segment-len", "50", "--seed", "3"});
  REQUIRE(gen.code == 0);
  RunConfig rc;
  rc.manifest = (dir / "data" / "manifest.json").string();
  rc.model = testutil::tiny_model();
  rc.train = testutil::tiny_train(1, 2);
  const auto path = dir / "config.json";
  save_run_config(path, rc);
  return path.string();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth-gen writes a deterministic dataset") {
  testutil::TempDir dir;
  const Run a = cli({"synth-gen", "--out", (dir / "a").string(), "--listeners", "4", "--frames", "3000", "--seed", "7"});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("dyads=4") != std::string::npos);
  CHECK(a.out.back() == '\n');
  const DyadDataset ds = load_manifest(dir / "a" / "manifest.json");
  CHECK(ds.dyads.size() == 4);
  CHECK(ds.dyads[0].speaker.frames() == 3000);

  REQUIRE(cli({"synth-gen", "--out", (dir / "b").string(), "--listeners", "4", "--frames", "3000", "--seed", "7"})
              .code == 0);
  CHECK(testutil::read_text(dir / "a" / "dyad2_listener.csv") == testutil::read_text(dir / "b" / "dyad2_listener.csv"));
  CHECK(testutil::read_text(dir / "a" / "manifest.json") == testutil::read_text(dir / "b" / "manifest.json"));
}

TEST_CASE("usage errors exit with code 2") {
  testutil::TempDir dir;
  const Run bad = cli({"synth-gen", "--out", (dir / "x").string(), "--coupling", "0.5,1.5"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("--coupling") != std::string::npos);
  CHECK(cli({"synth-gen", "--out", (dir / "x").string(), "--bogus"}).code == 2);
  CHECK(cli({"synth-gen"}).code == 2);
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"ablate", "--manifest", "m.json", "--out", "o", "--component", "dropout"}).code == 2);
  CHECK(cli({"evaluate", "--ckpt", "c", "--split", "holdout"}).code == 2);
}

TEST_CASE("help lists flags with defaults") {
  const Run top = cli({"--help"});
  CHECK(top.code == 0);
  CHECK(top.out.find("synth-gen") != std::string::npos);
  const Run h = cli({"causality", "--help"});
  CHECK(h.code == 0);
  CHECK(h.out.find("--segment-len") != std::string::npos);
  CHECK(h.out.find("100") != std::string::npos);
  CHECK(h.out.find("0.99") != std::string::npos);
  const Run t = cli({"train", "--help"});
  CHECK(t.out.find("--epochs") != std::string::npos);
  CHECK(t.out.find("40") != std::string::npos);
  CHECK(cli({"config", "print-default", "--help"}).code == 0);
}

TEST_CASE("config print-default emits the full default config") {
  const Run r = cli({"config", "print-default"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(to_json(run_config_from_json(j)) == to_json(RunConfig{}));
}

TEST_CASE("causality command writes weights and validates shapes") {
  testutil::TempDir dir;
  std::mt19937_64 rng(1);
  write_feature_csv(dir / "s.csv", FeatureMatrix(testutil::gaussian(rng, 250, 6)), "s");
  write_feature_csv(dir / "l.csv", FeatureMatrix(testutil::gaussian(rng, 250, 4)), "l");
  write_feature_csv(dir / "short.csv", FeatureMatrix(testutil::gaussian(rng, 249, 4)), "l");
  const std::string s = (dir / "s.csv").string(), l = (dir / "l.csv").string();

  const Run ok = cli({"causality", "--speaker", s, "--listener", l, "--segment-len", "100", "--out",
                      (dir / "w.csv").string()});
  REQUIRE(ok.code == 0);
  CHECK(ok.out.find("segments=3") != std::string::npos);
  CHECK(ok.out.find("last_len=50") != std::string::npos);
  const std::string w = testutil::read_text(dir / "w.csv");
  CHECK(std::count(w.begin(), w.end(), '\n') == 4);

  CHECK(cli({"causality", "--speaker", s, "--listener", (dir / "short.csv").string(), "--out",
             (dir / "w2.csv").string()})
            .code == 4);
  CHECK(cli({"causality", "--speaker", s, "--listener", l, "--segment-len", "1", "--out", (dir / "w3.csv").string()})
            .code == 2);
  CHECK(cli({"causality", "--speaker", (dir / "nope.csv").string(), "--listener", l, "--out",
             (dir / "w4.csv").string()})
            .code == 3);
}

TEST_CASE("train then evaluate") {
  testutil::TempDir dir;
  const std::string cfg = small_setup(dir);
  const std::string out = (dir / "run").string();
  const Run t = cli({"train", "--config", cfg, "--out", out, "--seed", "5"});
  REQUIRE(t.code == 0);
  CHECK(t.out.rfind("train status=ok", 0) == 0);
  for (const char* f : {"best.ckpt", "final.ckpt", "history.csv", "effective_config.json", "weights_dyad0.csv"})
    CHECK(std::filesystem::exists(dir / "run" / f));
  const RunConfig echoed = load_run_config(dir / "run" / "effective_config.json");
  CHECK(echoed.train.seed == 5);
  CHECK(echoed.train.epochs == 2);

  const Run e = cli({"evaluate", "--ckpt", out + "/best.ckpt", "--split", "test"});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("ccc_c=") != std::string::npos);
  CHECK(e.out.find("ccc_w=") != std::string::npos);
  CHECK(cli({"evaluate", "--ckpt", out + "/best.ckpt"}).out == e.out);

  // Rerunning with the same flags reproduces the history byte for byte.
  REQUIRE(cli({"train", "--config", cfg, "--out", (dir / "run2").string(), "--seed", "5"}).code == 0);
  CHECK(testutil::read_text(dir / "run" / "history.csv") == testutil::read_text(dir / "run2" / "history.csv"));

  CHECK(cli({"evaluate", "--ckpt", (dir / "missing.ckpt").string()}).code == 3);
  CHECK(cli({"train", "--config", cfg, "--out", out, "--epochs", "0"}).code == 2);
  CHECK(cli({"train", "--out", out}).code == 2);
}

TEST_CASE("ablate runs paired trainings per seed") {
  testutil::TempDir dir;
  const std::string cfg = small_setup(dir);
  const Run r = cli({"ablate", "--config", cfg, "--out", (dir / "abl").string(), "--component", "kd", "--seeds",
                     "1,2,3", "--epochs", "1"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("runs=6") != std::string::npos);
  const std::string csv = testutil::read_text(dir / "abl" / "results.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 6 + 2);
  CHECK(csv.find("ablated,kd,3,") != std::string::npos);
  CHECK(cli({"ablate", "--config", cfg, "--out", (dir / "abl2").string(), "--component", "se", "--seeds", "1,x"})
            .code == 2);
}

TEST_CASE("gradcheck exit status") {
  const Run r = cli({"gradcheck", "--seed", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("pass=1") != std::string::npos);
  CHECK(cli({"gradcheck", "--seed", "1", "--tolerance", "1e-14"}).code == 5);
}

}  // TEST_SUITE
