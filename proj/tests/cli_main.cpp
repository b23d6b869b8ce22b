#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace {

std::string cli() {
  const char* p = std::getenv("KANDINSKY_CLI");
  return p ? p : "./kandinsky";
}

int run(const std::string& args) {
  std::string cmd = cli() + " " + args + " >/dev/null 2>/dev/null";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

const std::string dir = "/tmp/kandinsky_cli";

struct Workspace {
  Workspace() {
    if (std::system(("rm -rf " + dir + " && mkdir -p " + dir).c_str()) != 0) std::abort();
    write_file(dir + "/synth.json",
               R"({"n_calib": 400, "n_test": 120, "p": 2, "k": 2, "structure": "overlapping",
                   "sigma_mult": [4.0, 1.0], "seed": 7})");
    write_file(dir + "/groups.json",
               R"({"kind": "indicator", "include_intercept": true,
                   "groups": [{"name": "g0", "all": [{"col": "x0", "op": "ge", "value": 0.0}]},
                              {"name": "g1", "all": [{"col": "x1", "op": "ge", "value": 0.0}]}]})");
  }
};

}  // namespace

TEST_CASE("synth is deterministic byte-for-byte") {
  Workspace ws;
  REQUIRE(run("synth --config " + dir + "/synth.json --out-calib " + dir + "/c1.csv --out-test " +
              dir + "/t1.csv") == 0);
  REQUIRE(run("synth --config " + dir + "/synth.json --out-calib " + dir + "/c2.csv --out-test " +
              dir + "/t2.csv") == 0);
  CHECK(slurp(dir + "/c1.csv") == slurp(dir + "/c2.csv"));
  CHECK(slurp(dir + "/t1.csv") == slurp(dir + "/t2.csv"));
  CHECK(slurp(dir + "/c1.csv").find("x0,x1,y,b0") == 0);
}

TEST_CASE("calibrate happy path writes a model and prints diagnostics") {
  Workspace ws;
  REQUIRE(run("synth --config " + dir + "/synth.json --out-calib " + dir + "/cal.csv --out-test " +
              dir + "/test.csv") == 0);
  CHECK(run("calibrate " + dir + "/cal.csv --method kandinsky --alpha 0.1 --groups " + dir +
            "/groups.json --scores abs_residual --jitter --seed 11 --timestamp off -o " + dir +
            "/model.json") == 0);
  auto model = slurp(dir + "/model.json");
  CHECK(model.find("kandinsky-model") != std::string::npos);
  CHECK(model.find("\"beta\"") != std::string::npos);
}

TEST_CASE("calibrate validation and io errors use distinct exit codes") {
  Workspace ws;
  REQUIRE(run("synth --config " + dir + "/synth.json --out-calib " + dir + "/cal.csv --out-test " +
              dir + "/t.csv") == 0);
  CHECK(run("calibrate " + dir + "/cal.csv --alpha 1.5 --scores abs_residual -o " + dir +
            "/m.json") == 2);
  CHECK(run("calibrate " + dir + "/does_not_exist.csv --scores abs_residual -o " + dir +
            "/m.json") == 1);
}

TEST_CASE("predict emits one json line per row, deterministically") {
  Workspace ws;
  REQUIRE(run("synth --config " + dir + "/synth.json --out-calib " + dir + "/cal.csv --out-test " +
              dir + "/test.csv") == 0);
  REQUIRE(run("calibrate " + dir + "/cal.csv --method kandinsky --groups " + dir +
              "/groups.json --scores abs_residual --jitter --seed 11 --timestamp off -o " + dir +
              "/model.json") == 0);
  REQUIRE(run("predict " + dir + "/model.json " + dir + "/test.csv -o " + dir + "/p1.jsonl") == 0);
  REQUIRE(run("predict " + dir + "/model.json " + dir + "/test.csv -o " + dir + "/p2.jsonl") == 0);
  auto p1 = slurp(dir + "/p1.jsonl");
  CHECK(p1 == slurp(dir + "/p2.jsonl"));
  CHECK(std::count(p1.begin(), p1.end(), '\n') == 120);
}

TEST_CASE("predict rejects arity mismatches with exit 2") {
  Workspace ws;
  REQUIRE(run("synth --config " + dir + "/synth.json --out-calib " + dir + "/cal.csv --out-test " +
              dir + "/test.csv") == 0);
  REQUIRE(run("calibrate " + dir + "/cal.csv --scores abs_residual --jitter --seed 3 -o " + dir +
              "/model.json") == 0);
  write_file(dir + "/bad.csv", "x0,x1,y,b0,b1\n0.0,0.0,1.0,0.5,0.5\n");
  CHECK(run("predict " + dir + "/model.json " + dir + "/bad.csv -o " + dir + "/bad.jsonl") == 2);
}

TEST_CASE("testtime prediction requires a calibration csv") {
  Workspace ws;
  REQUIRE(run("synth --config " + dir + "/synth.json --out-calib " + dir + "/cal.csv --out-test " +
              dir + "/test.csv") == 0);
  REQUIRE(run("calibrate " + dir + "/cal.csv --scores abs_residual --jitter --seed 3 -o " + dir +
              "/model.json") == 0);
  CHECK(run("predict " + dir + "/model.json " + dir + "/test.csv --method testtime -o " + dir +
            "/tt.jsonl") == 2);
  CHECK(run("predict " + dir + "/model.json " + dir + "/test.csv --method testtime --calibration " +
            dir + "/cal.csv -o " + dir + "/tt.jsonl") == 0);
}

TEST_CASE("evaluate on perfectly covering sets gives cd equal to alpha") {
  Workspace ws;
  write_file(dir + "/mini.csv", "x0,y,b0\n0.5,1.0,0.0\n-0.5,2.0,0.0\n");
  REQUIRE(run("calibrate " + dir + "/mini.csv --scores abs_residual --alpha 0.25 --seed 5 "
              "--timestamp off -o " +
              dir + "/mini_model.json") == 0);
  write_file(dir + "/mini_preds.jsonl",
             "{\"row\":0,\"intervals\":[[-10.0,10.0]],\"size\":20.0}\n"
             "{\"row\":1,\"intervals\":[[-10.0,10.0]],\"size\":20.0}\n");
  REQUIRE(run("evaluate " + dir + "/mini_preds.jsonl " + dir + "/mini.csv --model " + dir +
              "/mini_model.json --timestamp off -o " + dir + "/eval.json") == 0);
  auto rep = slurp(dir + "/eval.json");
  CHECK(rep.find("\"cd_mean\": 0.25") != std::string::npos);
  CHECK(rep.find("\"miscoverage_mean\": 0.0") != std::string::npos);
}

TEST_CASE("experiment runs end to end and is byte-stable") {
  Workspace ws;
  write_file(dir + "/exp.json", R"({
    "data": {"synth": {"n_calib": 300, "n_test": 150, "p": 2, "k": 2, "seed": 3}},
    "score": {"kind": "abs_residual", "jittered": true},
    "alpha": 0.1, "trials": 2, "seed": 5,
    "methods": [{"name": "kandinsky",
                 "groups": {"kind": "indicator", "include_intercept": true,
                            "groups": [{"name": "g0", "all": [{"col": "x0", "op": "ge", "value": 0.0}]},
                                       {"name": "g1", "all": [{"col": "x1", "op": "ge", "value": 0.0}]}]}},
                {"name": "split"}],
    "timestamp": false})");
  REQUIRE(run("experiment --config " + dir + "/exp.json -o " + dir + "/r1.json --tsv " + dir +
              "/r1.tsv") == 0);
  REQUIRE(run("experiment --config " + dir + "/exp.json -o " + dir + "/r2.json") == 0);
  CHECK(slurp(dir + "/r1.json") == slurp(dir + "/r2.json"));
  CHECK(slurp(dir + "/r1.tsv").find("kandinsky") != std::string::npos);
  CHECK(slurp(dir + "/r1.json").find("\"config\"") != std::string::npos);
}

TEST_CASE("KANDINSKY_SEED is the seed fallback") {
  Workspace ws;
  REQUIRE(run("synth --config " + dir + "/synth.json --out-calib " + dir + "/cal.csv --out-test " +
              dir + "/test.csv") == 0);
  auto run_env = [&](const std::string& args) {
    std::string cmd = "KANDINSKY_SEED=314 " + cli() + " " + args + " >/dev/null 2>/dev/null";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  };
  REQUIRE(run_env("calibrate " + dir + "/cal.csv --scores abs_residual --jitter --timestamp off "
                  "-o " + dir + "/env_model.json") == 0);
  REQUIRE(run("calibrate " + dir + "/cal.csv --scores abs_residual --jitter --seed 314 "
              "--timestamp off -o " + dir + "/flag_model.json") == 0);
  CHECK(slurp(dir + "/env_model.json") == slurp(dir + "/flag_model.json"));
}

TEST_CASE("experiment honors flag overrides over the config file") {
  Workspace ws;
  write_file(dir + "/exp2.json", R"({
    "data": {"synth": {"n_calib": 200, "n_test": 100, "p": 2, "k": 2}},
    "score": {"kind": "abs_residual", "jittered": true},
    "alpha": 0.1, "trials": 5, "seed": 5,
    "methods": [{"name": "split"}], "timestamp": false})");
  REQUIRE(run("experiment --config " + dir + "/exp2.json --trials 1 -o " + dir + "/r3.json") == 0);
  auto rep = slurp(dir + "/r3.json");
  CHECK(rep.find("\"trials\": 1") != std::string::npos);
}
