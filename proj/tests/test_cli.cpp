#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "mfg/artifacts.hpp"

using namespace mfg;
namespace fs = std::filesystem;

namespace {

const char* kCli = MFG_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = std::string(kCli) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path work_root() {
  const fs::path dir = fs::temp_directory_path() / "mfg_cli_tests";
  return dir;
}

// Small-but-real configuration shared by the CLI tests: short schedule,
// 64-point shapes, quick training.
const std::string kSmall =
    " --set points_per_shape=64 --set schedule.T=60 --set schedule.beta_end=0.35";

struct Pipeline {
  fs::path root = work_root();

  Pipeline() {
    static bool prepared = false;
    if (prepared) return;
    fs::remove_all(root);
    fs::create_directories(root);
    REQUIRE(run("gen-corpus --out " + (root / "a").string() + kSmall +
                " --set corpus.count=21 --set seed=3") == 0);
    REQUIRE(run("train --out " + (root / "a").string() + kSmall +
                " --set corpus.dir=" + (root / "a" / "gen-corpus").string() +
                " --set train.steps=120 --set train.batch=4 --set train.log_every=40" +
                " --set seed=3") == 0);
    prepared = true;
  }

  std::string checkpoint() const { return (root / "a" / "train" / "checkpoint.bin").string(); }
};

}  // namespace

TEST_CASE("cli: identical seeds reproduce identical sample bytes") {
  Pipeline pipe;
  const std::string args = kSmall + " --set sample.checkpoint=" + pipe.checkpoint() +
                           " --set sample.count=2 --set seed=11";
  REQUIRE(run("sample --out " + (pipe.root / "s1").string() + args) == 0);
  REQUIRE(run("sample --out " + (pipe.root / "s2").string() + args) == 0);
  for (const char* name : {"sample_0000.json", "sample_0001.json"}) {
    const std::string a =
        read_text_file(pipe.root / "s1" / "sample" / "samples" / name);
    const std::string b =
        read_text_file(pipe.root / "s2" / "sample" / "samples" / name);
    CHECK(a == b);
  }
  CHECK(fs::exists(pipe.root / "s1" / "sample" / "resolved_config.json"));
  CHECK(fs::exists(pipe.root / "s1" / "sample" / "manifest.json"));
}

TEST_CASE("cli: co-design with zero mcmc steps equals plain sampling") {
  Pipeline pipe;
  const std::string common = kSmall + " --set seed=17 --set task.name=crawling";
  REQUIRE(run("sample --out " + (pipe.root / "p").string() + common +
              " --set sample.checkpoint=" + pipe.checkpoint() +
              " --set sample.count=1 --set sample.guidance=2.0") == 0);
  REQUIRE(run("codesign --out " + (pipe.root / "c").string() + common +
              " --set codesign.checkpoint=" + pipe.checkpoint() +
              " --set codesign.count=1 --set codesign.mcmc_steps=0" +
              " --set codesign.compare_plain=false") == 0);
  const json plain =
      read_json_file(pipe.root / "p" / "sample" / "samples" / "sample_0000.json");
  const json codesign =
      read_json_file(pipe.root / "c" / "codesign" / "samples" / "sample_0000.json");
  CHECK(plain.at("points").dump() == codesign.at("points").dump());
}

TEST_CASE("cli: evaluate reproduces its metrics bit-for-bit") {
  Pipeline pipe;
  REQUIRE(run("sample --out " + (pipe.root / "e").string() + kSmall +
              " --set sample.checkpoint=" + pipe.checkpoint() +
              " --set sample.count=2 --set seed=4") == 0);
  const std::string samples = (pipe.root / "e" / "sample" / "samples").string();
  REQUIRE(run("evaluate --out " + (pipe.root / "e1").string() +
              " --set evaluate.samples=" + samples + " --set task.name=crawling") == 0);
  REQUIRE(run("evaluate --out " + (pipe.root / "e2").string() +
              " --set evaluate.samples=" + samples + " --set task.name=crawling") == 0);
  CHECK(read_text_file(pipe.root / "e1" / "evaluate" / "metrics.csv") ==
        read_text_file(pipe.root / "e2" / "evaluate" / "metrics.csv"));
}

TEST_CASE("cli: exit codes distinguish config errors from missing artifacts") {
  Pipeline pipe;
  // Missing checkpoint -> 2.
  CHECK(run("sample --out " + (pipe.root / "x").string() + kSmall +
            " --set sample.checkpoint=/nonexistent/ckpt.bin") == 2);
  // No checkpoint configured at all -> 2.
  CHECK(run("sample --out " + (pipe.root / "x").string() + kSmall) == 2);
  // Unknown task name -> 1.
  CHECK(run("evaluate --out " + (pipe.root / "x").string() +
            " --set evaluate.samples=" + (pipe.root / "a").string() +
            " --set task.name=flying") == 1);
  // Missing config file -> 2.
  CHECK(run("sample --config /nonexistent/config.json") == 2);
  // Invalid schedule -> 1.
  CHECK(run("sample --out " + (pipe.root / "x").string() +
            " --set sample.checkpoint=" + pipe.checkpoint() +
            " --set schedule.T=10") == 1);
}
