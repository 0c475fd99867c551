#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "silencio/cli.hpp"
#include "silencio/errors.hpp"
#include "test_support.hpp"

using namespace silencio;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "silencio");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

json quick_config() {
  cli::RunConfig c;
  c.corpus = testing::small_corpus_config();
  c.train.epochs_per_iteration = 3;
  c.train.switch_epoch = 1;
  c.train.batch_size = 4;
  c.train.pretrain_epochs = 2;
  c.train.iterations = 2;
  c.train.n_segments = 2;
  c.train.seg_len = 5;
  c.probe.epochs = 2;
  c.ablation_seeds = {1, 2};
  return c;
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

}  // namespace

TEST_CASE("run config json round trip and strictness") {
  testing::TempDir dir("config");
  const json j = quick_config();
  spit(dir / "ok.json", j.dump());
  const auto loaded = cli::load_run_config(dir / "ok.json");
  CHECK(json(loaded) == j);
  CHECK(cli::load_run_config(std::nullopt).train == train::TrainConfig{});

  json unknown = j;
  unknown["train"]["epochz"] = 3;
  spit(dir / "unknown.json", unknown.dump());
  try {
    cli::load_run_config(dir / "unknown.json");
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("epochz") != std::string::npos);
  }

  spit(dir / "broken.json", "{\"train\": ");
  CHECK_THROWS_AS(cli::load_run_config(dir / "broken.json"), UsageError);

  json invalid = j;
  invalid["train"]["switch_epoch"] = 99;
  spit(dir / "invalid.json", invalid.dump());
  CHECK_THROWS_AS(cli::load_run_config(dir / "invalid.json"), UsageError);

  json seeded = j;
  seeded["seed"] = 17;
  spit(dir / "seeded.json", seeded.dump());
  const auto s = cli::load_run_config(dir / "seeded.json");
  CHECK(s.effective_corpus().seed == 17);
  CHECK(s.effective_train().seed == 17);
}

TEST_CASE("checkpoints round trip bitwise and reject malformed files") {
  testing::TempDir dir("ckpt");
  cli::Checkpoint ck{net::init_params(net::ModelDims{}, 9), json{{"stage", "test"}}};
  for (double& v : ck.params.encoder.tensors[net::enc::kFuseB].values()) v = 0.1 + 1e-17;
  cli::save_checkpoint(dir / "c.json", ck);
  const auto back = cli::load_checkpoint(dir / "c.json");
  CHECK(back.params == ck.params);
  CHECK(back.meta.at("stage") == "test");

  CHECK_THROWS_AS(cli::load_checkpoint(dir / "absent.json"), UsageError);
  spit(dir / "garbage.json", "not json");
  CHECK_THROWS_AS(cli::load_checkpoint(dir / "garbage.json"), FormatError);
  json j = json::parse(slurp(dir / "c.json"));
  j["dims"]["feature"] = 3;
  spit(dir / "shape.json", j.dump());
  CHECK_THROWS_AS(cli::load_checkpoint(dir / "shape.json"), FormatError);
}

TEST_CASE("exit codes") {
  testing::TempDir dir("exit");
  CHECK(run({}) == cli::kExitUsage);
  CHECK(run({"frobnicate"}) == cli::kExitUsage);
  CHECK(run({"gen"}) == cli::kExitUsage);
  CHECK(run({"gen", "--out", (dir / "c").string(), "--config", (dir / "none.json").string()}) ==
        cli::kExitUsage);

  json bad = quick_config();
  bad["corpus"]["colour"] = "red";
  spit(dir / "bad.json", bad.dump());
  CHECK(run({"gen", "--out", (dir / "c").string(), "--config", (dir / "bad.json").string()}) ==
        cli::kExitUsage);

  CHECK(run({"pretrain", "--corpus", (dir / "missing").string(), "--out", (dir / "p").string()}) ==
        cli::kExitUsage);
  std::filesystem::create_directories(dir / "corrupt");
  spit(dir / "corrupt/manifest.json", "{ truncated");
  CHECK(run({"pretrain", "--corpus", (dir / "corrupt").string(), "--out", (dir / "p").string()}) ==
        cli::kExitData);

  spit(dir / "quick.json", quick_config().dump());
  REQUIRE(run({"gen", "--out", (dir / "c").string(), "--config", (dir / "quick.json").string()}) == 0);
  CHECK(run({"eval", "--corpus", (dir / "c").string(), "--checkpoint", (dir / "nope.json").string(),
             "--out", (dir / "e").string()}) == cli::kExitUsage);

  json explode = quick_config();
  explode["train"]["learning_rate"] = 1e300;
  spit(dir / "explode.json", explode.dump());
  CHECK(run({"pretrain", "--corpus", (dir / "c").string(), "--out", (dir / "p").string(), "--config",
             (dir / "explode.json").string()}) == cli::kExitNumeric);
}

TEST_CASE("gen, pretrain, train and eval end to end") {
  testing::TempDir dir("pipeline");
  spit(dir / "quick.json", quick_config().dump());
  const std::string cfg = (dir / "quick.json").string();
  const std::string corpus = (dir / "corpus").string();

  REQUIRE(run({"gen", "--config", cfg, "--out", corpus}) == 0);
  REQUIRE(run({"gen", "--config", cfg, "--out", (dir / "corpus2").string()}) == 0);
  CHECK(slurp(dir / "corpus/manifest.json") == slurp(dir / "corpus2/manifest.json"));
  CHECK(corpus::load_corpus(corpus) == corpus::generate_corpus(testing::small_corpus_config()));

  REQUIRE(run({"pretrain", "--config", cfg, "--corpus", corpus, "--out", (dir / "pre").string()}) == 0);
  CHECK(std::filesystem::exists(dir / "pre/checkpoint.json"));
  CHECK(first_line(slurp(dir / "pre/loss.csv")) == "iteration,epoch,recon_s,recon_v,disc,lambda,total");

  const std::string ck = (dir / "pre/checkpoint.json").string();
  REQUIRE(run({"train", "--config", cfg, "--corpus", corpus, "--checkpoint", ck, "--out",
               (dir / "full").string()}) == 0);
  const auto out = dir / "full";
  CHECK(first_line(slurp(out / "trace.csv")) ==
        "iteration,silent_mse,vocalized_mse,pseudo_fidelity,alignment_error");
  const std::string loss = slurp(out / "loss.csv");
  CHECK(std::count(loss.begin(), loss.end(), '\n') == 1 + 2 * 3);
  for (const char* it : {"iter1", "iter2"}) {
    CHECK(std::filesystem::exists(out / it / "checkpoint.json"));
    CHECK(std::filesystem::exists(out / it / "eval" / "aggregate.csv"));
  }

  REQUIRE(run({"eval", "--corpus", corpus, "--checkpoint", (out / "iter2/checkpoint.json").string(),
               "--out", (dir / "e1").string()}) == 0);
  REQUIRE(run({"eval", "--corpus", corpus, "--checkpoint", (out / "iter2/checkpoint.json").string(),
               "--out", (dir / "e2").string()}) == 0);
  CHECK(slurp(dir / "e1/per_utterance.csv") == slurp(dir / "e2/per_utterance.csv"));
  CHECK(slurp(dir / "e1/per_utterance.csv") == slurp(out / "iter2/eval/per_utterance.csv"));

  REQUIRE(run({"train", "--config", cfg, "--corpus", corpus, "--checkpoint", ck, "--out",
               (dir / "full2").string()}) == 0);
  CHECK(slurp(out / "iter2/checkpoint.json") == slurp(dir / "full2/iter2/checkpoint.json"));

  REQUIRE(run({"train", "--config", cfg, "--corpus", corpus, "--checkpoint", ck, "--out",
               (dir / "base").string(), "--mode", "baseline"}) == 0);
  CHECK(std::filesystem::exists(dir / "base/iter1/checkpoint.json"));
  CHECK_FALSE(std::filesystem::exists(dir / "base/iter2"));
  CHECK(run({"train", "--config", cfg, "--corpus", corpus, "--checkpoint", ck, "--out",
             (dir / "x").string(), "--mode", "sideways"}) == cli::kExitUsage);
}

TEST_CASE("ablate writes the mode table") {
  testing::TempDir dir("ablate");
  spit(dir / "quick.json", quick_config().dump());
  const std::string cfg = (dir / "quick.json").string();
  REQUIRE(run({"gen", "--config", cfg, "--out", (dir / "corpus").string()}) == 0);
  REQUIRE(run({"ablate", "--config", cfg, "--corpus", (dir / "corpus").string(), "--out",
               (dir / "ab").string()}) == 0);
  const std::string table = slurp(dir / "ab/ablation.csv");
  CHECK(first_line(table) == "speech_mode,mode,mse_median,mcd_median,probe_accuracy_median,n_seeds,seeds");
  CHECK(std::count(table.begin(), table.end(), '\n') == 1 + 8);
  CHECK(table.find("silent,full,") != std::string::npos);
  CHECK(table.find("vocalized,baseline,") != std::string::npos);
  CHECK(first_line(slurp(dir / "ab/per_speaker.csv")) == "speaker_id,baseline_mse,full_mse");
  CHECK(first_line(slurp(dir / "ab/per_speaker_fit.csv")) == "slope,intercept,n");
  CHECK(std::filesystem::exists(dir / "ab/runs/seed1_no_dat"));
}
