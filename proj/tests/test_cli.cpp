#include "dtv/checkpoint.hpp"
#include "dtv/evaluate.hpp"
#include "dtv/service.hpp"
#include "dtv/synth.hpp"
#include "dtv/trainer.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <string>

namespace dtv {
namespace {

int run(const std::string& args) {
  const std::string command = std::string(DTV_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  return std::system(command.c_str());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(slurp(p)); }

const char* kSmall = "--train 96 --val 32 --test 32";

TEST(Cli, SynthIsDeterministic) {
  testing::TempDir dir;
  ASSERT_EQ(run("synth --seed 7 " + std::string(kSmall) + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run("synth --seed 7 " + std::string(kSmall) + " --out " + (dir / "b").string()), 0);
  for (const char* f : {"train_videos.dtve", "train_dialogues.dtve", "test_videos.dtve", "test_dialogues.dtve"}) {
    ASSERT_TRUE(std::filesystem::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

// Per-turn input gives the untrained recurrence only a scrambled signal, so
// freshly initialized weights should retrieve at chance level.
TEST(Cli, UntrainedPerTurnNearChance) {
  testing::TempDir dir;
  const Index videos = 128;
  double total = 0;
  const int seeds = 5;
  for (int seed = 0; seed < seeds; ++seed) {
    const auto corpus = dir / ("c" + std::to_string(seed));
    ASSERT_EQ(run("synth --mode per_turn --train 2 --val 2 --test " + std::to_string(videos) + " --seed " +
                  std::to_string(seed) + " --out " + corpus.string()),
              0);
    ASSERT_EQ(run("eval --corpus " + (corpus / "manifest.json").string() + " --init-seed " + std::to_string(seed) +
                  " --out " + (dir / "r.json").string()),
              0);
    total += read_json(dir / "r.json")["r1"].get<double>();
  }
  const double p = 1.0 / videos;
  const double sd = std::sqrt(p * (1 - p) / (videos * seeds));
  EXPECT_LE(std::abs(total / seeds - p), 3 * sd + 1.0 / (videos * seeds));
}

TEST(Cli, TrainThenEvalMatchesLibrary) {
  testing::TempDir dir;
  ASSERT_EQ(run("synth --seed 3 " + std::string(kSmall) + " --out " + dir.path().string()), 0);
  const auto manifest_path = dir / "manifest.json";
  ASSERT_EQ(run("train --corpus " + manifest_path.string() + " --lr 1e-3 --epochs 3 --out " +
                (dir / "model.ckpt").string() + " --log " + (dir / "log.jsonl").string()),
            0);
  ASSERT_EQ(run("eval --corpus " + manifest_path.string() + " --checkpoint " + (dir / "model.ckpt").string() +
                " --out " + (dir / "r.json").string()),
            0);
  const nlohmann::json report = read_json(dir / "r.json");

  const CorpusManifest manifest = load_manifest(manifest_path);
  TrainConfig config;
  config.learning_rate = 1e-3;
  config.epochs = 3;
  const TrainResult result = train(config, load_split(manifest, "train"), load_split(manifest, "validation"),
                                   ModelParams::initialize(ModelConfig{}, 0));
  const ModelParams stored = deserialize_checkpoint(serialize_checkpoint(result.best));
  const MetricSummary m = evaluate(stored, load_split(manifest, "test"));
  EXPECT_EQ(report["r1"].get<double>(), m.r1);
  EXPECT_EQ(report["mean_rank"].get<double>(), m.mean_rank);
  EXPECT_EQ(report["num_queries"].get<std::size_t>(), m.num_queries);
  EXPECT_EQ(checkpoint_fingerprint(load_checkpoint(dir / "model.ckpt")), checkpoint_fingerprint(stored));

  ASSERT_EQ(run("export-report --corpus " + manifest_path.string() + " --checkpoint " +
                (dir / "model.ckpt").string() + " --out " + (dir / "full.json").string()),
            0);
  const nlohmann::json full = read_json(dir / "full.json");
  EXPECT_EQ(full["rounds_curve"].size(), 10u);
  EXPECT_EQ(full["r1"], report["r1"]);

  ASSERT_EQ(run("index --corpus " + manifest_path.string() + " --checkpoint " + (dir / "model.ckpt").string() +
                " --out " + (dir / "test.dtvi").string()),
            0);
  EXPECT_EQ(read_index(dir / "test.dtvi").ids.size(), 32u);
}

TEST(Cli, BadInvocationsFail) {
  testing::TempDir dir;
  EXPECT_NE(run("synth --bogus 1 --out " + dir.path().string()), 0);
  EXPECT_NE(run("eval --corpus " + (dir / "missing.json").string()), 0);
  EXPECT_NE(run("frobnicate"), 0);
  EXPECT_NE(run("serve"), 0);
}

}  // namespace
}  // namespace dtv
