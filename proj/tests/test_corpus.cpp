#include "dtv/corpus.hpp"
#include "dtv/evaluate.hpp"
#include "dtv/synth.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>
#include <set>

namespace dtv {
namespace {

using testing::TempDir;

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

EmbeddingContainer sample_container(std::mt19937_64& rng) {
  EmbeddingContainer c;
  c.dim = 5;
  c.records.push_back({"alpha", testing::uniform_f(3, 5, rng)});
  c.records.push_back({"b\xc3\xa9ta", testing::uniform_f(1, 5, rng)});
  c.records.push_back({"gamma", testing::uniform_f(7, 5, rng)});
  return c;
}

ContainerError::Kind decode_error(const std::vector<char>& bytes, std::optional<Index> dim = {}) {
  try {
    decode_embeddings(bytes, dim);
  } catch (const ContainerError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return ContainerError::Kind::malformed;
}

TEST(EmbeddingContainer, RoundTripIsBitIdentical) {
  std::mt19937_64 rng(1);
  EmbeddingContainer c = sample_container(rng);
  c.records[0].rows(0, 0) = -0.0f;
  c.records[0].rows(1, 2) = std::numeric_limits<float>::denorm_min();
  TempDir dir;
  write_embeddings(dir / "x.dtve", c);
  const EmbeddingContainer back = read_embeddings(dir / "x.dtve", 5);
  ASSERT_EQ(back.records.size(), c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    EXPECT_EQ(back.records[i].id, c.records[i].id);
    ASSERT_EQ(back.records[i].rows.size(), c.records[i].rows.size());
    EXPECT_EQ(std::memcmp(back.records[i].rows.data(), c.records[i].rows.data(),
                          sizeof(float) * static_cast<std::size_t>(c.records[i].rows.size())),
              0);
  }
  EXPECT_EQ(encode_embeddings(back), slurp(dir / "x.dtve"));
}

TEST(EmbeddingContainer, HeaderLayout) {
  EmbeddingContainer c;
  c.dim = 2;
  c.records.push_back({"ab", EmbeddingMatrix::Constant(1, 2, 1.0f)});
  const std::vector<char> bytes = encode_embeddings(c);
  ASSERT_EQ(bytes.size(), 4u + 2 + 4 + 4 + 2 + 2 + 4 + 8);
  EXPECT_EQ(std::string(bytes.data(), 4), "DTVE");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 1);  // count
  EXPECT_EQ(bytes[10], 2);  // dim
}

TEST(EmbeddingContainer, EmptyIsValid) {
  EmbeddingContainer c;
  c.dim = 32;
  const EmbeddingContainer back = decode_embeddings(encode_embeddings(c));
  EXPECT_EQ(back.dim, 32);
  EXPECT_TRUE(back.records.empty());
}

TEST(EmbeddingContainer, CorruptMagicRejected) {
  std::mt19937_64 rng(2);
  std::vector<char> bytes = encode_embeddings(sample_container(rng));
  bytes[1] = 'X';
  EXPECT_EQ(decode_error(bytes), ContainerError::Kind::bad_magic);
}

TEST(EmbeddingContainer, UnknownVersionRejected) {
  std::mt19937_64 rng(3);
  std::vector<char> bytes = encode_embeddings(sample_container(rng));
  bytes[4] = 9;
  EXPECT_EQ(decode_error(bytes), ContainerError::Kind::bad_version);
}

TEST(EmbeddingContainer, EveryTruncationRejected) {
  std::mt19937_64 rng(4);
  const std::vector<char> bytes = encode_embeddings(sample_container(rng));
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    const std::vector<char> partial(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    const auto kind = decode_error(partial);
    EXPECT_TRUE(kind == ContainerError::Kind::truncated || (cut < 4 && kind == ContainerError::Kind::bad_magic))
        << "cut at " << cut;
  }
}

TEST(EmbeddingContainer, DimMismatchRejected) {
  std::mt19937_64 rng(5);
  EXPECT_EQ(decode_error(encode_embeddings(sample_container(rng)), 32), ContainerError::Kind::dim_mismatch);
}

TEST(EmbeddingContainer, TrailingBytesRejected) {
  std::mt19937_64 rng(6);
  std::vector<char> bytes = encode_embeddings(sample_container(rng));
  bytes.push_back(0);
  EXPECT_EQ(decode_error(bytes), ContainerError::Kind::malformed);
}

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
  return ids;
}

void expect_partition(const SplitAssignment& a, const std::vector<std::string>& ids) {
  std::set<std::string> all;
  for (const auto* part : {&a.train, &a.validation, &a.test}) {
    for (const auto& id : *part) EXPECT_TRUE(all.insert(id).second) << id << " assigned twice";
  }
  EXPECT_EQ(all, std::set<std::string>(ids.begin(), ids.end()));
}

TEST(SplitCorpus, DatasetShapedCounts) {
  const auto ids = make_ids(7985 + 863 + 1000);
  const SplitAssignment a = split_corpus(ids, SplitCounts{7985, 863, 1000}, 11);
  EXPECT_EQ(a.train.size(), 7985u);
  EXPECT_EQ(a.validation.size(), 863u);
  EXPECT_EQ(a.test.size(), 1000u);
  expect_partition(a, ids);
}

TEST(SplitCorpus, AllTrainRatio) {
  const auto ids = make_ids(37);
  const SplitAssignment a = split_corpus(ids, SplitRatios{1.0, 0.0, 0.0}, 3);
  EXPECT_EQ(a.train.size(), 37u);
  EXPECT_TRUE(a.validation.empty());
  EXPECT_TRUE(a.test.empty());
}

TEST(SplitCorpus, RatioRemainderGoesToTest) {
  const auto ids = make_ids(101);
  const SplitAssignment a = split_corpus(ids, SplitRatios{0.8, 0.1, 0.1}, 4);
  EXPECT_EQ(a.train.size() + a.validation.size() + a.test.size(), 101u);
  expect_partition(a, ids);
}

TEST(SplitCorpus, SeededAndDeterministic) {
  const auto ids = make_ids(500);
  const SplitAssignment a = split_corpus(ids, SplitRatios{}, 5);
  const SplitAssignment b = split_corpus(ids, SplitRatios{}, 5);
  const SplitAssignment c = split_corpus(ids, SplitRatios{}, 6);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, c.train);
}

TEST(SplitCorpus, ExplicitListsOverride) {
  const auto ids = make_ids(4);
  const SplitAssignment a = split_corpus(ids, ExplicitSplit{{"id3", "id0"}, {"id1"}, {"id2"}}, 0);
  EXPECT_EQ(a.train, (std::vector<std::string>{"id3", "id0"}));
  EXPECT_EQ(a.validation, (std::vector<std::string>{"id1"}));
}

TEST(SplitCorpus, ExplicitOverlapRejected) {
  const auto ids = make_ids(4);
  EXPECT_THROW(split_corpus(ids, ExplicitSplit{{"id0", "id1"}, {"id1"}, {}}, 0), std::invalid_argument);
  EXPECT_THROW(split_corpus(ids, ExplicitSplit{{"id9"}, {}, {}}, 0), std::invalid_argument);
}

TEST(SplitCorpus, DuplicateIdsAndOversizedCountsRejected) {
  EXPECT_THROW(split_corpus(std::vector<std::string>{"a", "a"}, SplitRatios{}, 0), std::invalid_argument);
  EXPECT_THROW(split_corpus(make_ids(3), SplitCounts{2, 2, 0}, 0), std::invalid_argument);
}

TEST(Manifest, OverlappingSplitsRejected) {
  CorpusManifest m;
  m.splits = {{"train", "a", "b", {"x", "y"}}, {"test", "c", "d", {"y"}}};
  EXPECT_THROW(m.validate(), std::invalid_argument);
}

TEST(MakeSplit, QueryWithoutVideoRejected) {
  std::vector<VideoRecord> videos{{"a", EmbeddingMatrix::Zero(1, 2)}};
  std::vector<DialogueQuery> queries{{"b", EmbeddingMatrix::Zero(1, 2), DialogueMode::per_turn}};
  EXPECT_THROW(make_split("s", videos, queries), std::invalid_argument);
}

SyntheticConfig small_synth() {
  SyntheticConfig c;
  c.train_videos = 20;
  c.validation_videos = 6;
  c.test_videos = 6;
  c.frames = 4;
  c.turns = 5;
  c.dim = 12;
  c.latent_dim = 10;
  return c;
}

TEST(Synthetic, SameSeedGivesByteIdenticalFiles) {
  TempDir a, b, c;
  write_synthetic(generate_synthetic(small_synth(), 7), small_synth(), 7, a.path());
  write_synthetic(generate_synthetic(small_synth(), 7), small_synth(), 7, b.path());
  write_synthetic(generate_synthetic(small_synth(), 8), small_synth(), 8, c.path());
  for (const char* name : {"manifest.json", "train_videos.dtve", "train_dialogues.dtve", "validation_videos.dtve",
                           "validation_dialogues.dtve", "test_videos.dtve", "test_dialogues.dtve"}) {
    EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
  }
  EXPECT_NE(slurp(a / "train_videos.dtve"), slurp(c / "train_videos.dtve"));
}

TEST(Synthetic, WrittenCorpusLoadsBack) {
  TempDir dir;
  const SyntheticCorpus corpus = generate_synthetic(small_synth(), 9);
  write_synthetic(corpus, small_synth(), 9, dir.path());
  const CorpusManifest m = load_manifest(dir / "manifest.json");
  EXPECT_EQ(m.embedding_dim, 12);
  EXPECT_EQ(m.mode, DialogueMode::cumulative_prefix);
  EXPECT_EQ(m.generator_seed, 9u);
  EXPECT_EQ(m.split(kTrain).ids.size(), 20u);
  const Split test = load_split(m, kTest);
  ASSERT_EQ(test.videos.size(), corpus.test.videos.size());
  for (std::size_t i = 0; i < test.videos.size(); ++i) {
    EXPECT_EQ(test.videos[i].video_id, corpus.test.videos[i].video_id);
    EXPECT_EQ(test.videos[i].frames, corpus.test.videos[i].frames);
    EXPECT_EQ(test.queries[i].turns, corpus.test.queries[i].turns);
  }
  EXPECT_EQ(test.gold, corpus.test.gold);
}

TEST(Synthetic, SplitsAreDisjointAndShaped) {
  const SyntheticConfig c = small_synth();
  const SyntheticCorpus corpus = generate_synthetic(c, 10);
  std::set<std::string> ids;
  for (const Split* s : {&corpus.train, &corpus.validation, &corpus.test}) {
    for (const auto& v : s->videos) {
      EXPECT_TRUE(ids.insert(v.video_id).second);
      EXPECT_EQ(v.frames.rows(), c.frames);
      EXPECT_EQ(v.frames.cols(), c.dim);
    }
    for (const auto& q : s->queries) EXPECT_EQ(q.turns.rows(), c.turns);
  }
  EXPECT_EQ(ids.size(), 32u);
}

TEST(Synthetic, ConfigValidation) {
  SyntheticConfig c = small_synth();
  c.latent_dim = 13;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_synth();
  c.noise_sigma = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_synth();
  c.turn_fractions = {0.5, 0.3, 0.3, 0.0, 0.0};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Synthetic, DegenerateConfigWarnsInsteadOfFailing) {
  SyntheticConfig c = small_synth();
  c.turn_fractions = {0, 0, 0, 0, 0};
  EXPECT_FALSE(generate_synthetic(c, 1).warnings.empty());
  c = small_synth();
  c.noise_sigma = 5.0;
  EXPECT_FALSE(generate_synthetic(c, 1).warnings.empty());
  EXPECT_TRUE(generate_synthetic(small_synth(), 1).warnings.empty());
}

TEST(Synthetic, NoiselessFirstTurnRetrievesPerfectly) {
  for (DialogueMode mode : {DialogueMode::cumulative_prefix, DialogueMode::per_turn}) {
    SyntheticConfig c;
    c.noise_sigma = 0.0;
    c.mode = mode;
    c.turn_fractions.assign(10, 0.0);
    c.turn_fractions[0] = 1.0;
    const SyntheticCorpus corpus = generate_synthetic(c, 12);
    const Matrix s = raw_dot_product_scores(corpus.test, 1);
    EXPECT_EQ(recall_at_k(compute_ranks(s, corpus.test.gold, corpus.test.video_ids()), 1), 1.0);
  }
}

TEST(Synthetic, PrefixInformationGrowsWithTurns) {
  SyntheticConfig c;
  c.train_videos = 1000;
  c.validation_videos = 0;
  c.test_videos = 0;
  const SyntheticCorpus corpus = generate_synthetic(c, 13);
  std::vector<double> mean_cosine(static_cast<std::size_t>(c.turns), 0.0);
  for (std::size_t v = 0; v < 1000; ++v) {
    const Vector<double> target = corpus.projection * corpus.latents[v];
    const EmbeddingMatrix& turns = corpus.train.queries[v].turns;
    for (Index t = 0; t < c.turns; ++t) {
      const Vector<double> row = turns.row(t).cast<double>().transpose();
      mean_cosine[static_cast<std::size_t>(t)] += row.dot(target) / (row.norm() * target.norm()) / 1000.0;
    }
  }
  for (std::size_t t = 1; t < mean_cosine.size(); ++t) {
    EXPECT_GT(mean_cosine[t], mean_cosine[t - 1]) << "turn " << t + 1;
  }
}

TEST(Synthetic, DefaultCorpusBaselineBeatsChance) {
  const SyntheticConfig c;
  ASSERT_LT(c.noise_sigma, c.retrievable_noise_threshold());
  const SyntheticCorpus corpus = generate_synthetic(c, 7);
  const Matrix s = raw_dot_product_scores(corpus.test, c.turns);
  const double r1 = recall_at_k(compute_ranks(s, corpus.test.gold, corpus.test.video_ids()), 1);
  EXPECT_GT(r1, 10.0 / static_cast<double>(c.test_videos));
}

}  // namespace
}  // namespace dtv
