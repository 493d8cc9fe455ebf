#include "dtv/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace dtv {

void SyntheticConfig::validate() const {
  if (frames < 1 || turns < 1 || dim < 1 || latent_dim < 1) {
    throw ConfigError("synthetic config: frames, turns, dim and latent_dim must be positive");
  }
  if (latent_dim > dim) throw ConfigError("synthetic config: latent_dim exceeds dim");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic config: noise_sigma must be non-negative");
  if (!turn_fractions.empty()) {
    if (static_cast<Index>(turn_fractions.size()) != turns) {
      throw ConfigError("synthetic config: need one turn fraction per turn");
    }
    double total = 0.0;
    for (double f : turn_fractions) {
      if (f < 0.0) throw ConfigError("synthetic config: negative turn fraction");
      total += f;
    }
    if (total > 1.0 + 1e-9) throw ConfigError("synthetic config: turn fractions sum above 1");
  }
}

std::vector<double> SyntheticConfig::resolved_fractions() const {
  if (!turn_fractions.empty()) return turn_fractions;
  return std::vector<double>(static_cast<std::size_t>(turns), 1.0 / static_cast<double>(turns));
}

double SyntheticConfig::retrievable_noise_threshold() const {
  const auto f = resolved_fractions();
  return std::sqrt(std::accumulate(f.begin(), f.end(), 0.0));
}

namespace {

// Latent index boundaries [begin_i, end_i) for each turn.
std::vector<std::pair<Index, Index>> slice_bounds(const SyntheticConfig& config) {
  std::vector<std::pair<Index, Index>> bounds;
  double cumulative = 0.0;
  Index begin = 0;
  for (double f : config.resolved_fractions()) {
    cumulative += f;
    const Index end = std::min<Index>(
        config.latent_dim, static_cast<Index>(std::llround(cumulative * static_cast<double>(config.latent_dim))));
    bounds.emplace_back(begin, std::max(begin, end));
    begin = std::max(begin, end);
  }
  return bounds;
}

void normalize_rows(Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) m.row(r) /= n;
  }
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Index rows, Index cols, double stddev) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal(rng);
    return m;
  };

  const Index d = config.dim;
  const Index k = config.latent_dim;
  const double noise_std = config.noise_sigma * std::sqrt(static_cast<double>(k) / static_cast<double>(d));
  const auto bounds = slice_bounds(config);

  SyntheticCorpus out;
  out.projection = gaussian(d, k, 1.0 / std::sqrt(static_cast<double>(d)));

  if (bounds.back().second == 0) out.warnings.push_back("dialogue turns reveal no latent dimensions");
  if (config.noise_sigma > config.retrievable_noise_threshold()) {
    out.warnings.push_back("noise_sigma exceeds the retrievable threshold; gold pairs may be unrecoverable");
  }

  std::size_t next_id = 0;
  auto make = [&](const std::string& name, std::size_t count) {
    std::vector<VideoRecord> videos;
    std::vector<DialogueQuery> queries;
    for (std::size_t v = 0; v < count; ++v) {
      char id[32];
      std::snprintf(id, sizeof id, "vid%05zu", next_id++);
      const Matrix z = gaussian(k, 1, 1.0);
      out.latents.push_back(z.col(0));

      const Vector<double> signal = out.projection * z.col(0);
      Matrix frames = gaussian(config.frames, d, noise_std);
      frames.rowwise() += signal.transpose();
      normalize_rows(frames);

      Matrix turns = gaussian(config.turns, d, noise_std);
      Vector<double> revealed = Vector<double>::Zero(k);
      for (Index t = 0; t < config.turns; ++t) {
        const auto [begin, end] = bounds[static_cast<std::size_t>(t)];
        if (config.mode == DialogueMode::per_turn) revealed.setZero();
        revealed.segment(begin, end - begin) = z.col(0).segment(begin, end - begin);
        turns.row(t) += (out.projection * revealed).transpose();
      }
      normalize_rows(turns);

      videos.push_back(VideoRecord{id, frames.cast<float>()});
      queries.push_back(DialogueQuery{id, turns.cast<float>(), config.mode});
    }
    return make_split(name, std::move(videos), std::move(queries));
  };
  out.train = make(std::string(kTrain), config.train_videos);
  out.validation = make(std::string(kValidation), config.validation_videos);
  out.test = make(std::string(kTest), config.test_videos);
  return out;
}

CorpusManifest write_synthetic(const SyntheticCorpus& corpus, const SyntheticConfig& config, std::uint64_t seed,
                               const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  CorpusManifest manifest;
  manifest.name = config.name;
  manifest.embedding_dim = config.dim;
  manifest.mode = config.mode;
  manifest.frames_per_video = config.frames;
  manifest.turns_per_dialogue = config.turns;
  manifest.generator_seed = seed;
  manifest.root = out_dir;
  for (const Split* split : {&corpus.train, &corpus.validation, &corpus.test}) {
    SplitEntry entry;
    entry.name = split->name;
    entry.videos_file = split->name + "_videos.dtve";
    entry.dialogues_file = split->name + "_dialogues.dtve";
    entry.ids = split->video_ids();
    write_split(out_dir / entry.videos_file, out_dir / entry.dialogues_file, *split, config.dim);
    manifest.splits.push_back(std::move(entry));
  }
  save_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace dtv
