#pragma once

// Planted-correspondence synthetic corpora.
//
// Each video owns a latent vector z. Frames and dialogue turns live in one
// shared embedding space through a fixed random projection P:
//   frame j   = P z + noise
//   turn i    = P (z restricted to slice i) + noise        (per_turn)
//   prefix i  = P (z restricted to slices 1..i) + noise    (cumulative_prefix)
// Slices are disjoint, so every extra turn reveals strictly more of z. Rows
// are L2-normalized, like the outputs of a contrastive image/text encoder.

#include "dtv/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dtv {

struct SyntheticConfig {
  std::size_t train_videos = 512;
  std::size_t validation_videos = 128;
  std::size_t test_videos = 128;
  Index frames = 8;
  Index turns = 10;
  Index dim = 32;
  Index latent_dim = 20;
  /// Noise norm relative to the full latent signal norm.
  double noise_sigma = 0.3;
  /// Share of latent dimensions each turn reveals; empty means 1/turns each.
  std::vector<double> turn_fractions;
  DialogueMode mode = DialogueMode::cumulative_prefix;
  std::string name = "synthetic";

  void validate() const;
  std::vector<double> resolved_fractions() const;
  /// Noise level below which the full dialogue's revealed signal outweighs
  /// the noise (sqrt of the revealed fraction).
  double retrievable_noise_threshold() const;
};

struct SyntheticCorpus {
  Split train, validation, test;
  /// d x latent_dim projection shared by both modalities.
  Matrix projection;
  /// Latent per video id, in split order train, validation, test.
  std::vector<Vector<double>> latents;
  std::vector<std::string> warnings;
};

SyntheticCorpus generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

/// Writes one DTVE file per split per modality plus manifest.json under
/// `out_dir`; returns the manifest.
CorpusManifest write_synthetic(const SyntheticCorpus& corpus, const SyntheticConfig& config, std::uint64_t seed,
                               const std::filesystem::path& out_dir);

}  // namespace dtv
