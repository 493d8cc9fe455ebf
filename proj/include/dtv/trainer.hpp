#pragma once

// Symmetric in-batch contrastive training with AdamW and global-norm clipping.

#include "dtv/corpus.hpp"
#include "dtv/metrics.hpp"
#include "dtv/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dtv {

/// `log_softmax`: mean negative log-probability of the matched pair.
/// `probability`: mean negative probability, no log.
enum class LossForm { log_softmax, probability };

LossForm parse_loss_form(std::string_view text);
std::string_view to_string(LossForm form);

/// Dialogue-to-video direction: softmax over each row of S.
ag::Tensor loss_d2v(const ag::Tensor& scores, LossForm form = LossForm::log_softmax);
/// Video-to-dialogue direction: softmax over each column of S.
ag::Tensor loss_v2d(const ag::Tensor& scores, LossForm form = LossForm::log_softmax);
/// (L_d2v + L_v2d) / 2 over a square batch score matrix whose diagonal holds
/// the matched pairs.
ag::Tensor contrastive_loss(const ag::Tensor& scores, LossForm form = LossForm::log_softmax);

/// Scales all gradients by max_norm / norm when their global L2 norm exceeds
/// max_norm. Returns the norm before clipping. Throws NonFiniteError on NaN
/// or infinite gradients, leaving them untouched.
double clip_grad_norm(std::span<ag::Tensor> params, double max_norm);

struct AdamWConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
};

/// One decoupled-weight-decay Adam update using each parameter's current gradient.
void adamw_step(std::span<ag::Tensor> params, OptimizerState& state, const AdamWConfig& config);

struct TrainConfig {
  double learning_rate = 1e-5;
  int epochs = 10;
  std::size_t batch_size = 16;
  double max_grad_norm = 1.0;
  double adamw_epsilon = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  int patience = 1;
  LossForm loss_form = LossForm::log_softmax;
  /// Cut every query to its first `rounds` turns for training and
  /// validation; 0 keeps all turns.
  Index rounds = 0;
  /// Optional JSON-lines epoch log.
  std::optional<std::filesystem::path> log_path;

  void validate() const;
  AdamWConfig optimizer() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  MetricSummary validation;
  double grad_norm_mean = 0;
};

std::string to_json_line(const EpochRecord& record);

/// Tracks the best validation score; a degradation is a score strictly
/// below the best seen so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Returns true when this epoch is a new best.
  bool observe(double metric);
  bool should_stop() const { return degradations_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int degradations_ = 0;
  double best_ = -1.0;
};

struct TrainResult {
  ModelParams best;
  int best_epoch = 0;
  std::vector<EpochRecord> log;
  bool early_stopped = false;
  bool diverged = false;
  std::string diagnostic;
};

/// Replaces the validation evaluation; receives the current params and epoch.
using ValidationFn = std::function<MetricSummary(const ModelParams&, int)>;

/// Trains a copy of `init`. Shuffles training pairs every epoch, takes
/// batch_size-sized batches (a remainder smaller than 2 is dropped), evaluates
/// validation R@1 after every epoch and returns the best snapshot.
TrainResult train(const TrainConfig& config, const Split& train_split, const Split& validation_split,
                  const ModelParams& init, const ValidationFn& validate = {});

/// Loss of one batch (matched pairs on the diagonal), graph attached.
ag::Tensor batch_loss(const ModelParams& params, std::span<const DialogueQuery> queries,
                      std::span<const VideoRecord> videos, LossForm form = LossForm::log_softmax);

}  // namespace dtv
