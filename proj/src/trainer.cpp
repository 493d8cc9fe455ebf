#include "dtv/trainer.hpp"

#include "dtv/evaluate.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace dtv {

LossForm parse_loss_form(std::string_view text) {
  if (text == "log_softmax") return LossForm::log_softmax;
  if (text == "probability") return LossForm::probability;
  throw ConfigError("unknown loss form '" + std::string(text) + "'");
}

std::string_view to_string(LossForm form) {
  return form == LossForm::log_softmax ? "log_softmax" : "probability";
}

ag::Tensor loss_d2v(const ag::Tensor& scores, LossForm form) {
  if (scores.rows() != scores.cols()) {
    throw DimensionError("contrastive loss needs a square score matrix, got " + shape_string(scores.value()));
  }
  const ag::Tensor matched = form == LossForm::log_softmax ? ag::diagonal(ag::log_softmax_rows(scores))
                                                           : ag::diagonal(ag::softmax_rows(scores));
  return ag::scale(ag::mean(matched), -1.0);
}

ag::Tensor loss_v2d(const ag::Tensor& scores, LossForm form) { return loss_d2v(ag::transpose(scores), form); }

ag::Tensor contrastive_loss(const ag::Tensor& scores, LossForm form) {
  return ag::scale(ag::add(loss_d2v(scores, form), loss_v2d(scores, form)), 0.5);
}

double clip_grad_norm(std::span<ag::Tensor> params, double max_norm) {
  double squared = 0.0;
  for (const auto& p : params) {
    if (p.has_grad()) squared += p.grad().squaredNorm();
  }
  const double norm = std::sqrt(squared);
  if (!std::isfinite(norm)) throw NonFiniteError("clip_grad_norm: gradient norm is not finite");
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (p.has_grad()) p.node()->grad *= factor;
    }
  }
  return norm;
}

void adamw_step(std::span<ag::Tensor> params, OptimizerState& state, const AdamWConfig& config) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adamw_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                         " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].rows() != params[i].rows() || state.first_moment[i].cols() != params[i].cols()) {
      throw DimensionError("adamw_step: state shape " + shape_string(state.first_moment[i]) +
                           " does not match parameter " + shape_string(params[i].value()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Tensor& p = params[i];
    const Matrix& g = p.grad();
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    Matrix& w = p.mutable_value();
    w *= 1.0 - config.learning_rate * config.weight_decay;
    const Matrix m_hat = m / correction1;
    const Matrix v_hat = v / correction2;
    w.array() -= config.learning_rate * m_hat.array() / (v_hat.array().sqrt() + config.epsilon);
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || epochs < 1 || !(max_grad_norm > 0) || !(adamw_epsilon > 0) || weight_decay < 0 ||
      patience < 1) {
    throw ConfigError("train config: learning rate, epochs, max grad norm, epsilon and patience must be positive");
  }
  if (batch_size < 2) throw ConfigError("train config: batch size must be at least 2 for a contrastive loss");
  if (rounds < 0) throw ConfigError("train config: rounds must be non-negative");
}

AdamWConfig TrainConfig::optimizer() const {
  AdamWConfig c;
  c.learning_rate = learning_rate;
  c.epsilon = adamw_epsilon;
  c.weight_decay = weight_decay;
  return c;
}

std::string to_json_line(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch},
                      {"train_loss", r.train_loss},
                      {"val_r1", r.validation.r1},
                      {"val_r5", r.validation.r5},
                      {"val_r10", r.validation.r10},
                      {"val_med", r.validation.median_rank},
                      {"val_mean", r.validation.mean_rank},
                      {"grad_norm_mean", r.grad_norm_mean}};
  return j.dump();
}

bool EarlyStopping::observe(double metric) {
  ++epoch_;
  if (epoch_ == 1 || metric > best_) {
    best_ = metric;
    best_epoch_ = epoch_;
    degradations_ = 0;
    return true;
  }
  if (metric < best_) ++degradations_;
  return false;
}

ag::Tensor batch_loss(const ModelParams& params, std::span<const DialogueQuery> queries,
                      std::span<const VideoRecord> videos, LossForm form) {
  return contrastive_loss(score_matrix(queries, videos, params), form);
}

TrainResult train(const TrainConfig& config, const Split& train_split, const Split& validation_split,
                  const ModelParams& init, const ValidationFn& validate) {
  config.validate();
  if (train_split.queries.size() < 2) throw std::invalid_argument("train: training split needs at least 2 pairs");
  if (!validate && validation_split.queries.empty()) throw std::invalid_argument("train: validation split is empty");

  std::ofstream log;
  if (config.log_path) {
    log.open(*config.log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write epoch log " + config.log_path->string());
  }

  ModelParams params = init.clone();
  std::vector<ag::Tensor> tensors = params.parameters();
  OptimizerState state;
  const AdamWConfig optimizer = config.optimizer();
  std::mt19937_64 rng(config.seed);
  EarlyStopping stopper(config.patience);

  TrainResult result;
  result.best = init.clone();

  std::vector<std::size_t> order(train_split.queries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_total = 0.0, norm_total = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<DialogueQuery> queries;
      std::vector<VideoRecord> videos;
      for (std::size_t i = start; i < end; ++i) {
        const auto& q = train_split.queries[order[i]];
        queries.push_back(config.rounds == 0 ? q : q.truncated(config.rounds));
        videos.push_back(train_split.videos[static_cast<std::size_t>(train_split.gold[order[i]])]);
      }
      try {
        const ag::Tensor loss = batch_loss(params, queries, videos, config.loss_form);
        if (!std::isfinite(loss.item())) throw NonFiniteError("loss is not finite");
        for (auto& t : tensors) t.zero_grad();
        ag::backward(loss);
        norm_total += clip_grad_norm(tensors, config.max_grad_norm);
        adamw_step(tensors, state, optimizer);
        loss_total += loss.item();
        ++steps;
      } catch (const NonFiniteError& e) {
        result.diverged = true;
        result.diagnostic = "epoch " + std::to_string(epoch) + ", step " + std::to_string(steps + 1) + ": " + e.what();
        return result;
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = steps ? loss_total / steps : 0.0;
    record.grad_norm_mean = steps ? norm_total / steps : 0.0;
    record.validation = validate ? validate(params, epoch) : evaluate(params, validation_split, config.rounds);
    result.log.push_back(record);
    if (log) log << to_json_line(record) << '\n' << std::flush;

    if (stopper.observe(record.validation.r1)) {
      result.best = params.clone();
      result.best_epoch = epoch;
    }
    if (stopper.should_stop()) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace dtv
