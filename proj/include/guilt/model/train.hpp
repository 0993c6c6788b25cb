#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "guilt/annotation/store.hpp"
#include "guilt/model/model.hpp"
#include "guilt/model/optim.hpp"

namespace guilt::model {

struct TrainConfig {
  Pooling pooling = Pooling::MEAN;
  double lambda = 1.0;
  bool token_supervision = false;  // when false only the rating loss is optimized
  TokenHeadMode token_mode = TokenHeadMode::Linear;
  double learning_rate = 5e-5;
  std::size_t epochs = 5;
  double warmup_ratio = 0.1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 100;
  std::size_t max_steps = 0;  // overrides epochs when nonzero
  annotation::Question question = annotation::Question::ReaderPerception;
  AdamWConfig adam;
  double max_grad_norm = 1.0;
  bool oversample_tails = false;  // repeat examples outside the 10th-90th rating percentiles

  void validate() const;
};

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

struct TrainResult {
  std::vector<double> step_losses;   // joint loss per optimizer step
  std::vector<double> epoch_losses;  // mean step loss per pass over the data
  std::size_t steps = 0;
};

/// Called after every checkpoint_every-th step and after the final step.
using CheckpointFn = std::function<void(std::size_t step, const GuiltModel& model)>;

std::size_t steps_per_epoch(std::size_t examples, std::size_t batch_size);

/// Optimizes J_r + lambda J_t (J_r alone without token supervision) with AdamW
/// and a linear warmup/decay schedule. Throws TrainingDiverged on a non-finite loss.
TrainResult train(GuiltModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                  const CheckpointFn& on_checkpoint = {});

/// Loss terms and gradients for one batch; accumulates parameter gradients
/// into the model when `accumulate` is set.
struct BatchLoss {
  double rating = 0.0;
  double token = 0.0;
  double joint = 0.0;
};
BatchLoss batch_loss(GuiltModel& model, std::span<const TrainingExample* const> batch, double lambda,
                     bool token_supervision, bool accumulate, Rng* dropout_rng = nullptr);

/// Plain mean squared error of rating predictions.
double rating_mse(const GuiltModel& model, std::span<const TrainingExample> data);

}  // namespace guilt::model
