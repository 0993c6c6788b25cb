#include "guilt/model/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "guilt/common/error.hpp"

namespace guilt::model {

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw InvalidInput("lambda must be nonnegative");
  if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
  if (batch_size == 0) throw InvalidInput("batch size must be positive");
  if (epochs == 0 && max_steps == 0) throw InvalidInput("no training steps requested");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw InvalidInput("warmup ratio must be in [0,1]");
  if (checkpoint_every == 0) throw InvalidInput("checkpoint interval must be positive");
}

Json to_json(const TrainConfig& c) {
  return Json{{"pooling", to_string(c.pooling)},
              {"lambda", c.lambda},
              {"token_supervision", c.token_supervision},
              {"token_mode", to_string(c.token_mode)},
              {"learning_rate", c.learning_rate},
              {"epochs", c.epochs},
              {"warmup_ratio", c.warmup_ratio},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"max_steps", c.max_steps},
              {"question", annotation::to_string(c.question)},
              {"adam_beta1", c.adam.beta1},
              {"adam_beta2", c.adam.beta2},
              {"adam_eps", c.adam.eps},
              {"weight_decay", c.adam.weight_decay},
              {"max_grad_norm", c.max_grad_norm},
              {"oversample_tails", c.oversample_tails},
              {"token_loss_normalization", "per_example_then_batch"}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  if (j.contains("pooling")) c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
  c.lambda = j.value("lambda", c.lambda);
  c.token_supervision = j.value("token_supervision", c.token_supervision);
  if (j.contains("token_mode")) c.token_mode = token_mode_from_string(j.at("token_mode").get<std::string>());
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.max_steps = j.value("max_steps", c.max_steps);
  if (j.contains("question")) c.question = annotation::question_from_string(j.at("question").get<std::string>());
  c.adam.beta1 = j.value("adam_beta1", c.adam.beta1);
  c.adam.beta2 = j.value("adam_beta2", c.adam.beta2);
  c.adam.eps = j.value("adam_eps", c.adam.eps);
  c.adam.weight_decay = j.value("weight_decay", c.adam.weight_decay);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.oversample_tails = j.value("oversample_tails", c.oversample_tails);
  return c;
}

std::size_t steps_per_epoch(std::size_t examples, std::size_t batch_size) {
  return (examples + batch_size - 1) / batch_size;
}

BatchLoss batch_loss(GuiltModel& model, std::span<const TrainingExample* const> batch, double lambda,
                     bool token_supervision, bool accumulate, Rng* dropout_rng) {
  const bool use_token = token_supervision && lambda > 0.0;
  std::vector<GuiltModel::Pass> passes;
  std::vector<double> preds, targets;
  std::vector<TokenTargets> tokens;
  passes.reserve(batch.size());
  for (const auto* ex : batch) {
    passes.push_back(model.forward_ids(ex->ids, accumulate, dropout_rng));
    preds.push_back(passes.back().rating);
    targets.push_back(ex->rating);
    if (use_token) tokens.push_back({passes.back().token_out, ex->token_target, ex->mask});
  }
  BatchLoss out;
  out.rating = loss_rating(preds, targets);
  const bool logistic = model.options().token_mode == TokenHeadMode::Logistic;
  if (use_token) out.token = logistic ? loss_token_logistic(tokens) : loss_token(tokens);
  out.joint = use_token ? loss_joint(out.rating, out.token, lambda) : out.rating;
  if (!accumulate) return out;
  if (!std::isfinite(out.joint)) return out;

  const auto d_rating = loss_rating_grad(preds, targets);
  std::vector<Vector> d_token;
  if (use_token) d_token = logistic ? loss_token_logistic_grad(tokens) : loss_token_grad(tokens);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Vector dt = use_token ? Vector(d_token[i] * lambda) : Vector::Zero(passes[i].states.rows());
    model.backward_ids(batch[i]->ids, passes[i], d_rating[i], dt);
  }
  return out;
}

namespace {

std::vector<std::size_t> epoch_pool(std::span<const TrainingExample> data, bool oversample) {
  std::vector<std::size_t> pool(data.size());
  std::iota(pool.begin(), pool.end(), 0);
  if (!oversample || data.size() < 10) return pool;
  std::vector<double> ratings;
  for (const auto& ex : data) ratings.push_back(ex.rating);
  std::sort(ratings.begin(), ratings.end());
  const double lo = ratings[ratings.size() / 10];
  const double hi = ratings[ratings.size() - 1 - ratings.size() / 10];
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].rating < lo || data[i].rating > hi) pool.push_back(i);
  }
  return pool;
}

}  // namespace

TrainResult train(GuiltModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                  const CheckpointFn& on_checkpoint) {
  config.validate();
  if (data.empty()) throw InvalidInput("no training examples");
  model.options().pooling = config.pooling;
  model.options().token_mode = config.token_mode;

  const std::vector<std::size_t> pool = epoch_pool(data, config.oversample_tails);
  const std::size_t per_epoch = steps_per_epoch(pool.size(), config.batch_size);
  const std::size_t total = config.max_steps > 0 ? config.max_steps : config.epochs * per_epoch;
  const std::size_t warmup = warmup_steps(config.warmup_ratio, total);

  Rng order_rng(derive_seed(config.seed, 1));
  Rng dropout_rng(derive_seed(config.seed, 2));
  const bool dropout = model.encoder().config().hidden_dropout > 0.0 || model.encoder().config().attention_dropout > 0.0;
  AdamW optimizer(model.params(), config.adam);

  TrainResult result;
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;
  for (std::size_t step = 0; step < total; ++step) {
    if (cursor == order.size() || order.empty()) {
      if (epoch_steps > 0) result.epoch_losses.push_back(epoch_sum / static_cast<double>(epoch_steps));
      epoch_sum = 0.0;
      epoch_steps = 0;
      order = pool;
      order_rng.shuffle(std::span<std::size_t>(order));
      cursor = 0;
    }
    std::vector<const TrainingExample*> batch;
    for (; cursor < order.size() && batch.size() < config.batch_size; ++cursor) batch.push_back(&data[order[cursor]]);

    model.params().zero_grad();
    const BatchLoss loss = batch_loss(model, batch, config.lambda, config.token_supervision, true,
                                      dropout ? &dropout_rng : nullptr);
    if (!std::isfinite(loss.joint)) {
      throw TrainingDiverged("non-finite loss at step " + std::to_string(step) + " (rating " +
                             std::to_string(loss.rating) + ", token " + std::to_string(loss.token) +
                             ", first story " + batch.front()->story_id + ")");
    }
    clip_grad_norm(model.params(), config.max_grad_norm);
    optimizer.step(model.params(), config.learning_rate * linear_warmup_decay(step, warmup, total));
    result.step_losses.push_back(loss.joint);
    epoch_sum += loss.joint;
    ++epoch_steps;

    const std::size_t done = step + 1;
    if (on_checkpoint && (done % config.checkpoint_every == 0 || done == total)) on_checkpoint(done, model);
  }
  if (epoch_steps > 0) result.epoch_losses.push_back(epoch_sum / static_cast<double>(epoch_steps));
  model.params().zero_grad();
  result.steps = total;
  return result;
}

double rating_mse(const GuiltModel& model, std::span<const TrainingExample> data) {
  if (data.empty()) throw InvalidInput("no evaluation examples");
  double sum = 0.0;
  for (const auto& ex : data) {
    const double e = model.forward_ids(ex.ids, false).rating - ex.rating;
    sum += e * e;
  }
  return sum / static_cast<double>(data.size());
}

}  // namespace guilt::model
