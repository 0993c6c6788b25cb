#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "guilt/model/train.hpp"

namespace guilt::eval {

/// Dev-set MSE recorded at each checkpoint of one training run.
struct Curve {
  std::vector<std::size_t> steps;
  std::vector<double> dev_mse;
};

Json to_json(const Curve& c);
Curve curve_from_json(const Json& j);

/// Trains one configuration on `train` indices and evaluates on `dev`.
using FoldRunner = std::function<Curve(const model::TrainConfig& config, std::span<const std::size_t> train,
                                       std::span<const std::size_t> dev)>;

/// Seeded partition of 0..n-1 into k folds whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> kfold(std::size_t n, std::size_t k, std::uint64_t seed);

/// The checkpoint step nearest 1.25 x the mean of the folds' best steps
/// (halves round up), never below one checkpoint interval.
std::size_t checkpoint_rule(std::span<const std::size_t> best_steps, std::size_t checkpoint_every);

struct GridSearchResult {
  std::size_t best = 0;                           // index into the grid
  std::vector<double> mean_best_loss;             // per config; NaN when it diverged
  std::vector<std::vector<Curve>> curves;         // [config][fold]
  std::vector<std::size_t> best_steps;            // per fold, selected config
  std::size_t final_steps = 0;
};

Json to_json(const GridSearchResult& r);
GridSearchResult grid_result_from_json(const Json& j);

/// k-fold cross-validated grid search. Each config's score is the mean over
/// folds of its best checkpoint's dev MSE; the lowest score wins (ties keep
/// the earlier config). A config whose run diverges scores NaN; if all do,
/// TrainingDiverged is thrown.
GridSearchResult cv_grid_search(std::size_t n_examples, std::span<const model::TrainConfig> grid, std::size_t folds,
                                std::uint64_t seed, const FoldRunner& run);

/// Reference grid: lr {3e-5, 5e-5} x seeds {0, 1} without token supervision;
/// lr {3e-5, 5e-5} x lambda {1, 2} with seed 0 when it is on. Epochs 5,
/// warmup 10%, batch 16, checkpoints every 100 steps.
std::vector<model::TrainConfig> reference_grid(model::Pooling pooling, bool token_supervision,
                                               annotation::Question question);

}  // namespace guilt::eval
