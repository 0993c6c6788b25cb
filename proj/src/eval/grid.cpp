#include "guilt/eval/grid.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "guilt/common/error.hpp"
#include "guilt/common/random.hpp"

namespace guilt::eval {

Json to_json(const Curve& c) { return Json{{"steps", c.steps}, {"dev_mse", c.dev_mse}}; }

Curve curve_from_json(const Json& j) {
  return Curve{j.at("steps").get<std::vector<std::size_t>>(), j.at("dev_mse").get<std::vector<double>>()};
}

std::vector<std::vector<std::size_t>> kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || n < k) throw InvalidInput("k-fold needs 2 <= k <= n");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < n; ++i) folds[i % k].push_back(order[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::size_t checkpoint_rule(std::span<const std::size_t> best_steps, std::size_t checkpoint_every) {
  if (best_steps.empty() || checkpoint_every == 0) throw InvalidInput("checkpoint rule needs fold results");
  const double mean = std::accumulate(best_steps.begin(), best_steps.end(), 0.0) / static_cast<double>(best_steps.size());
  const double target = 1.25 * mean / static_cast<double>(checkpoint_every);
  const auto k = static_cast<std::size_t>(std::floor(target + 0.5));
  return std::max<std::size_t>(1, k) * checkpoint_every;
}

Json to_json(const GridSearchResult& r) {
  Json curves = Json::array();
  for (const auto& per_config : r.curves) {
    Json folds = Json::array();
    for (const auto& c : per_config) folds.push_back(to_json(c));
    curves.push_back(folds);
  }
  Json losses = Json::array();
  for (double v : r.mean_best_loss) losses.push_back(std::isfinite(v) ? Json(v) : Json(nullptr));
  return Json{{"best", r.best}, {"mean_best_loss", losses}, {"curves", curves}, {"best_steps", r.best_steps},
              {"final_steps", r.final_steps}};
}

GridSearchResult grid_result_from_json(const Json& j) {
  GridSearchResult r;
  r.best = j.at("best").get<std::size_t>();
  for (const auto& v : j.at("mean_best_loss")) {
    r.mean_best_loss.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
  }
  for (const auto& per_config : j.at("curves")) {
    std::vector<Curve> folds;
    for (const auto& c : per_config) folds.push_back(curve_from_json(c));
    r.curves.push_back(std::move(folds));
  }
  r.best_steps = j.at("best_steps").get<std::vector<std::size_t>>();
  r.final_steps = j.at("final_steps").get<std::size_t>();
  return r;
}

GridSearchResult cv_grid_search(std::size_t n_examples, std::span<const model::TrainConfig> grid, std::size_t folds,
                                std::uint64_t seed, const FoldRunner& run) {
  if (grid.empty()) throw InvalidInput("empty hyperparameter grid");
  const auto parts = kfold(n_examples, folds, seed);
  GridSearchResult result;
  std::vector<std::vector<std::size_t>> fold_best(grid.size());
  for (std::size_t c = 0; c < grid.size(); ++c) {
    std::vector<Curve> curves;
    double total = 0.0;
    bool diverged = false;
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<std::size_t> train;
      for (std::size_t g = 0; g < folds; ++g) {
        if (g != f) train.insert(train.end(), parts[g].begin(), parts[g].end());
      }
      std::sort(train.begin(), train.end());
      Curve curve;
      try {
        curve = run(grid[c], train, parts[f]);
      } catch (const TrainingDiverged&) {
        diverged = true;
      }
      std::size_t best_i = curve.dev_mse.size();
      for (std::size_t i = 0; i < curve.dev_mse.size(); ++i) {
        if (!std::isfinite(curve.dev_mse[i])) {
          diverged = true;
          break;
        }
        if (best_i == curve.dev_mse.size() || curve.dev_mse[i] < curve.dev_mse[best_i]) best_i = i;
      }
      if (best_i == curve.dev_mse.size()) diverged = true;
      if (!diverged) {
        total += curve.dev_mse[best_i];
        fold_best[c].push_back(curve.steps[best_i]);
      }
      curves.push_back(std::move(curve));
      if (diverged) break;
    }
    result.curves.push_back(std::move(curves));
    result.mean_best_loss.push_back(diverged ? std::numeric_limits<double>::quiet_NaN()
                                             : total / static_cast<double>(folds));
  }
  bool any = false;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    const double v = result.mean_best_loss[c];
    if (!std::isfinite(v)) continue;
    if (!any || v < result.mean_best_loss[result.best]) result.best = c;
    any = true;
  }
  if (!any) throw TrainingDiverged("every grid configuration diverged");
  result.best_steps = fold_best[result.best];
  result.final_steps = checkpoint_rule(result.best_steps, grid[result.best].checkpoint_every);
  return result;
}

std::vector<model::TrainConfig> reference_grid(model::Pooling pooling, bool token_supervision,
                                               annotation::Question question) {
  std::vector<model::TrainConfig> grid;
  for (double lr : {3e-5, 5e-5}) {
    for (int k = 0; k < 2; ++k) {
      model::TrainConfig c;
      c.pooling = pooling;
      c.question = question;
      c.learning_rate = lr;
      c.epochs = 5;
      c.warmup_ratio = 0.1;
      c.batch_size = 16;
      c.checkpoint_every = 100;
      c.token_supervision = token_supervision;
      if (token_supervision) {
        c.seed = 0;
        c.lambda = k == 0 ? 1.0 : 2.0;
      } else {
        c.seed = static_cast<std::uint64_t>(k);
        c.lambda = 0.0;
      }
      grid.push_back(c);
    }
  }
  return grid;
}

}  // namespace guilt::eval
