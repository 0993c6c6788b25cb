#include "guilt/model/losses.hpp"

#include <cmath>

#include "guilt/common/error.hpp"

namespace guilt::model {
namespace {

std::size_t unmasked(const TokenTargets& ex) {
  if (ex.prediction.size() != ex.target.size() || static_cast<std::size_t>(ex.prediction.size()) != ex.mask.size()) {
    throw InvalidInput("token predictions, targets and mask differ in length");
  }
  std::size_t n = 0;
  for (auto m : ex.mask) n += m ? 1 : 0;
  return n;
}

void require_nonempty(std::size_t m) {
  if (m == 0) throw InvalidInput("empty batch");
}

// Softplus without overflow: log(1 + e^z).
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

RowVector pool(const Matrix& states, Pooling mode) {
  if (states.rows() == 0) throw InvalidInput("cannot pool an empty sequence");
  if (mode == Pooling::CLS) return states.row(0);
  return states.colwise().mean();
}

Matrix pool_backward(const RowVector& d_pooled, Eigen::Index rows, Pooling mode) {
  Matrix d = Matrix::Zero(rows, d_pooled.size());
  if (mode == Pooling::CLS) {
    d.row(0) = d_pooled;
  } else {
    d.rowwise() = d_pooled / static_cast<double>(rows);
  }
  return d;
}

double loss_rating(std::span<const double> predictions, std::span<const double> targets) {
  require_nonempty(predictions.size());
  if (predictions.size() != targets.size()) throw InvalidInput("predictions and targets differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - targets[i];
    sum += 0.5 * e * e;
  }
  return sum / static_cast<double>(predictions.size());
}

std::vector<double> loss_rating_grad(std::span<const double> predictions, std::span<const double> targets) {
  require_nonempty(predictions.size());
  if (predictions.size() != targets.size()) throw InvalidInput("predictions and targets differ in length");
  const auto m = static_cast<double>(predictions.size());
  std::vector<double> g(predictions.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (predictions[i] - targets[i]) / m;
  return g;
}

double loss_token(std::span<const TokenTargets> batch) {
  require_nonempty(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    const std::size_t n = unmasked(ex);
    if (n == 0) continue;
    double sum = 0.0;
    for (Eigen::Index j = 0; j < ex.prediction.size(); ++j) {
      if (!ex.mask[static_cast<std::size_t>(j)]) continue;
      const double e = ex.prediction[j] - ex.target[j];
      sum += 0.5 * e * e;
    }
    total += sum / static_cast<double>(n);
  }
  return total / static_cast<double>(batch.size());
}

std::vector<Vector> loss_token_grad(std::span<const TokenTargets> batch) {
  require_nonempty(batch.size());
  const auto m = static_cast<double>(batch.size());
  std::vector<Vector> grads;
  grads.reserve(batch.size());
  for (const auto& ex : batch) {
    const std::size_t n = unmasked(ex);
    Vector g = Vector::Zero(ex.prediction.size());
    for (Eigen::Index j = 0; j < g.size() && n > 0; ++j) {
      if (ex.mask[static_cast<std::size_t>(j)]) g[j] = (ex.prediction[j] - ex.target[j]) / (m * static_cast<double>(n));
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double loss_token_logistic(std::span<const TokenTargets> batch) {
  require_nonempty(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    const std::size_t n = unmasked(ex);
    if (n == 0) continue;
    double sum = 0.0;
    for (Eigen::Index j = 0; j < ex.prediction.size(); ++j) {
      if (!ex.mask[static_cast<std::size_t>(j)]) continue;
      const double z = ex.prediction[j];
      const double y = ex.target[j];
      // -(y log s(z) + (1-y) log(1-s(z)))
      sum += y * softplus(-z) + (1.0 - y) * softplus(z);
    }
    total += sum / static_cast<double>(n);
  }
  return total / static_cast<double>(batch.size());
}

std::vector<Vector> loss_token_logistic_grad(std::span<const TokenTargets> batch) {
  require_nonempty(batch.size());
  const auto m = static_cast<double>(batch.size());
  std::vector<Vector> grads;
  grads.reserve(batch.size());
  for (const auto& ex : batch) {
    const std::size_t n = unmasked(ex);
    Vector g = Vector::Zero(ex.prediction.size());
    for (Eigen::Index j = 0; j < g.size() && n > 0; ++j) {
      if (ex.mask[static_cast<std::size_t>(j)]) {
        g[j] = (sigmoid(ex.prediction[j]) - ex.target[j]) / (m * static_cast<double>(n));
      }
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double loss_joint(double j_rating, double j_token, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidInput("loss ratio must be nonnegative");
  return j_rating + lambda * j_token;
}

}  // namespace guilt::model
