#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "guilt/model/params.hpp"

namespace guilt::model {

enum class Pooling { CLS, MEAN };

/// Linear regression on token targets, or a sigmoid output trained with
/// soft-target cross-entropy for the logistic comparison.
enum class TokenHeadMode { Linear, Logistic };

/// CLS returns the first row; MEAN averages every row, markers included.
RowVector pool(const Matrix& states, Pooling mode);
/// Gradient of pool() with respect to the states, given d(pooled).
Matrix pool_backward(const RowVector& d_pooled, Eigen::Index rows, Pooling mode);

/// One example's token-level predictions and targets. Positions with mask 0
/// (markers, padding) are ignored; n is the count of unmasked positions.
struct TokenTargets {
  Vector prediction;
  Vector target;
  std::vector<std::uint8_t> mask;
};

/// (1/m) sum_i 1/2 (pred_i - y_i)^2. Throws InvalidInput on an empty batch.
double loss_rating(std::span<const double> predictions, std::span<const double> targets);
/// d loss_rating / d pred_i.
std::vector<double> loss_rating_grad(std::span<const double> predictions, std::span<const double> targets);

/// (1/m) sum_i (1/n_i) sum_j 1/2 (pred_ij - y_ij)^2 over unmasked positions.
double loss_token(std::span<const TokenTargets> batch);
std::vector<Vector> loss_token_grad(std::span<const TokenTargets> batch);

/// Cross-entropy variant: predictions are logits, targets are soft labels in [0,1].
double loss_token_logistic(std::span<const TokenTargets> batch);
std::vector<Vector> loss_token_logistic_grad(std::span<const TokenTargets> batch);

/// J_r + lambda J_t. Throws InvalidInput for negative lambda.
double loss_joint(double j_rating, double j_token, double lambda);

double sigmoid(double x);

}  // namespace guilt::model
