#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "guilt/common/random.hpp"

namespace guilt::model {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = true;  // excluded from weight decay: biases and LayerNorm
};

/// Named, ordered parameter storage. Layers refer to parameters by index, so a
/// copied store stays consistent with copies of the layers that index it.
class ParamStore {
 public:
  std::size_t add(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool decay);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Matrix& value(std::size_t i) { return params_[i].value; }
  const Matrix& value(std::size_t i) const { return params_[i].value; }
  Matrix& grad(std::size_t i) { return params_[i].grad; }

  std::size_t size() const { return params_.size(); }
  std::size_t parameter_count() const;
  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t index_of(const std::string& name) const;

  void zero_grad();
  /// Sum of squared gradient entries.
  double grad_norm_squared() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

void init_normal(Matrix& m, double stddev, Rng& rng);

}  // namespace guilt::model
