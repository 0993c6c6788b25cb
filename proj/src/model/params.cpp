#include "guilt/model/params.hpp"

#include "guilt/common/error.hpp"

namespace guilt::model {

std::size_t ParamStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool decay) {
  if (index_.contains(name)) throw InvalidInput("duplicate parameter " + name);
  params_.push_back({name, Matrix::Zero(rows, cols), Matrix::Zero(rows, cols), decay});
  index_[name] = params_.size() - 1;
  return params_.size() - 1;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInput("unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

double ParamStore::grad_norm_squared() const {
  double total = 0.0;
  for (const auto& p : params_) total += p.grad.squaredNorm();
  return total;
}

void init_normal(Matrix& m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
}

}  // namespace guilt::model
