#pragma once

#include <stdexcept>
#include <string>

namespace guilt {

/// Input that violates a documented precondition (bad archive, malformed record, ...).
class InvalidInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A statistic whose value is undefined for the given data (zero variance, all ties, ...).
class DegenerateStatistic : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Schema mismatch while decoding a persisted record.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure during optimization (NaN/Inf loss).
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace guilt
