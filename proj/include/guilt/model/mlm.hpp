#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "guilt/model/encoder.hpp"
#include "guilt/model/optim.hpp"
#include "guilt/model/tokenizer.hpp"

namespace guilt::model {

struct MlmConfig {
  std::size_t steps = 100000;
  std::size_t batch_size = 128;
  double learning_rate = 5e-5;
  double warmup_ratio = 0.0;
  double mask_probability = 0.15;
  std::size_t eval_every = 1000;
  std::size_t max_length = 400;
  std::uint64_t seed = 0;
  AdamWConfig adam;
  double max_grad_norm = 1.0;
};

Json to_json(const MlmConfig& c);
MlmConfig mlm_config_from_json(const Json& j);

/// A masked copy of a sequence. labels hold the original id at selected
/// positions and -1 elsewhere.
struct MaskedSequence {
  std::vector<int> ids;
  std::vector<int> labels;
};

/// Selects each non-marker position with probability p; a selected position
/// becomes [MASK] 80% of the time, a random non-special token 10%, and is left
/// unchanged 10%.
MaskedSequence mask_tokens(std::span<const int> ids, const WordPieceTokenizer& tokenizer, double p, Rng& rng);

/// Encoder with the masked-LM prediction head (dense + GELU + LayerNorm, then
/// a decoder tied to the word embeddings).
class MaskedLm {
 public:
  MaskedLm(const EncoderConfig& config, std::uint64_t seed);

  /// Mean cross-entropy over all labelled positions of the batch. Accumulates
  /// gradients when `accumulate` is set. Returns NaN-free 0 when nothing is labelled.
  double loss(std::span<const MaskedSequence> batch, bool accumulate, Rng* dropout_rng = nullptr);

  /// Vocabulary logits at every position (L x V).
  Matrix logits(std::span<const int> ids) const;

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const Encoder& encoder() const { return encoder_; }

 private:
  ParamStore store_;
  Encoder encoder_;
  std::size_t dense_w_ = 0, dense_b_ = 0, ln_g_ = 0, ln_b_ = 0, out_b_ = 0;
};

struct MlmResult {
  std::vector<std::size_t> eval_steps;
  std::vector<double> dev_loss;
  std::vector<double> test_loss;
  std::vector<double> train_loss;  // per step
};

/// Masked-LM training over pre-encoded sequences. Dev and test losses are
/// evaluated with fixed masks (drawn once from the seed) at step 0 and every
/// eval_every steps. Throws InvalidInput when the training set is smaller
/// than one batch.
MlmResult mlm_pretrain(MaskedLm& model, const WordPieceTokenizer& tokenizer, std::span<const std::vector<int>> train,
                       std::span<const std::vector<int>> dev, std::span<const std::vector<int>> test,
                       const MlmConfig& config);

}  // namespace guilt::model
