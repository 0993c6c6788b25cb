#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "guilt/annotation/store.hpp"
#include "guilt/corpus/corpus.hpp"
#include "guilt/model/encoder.hpp"
#include "guilt/model/losses.hpp"
#include "guilt/model/tokenizer.hpp"

namespace guilt::model {

struct ModelOptions {
  Pooling pooling = Pooling::MEAN;
  TokenHeadMode token_mode = TokenHeadMode::Linear;
  std::size_t max_length = 400;
};

std::string_view to_string(Pooling p);
Pooling pooling_from_string(std::string_view s);
std::string_view to_string(TokenHeadMode m);
TokenHeadMode token_mode_from_string(std::string_view s);

struct Prediction {
  double rating = 0.0;
  std::vector<double> token_scores;  // one per kept word token
};

/// Shared encoder with a scalar rating head on the pooled state and a
/// per-position token head.
class GuiltModel {
 public:
  GuiltModel(const EncoderConfig& encoder, WordPieceTokenizer tokenizer, const ModelOptions& options,
             std::uint64_t seed);

  struct Pass {
    Matrix states;
    RowVector pooled;
    double rating = 0.0;
    Vector token_out;  // logits in logistic mode
    EncoderCache cache;
  };

  Pass forward_embeds(const Matrix& input_embeds, bool keep_cache, Rng* dropout_rng = nullptr) const;
  Pass forward_ids(std::span<const int> ids, bool keep_cache, Rng* dropout_rng = nullptr) const;

  /// Returns d(input_embeds); parameter gradients go to `grads` unless null.
  Matrix backward(const Pass& pass, double d_rating, const Vector& d_token, ParamStore* grads) const;
  /// Full backward for a pass computed from ids, including word-embedding rows.
  void backward_ids(std::span<const int> ids, const Pass& pass, double d_rating, const Vector& d_token);

  Prediction predict(const std::vector<WordToken>& words) const;
  Prediction predict(std::string_view text) const;

  /// Copies every parameter whose name and shape also appear in `source`.
  /// Returns the number copied.
  std::size_t load_matching(const ParamStore& source);

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const Encoder& encoder() const { return encoder_; }
  const WordPieceTokenizer& tokenizer() const { return tokenizer_; }
  const ModelOptions& options() const { return options_; }
  ModelOptions& options() { return options_; }

  std::size_t rating_weight() const { return wr_; }
  std::size_t rating_bias() const { return br_; }
  std::size_t token_weight() const { return wt_; }
  std::size_t token_bias() const { return bt_; }

 private:
  ModelOptions options_;
  WordPieceTokenizer tokenizer_;
  ParamStore store_;
  Encoder encoder_;
  std::size_t wr_ = 0, br_ = 0, wt_ = 0, bt_ = 0;
};

/// One supervised example: subword ids with the story's rating and each
/// subword's inherited highlight target. Markers carry mask 0.
struct TrainingExample {
  std::string story_id;
  std::vector<int> ids;
  double rating = 0.0;
  Vector token_target;
  std::vector<std::uint8_t> mask;
};

/// Builds examples for one question from stories that have a target for it.
std::vector<TrainingExample> make_examples(const WordPieceTokenizer& tokenizer, std::span<const corpus::Story> stories,
                                           std::span<const annotation::AggregatedStory> aggregated,
                                           annotation::Question question, std::size_t max_length);

}  // namespace guilt::model
