#include "guilt/model/model.hpp"

#include <map>

#include "guilt/common/error.hpp"

namespace guilt::model {

std::string_view to_string(Pooling p) { return p == Pooling::CLS ? "cls" : "mean"; }

Pooling pooling_from_string(std::string_view s) {
  if (s == "cls" || s == "CLS") return Pooling::CLS;
  if (s == "mean" || s == "MEAN") return Pooling::MEAN;
  throw InvalidInput("unknown pooling: " + std::string(s));
}

std::string_view to_string(TokenHeadMode m) { return m == TokenHeadMode::Linear ? "linear" : "logistic"; }

TokenHeadMode token_mode_from_string(std::string_view s) {
  if (s == "linear") return TokenHeadMode::Linear;
  if (s == "logistic") return TokenHeadMode::Logistic;
  throw InvalidInput("unknown token head mode: " + std::string(s));
}

GuiltModel::GuiltModel(const EncoderConfig& encoder, WordPieceTokenizer tokenizer, const ModelOptions& options,
                       std::uint64_t seed)
    : options_(options), tokenizer_(std::move(tokenizer)) {
  if (tokenizer_.size() != encoder.vocab_size) throw InvalidInput("tokenizer and encoder vocabulary sizes differ");
  if (options_.max_length > encoder.max_positions) throw InvalidInput("max_length exceeds encoder positions");
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  encoder_ = Encoder(encoder, store_, rng);
  const auto d = static_cast<Eigen::Index>(encoder.hidden);
  wr_ = store_.add("rating_head.weight", d, 1, true);
  br_ = store_.add("rating_head.bias", 1, 1, false);
  wt_ = store_.add("token_head.weight", d, 1, true);
  bt_ = store_.add("token_head.bias", 1, 1, false);
  init_normal(store_.value(wr_), encoder.init_std, rng);
  init_normal(store_.value(wt_), encoder.init_std, rng);
}

GuiltModel::Pass GuiltModel::forward_embeds(const Matrix& input_embeds, bool keep_cache, Rng* dropout_rng) const {
  Pass pass;
  pass.states = encoder_.forward(store_, input_embeds, keep_cache ? &pass.cache : nullptr, dropout_rng);
  pass.pooled = pool(pass.states, options_.pooling);
  pass.rating = (pass.pooled * store_.value(wr_))(0, 0) + store_.value(br_)(0, 0);
  pass.token_out = (pass.states * store_.value(wt_)).col(0).array() + store_.value(bt_)(0, 0);
  return pass;
}

GuiltModel::Pass GuiltModel::forward_ids(std::span<const int> ids, bool keep_cache, Rng* dropout_rng) const {
  return forward_embeds(encoder_.embed(store_, ids), keep_cache, dropout_rng);
}

Matrix GuiltModel::backward(const Pass& pass, double d_rating, const Vector& d_token, ParamStore* grads) const {
  if (d_token.size() != pass.states.rows()) throw InvalidInput("token gradient length differs from sequence");
  if (grads) {
    grads->grad(wr_) += pass.pooled.transpose() * d_rating;
    grads->grad(br_)(0, 0) += d_rating;
    grads->grad(wt_) += pass.states.transpose() * d_token;
    grads->grad(bt_)(0, 0) += d_token.sum();
  }
  const Matrix& wr = store_.value(wr_);
  const Matrix& wt = store_.value(wt_);
  Matrix d_states = pool_backward(wr.col(0).transpose() * d_rating, pass.states.rows(), options_.pooling);
  d_states.noalias() += d_token * wt.col(0).transpose();
  return encoder_.backward(store_, d_states, pass.cache, grads);
}

void GuiltModel::backward_ids(std::span<const int> ids, const Pass& pass, double d_rating, const Vector& d_token) {
  const Matrix d_embeds = backward(pass, d_rating, d_token, &store_);
  encoder_.accumulate_embedding_grad(store_, ids, d_embeds);
}

Prediction GuiltModel::predict(const std::vector<WordToken>& words) const {
  if (words.empty()) throw InvalidInput("cannot predict on empty text");
  const Encoding enc = tokenizer_.encode(words, options_.max_length);
  const Pass pass = forward_ids(enc.ids, false);
  Prediction out;
  out.rating = pass.rating;
  out.token_scores.assign(enc.kept_words, 0.0);
  std::vector<std::size_t> counts(enc.kept_words, 0);
  for (std::size_t i = 0; i < enc.ids.size(); ++i) {
    const int w = enc.word_index[i];
    if (w < 0) continue;
    double v = pass.token_out[static_cast<Eigen::Index>(i)];
    if (options_.token_mode == TokenHeadMode::Logistic) v = sigmoid(v);
    out.token_scores[static_cast<std::size_t>(w)] += v;
    ++counts[static_cast<std::size_t>(w)];
  }
  for (std::size_t w = 0; w < counts.size(); ++w) {
    if (counts[w] > 0) out.token_scores[w] /= static_cast<double>(counts[w]);
  }
  return out;
}

Prediction GuiltModel::predict(std::string_view text) const { return predict(tokenize_words(text)); }

std::size_t GuiltModel::load_matching(const ParamStore& source) {
  std::size_t copied = 0;
  for (auto& p : store_) {
    if (!source.contains(p.name)) continue;
    const Matrix& v = source[source.index_of(p.name)].value;
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      throw SchemaError("shape mismatch for parameter " + p.name);
    }
    p.value = v;
    ++copied;
  }
  return copied;
}

std::vector<TrainingExample> make_examples(const WordPieceTokenizer& tokenizer, std::span<const corpus::Story> stories,
                                           std::span<const annotation::AggregatedStory> aggregated,
                                           annotation::Question question, std::size_t max_length) {
  std::map<std::string, const corpus::Story*> by_id;
  for (const auto& s : stories) by_id.emplace(s.id, &s);
  std::vector<TrainingExample> out;
  for (const auto& agg : aggregated) {
    const auto* target = agg.target(question);
    if (!target) continue;
    auto it = by_id.find(agg.story_id);
    if (it == by_id.end()) throw InvalidInput("aggregated story without text: " + agg.story_id);
    const corpus::Story& story = *it->second;
    if (target->token_target.size() != story.tokens.size()) {
      throw SchemaError("token targets misaligned for story " + story.id);
    }
    const Encoding enc = tokenizer.encode(story.tokens, max_length);
    TrainingExample ex;
    ex.story_id = story.id;
    ex.ids = enc.ids;
    ex.rating = target->mean_rating;
    ex.token_target = Vector::Zero(static_cast<Eigen::Index>(enc.ids.size()));
    ex.mask.assign(enc.ids.size(), 0);
    for (std::size_t i = 0; i < enc.ids.size(); ++i) {
      const int w = enc.word_index[i];
      if (w < 0) continue;
      ex.token_target[static_cast<Eigen::Index>(i)] = target->token_target[static_cast<std::size_t>(w)];
      ex.mask[i] = 1;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace guilt::model
