#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "guilt/common/io.hpp"
#include "guilt/model/params.hpp"

namespace guilt::model {

/// Post-LayerNorm transformer encoder with learned absolute positions, laid
/// out like the original BERT so published checkpoints map onto it by name.
struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t intermediate = 256;
  std::size_t max_positions = 512;
  std::size_t type_vocab = 2;
  double layer_norm_eps = 1e-12;
  double hidden_dropout = 0.0;
  double attention_dropout = 0.0;
  double init_std = 0.02;
  int pad_id = 0;

  /// 2 layers, d = 64: the desk-scale encoder.
  static EncoderConfig tiny(std::size_t vocab_size);
  /// 12 layers, d = 768, the uncased base configuration.
  static EncoderConfig base(std::size_t vocab_size);
};

Json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const Json& j);

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

struct LayerCache {
  Matrix input;
  Matrix q, k, v;
  std::vector<Matrix> probs;          // per head, softmax output
  std::vector<Matrix> probs_dropped;  // per head, after dropout (== probs when disabled)
  std::vector<Matrix> probs_mask;
  Matrix context;
  Matrix attn_mask;
  LayerNormCache ln1;
  Matrix h1;
  Matrix pre_gelu;
  Matrix gelu;
  Matrix ffn_mask;
  LayerNormCache ln2;
};

struct EncoderCache {
  LayerNormCache ln0;
  Matrix embed_mask;
  std::vector<LayerCache> layers;
};

class Encoder {
 public:
  Encoder() = default;
  /// Registers parameters (prefixed "embeddings." / "encoder.") and initializes them.
  Encoder(const EncoderConfig& config, ParamStore& store, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  /// Word-embedding rows for the ids (an L x d matrix).
  Matrix embed(const ParamStore& store, std::span<const int> ids) const;

  /// Maps input embeddings (L x d) to output states (L x d). Fills `cache`
  /// when given; applies dropout only when `dropout_rng` is given.
  Matrix forward(const ParamStore& store, const Matrix& input_embeds, EncoderCache* cache,
                 Rng* dropout_rng = nullptr) const;

  /// Returns d(input_embeds). Parameter gradients are accumulated into `grads`
  /// (normally the same store) unless it is null.
  Matrix backward(const ParamStore& store, const Matrix& d_states, const EncoderCache& cache, ParamStore* grads) const;

  /// Scatters d(input_embeds) into the word-embedding gradient.
  void accumulate_embedding_grad(ParamStore& store, std::span<const int> ids, const Matrix& d_embeds) const;

  std::size_t word_embeddings() const { return word_embeddings_; }

 private:
  struct Layer {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, wi, bi, wout, bout, ln2_g, ln2_b;
  };

  EncoderConfig config_;
  std::size_t word_embeddings_ = 0, position_embeddings_ = 0, type_embeddings_ = 0, ln0_g_ = 0, ln0_b_ = 0;
  std::vector<Layer> layers_;
};

// Building blocks, exposed for tests.
Matrix layer_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps, LayerNormCache* cache);
Matrix layer_norm_backward(const Matrix& dy, const Matrix& gamma, const LayerNormCache& cache, Matrix* d_gamma,
                           Matrix* d_beta);
double gelu(double x);
double gelu_derivative(double x);

}  // namespace guilt::model
