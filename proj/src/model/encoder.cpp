#include "guilt/model/encoder.hpp"

#include <cmath>
#include <string>

#include "guilt/common/error.hpp"

namespace guilt::model {
namespace {

// Rows of x scaled by a {0, 1/(1-p)} mask drawn from rng.
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform01() < p ? 0.0 : keep_scale;
  return mask;
}

void linear_forward(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& out) {
  out.noalias() = x * w;
  out.rowwise() += b.row(0);
}

void linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dw, Matrix* db, Matrix* dx_accum) {
  if (dw) dw->noalias() += x.transpose() * dy;
  if (db) db->row(0) += dy.colwise().sum();
  if (dx_accum) dx_accum->noalias() += dy * w.transpose();
}

}  // namespace

EncoderConfig EncoderConfig::tiny(std::size_t vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.hidden = 64;
  c.layers = 2;
  c.heads = 4;
  c.intermediate = 256;
  c.max_positions = 512;
  return c;
}

EncoderConfig EncoderConfig::base(std::size_t vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.hidden = 768;
  c.layers = 12;
  c.heads = 12;
  c.intermediate = 3072;
  c.max_positions = 512;
  c.hidden_dropout = 0.1;
  c.attention_dropout = 0.1;
  return c;
}

Json to_json(const EncoderConfig& c) {
  return Json{{"vocab_size", c.vocab_size},
              {"hidden", c.hidden},
              {"layers", c.layers},
              {"heads", c.heads},
              {"intermediate", c.intermediate},
              {"max_positions", c.max_positions},
              {"type_vocab", c.type_vocab},
              {"layer_norm_eps", c.layer_norm_eps},
              {"hidden_dropout", c.hidden_dropout},
              {"attention_dropout", c.attention_dropout},
              {"init_std", c.init_std},
              {"pad_id", c.pad_id}};
}

EncoderConfig encoder_config_from_json(const Json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.intermediate = j.value("intermediate", c.intermediate);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.type_vocab = j.value("type_vocab", c.type_vocab);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.hidden_dropout = j.value("hidden_dropout", c.hidden_dropout);
  c.attention_dropout = j.value("attention_dropout", c.attention_dropout);
  c.init_std = j.value("init_std", c.init_std);
  c.pad_id = j.value("pad_id", c.pad_id);
  return c;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_derivative(double x) {
  static const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * M_PI);
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

Matrix layer_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps, LayerNormCache* cache) {
  const auto d = static_cast<double>(x.cols());
  Vector mu = x.rowwise().sum() / d;
  Matrix centered = x.colwise() - mu;
  Vector var = centered.array().square().rowwise().sum() / d;
  Vector inv = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv.array();
  Matrix y = xhat.array().rowwise() * gamma.row(0).array();
  y.rowwise() += beta.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gamma, const LayerNormCache& cache, Matrix* d_gamma,
                           Matrix* d_beta) {
  if (d_gamma) d_gamma->row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (d_beta) d_beta->row(0) += dy.colwise().sum();
  const auto d = static_cast<double>(dy.cols());
  Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
  Vector mean_dxhat = dxhat.rowwise().sum() / d;
  Vector mean_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().sum() / d;
  Matrix dx = dxhat.colwise() - mean_dxhat;
  dx -= (cache.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * cache.inv_std.array();
}

Encoder::Encoder(const EncoderConfig& config, ParamStore& store, Rng& rng) : config_(config) {
  if (config.vocab_size == 0) throw InvalidInput("encoder vocabulary is empty");
  if (config.hidden % config.heads != 0) throw InvalidInput("hidden size must be divisible by heads");
  const auto d = static_cast<Eigen::Index>(config.hidden);
  const auto f = static_cast<Eigen::Index>(config.intermediate);
  auto weight = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    const auto idx = store.add(name, r, c, true);
    init_normal(store.value(idx), config.init_std, rng);
    return idx;
  };
  auto bias = [&](const std::string& name, Eigen::Index c) { return store.add(name, 1, c, false); };
  auto ln_gamma = [&](const std::string& name) {
    const auto idx = store.add(name, 1, d, false);
    store.value(idx).setOnes();
    return idx;
  };

  word_embeddings_ = weight("embeddings.word_embeddings.weight", static_cast<Eigen::Index>(config.vocab_size), d);
  if (config.pad_id >= 0 && static_cast<std::size_t>(config.pad_id) < config.vocab_size) {
    store.value(word_embeddings_).row(config.pad_id).setZero();
  }
  position_embeddings_ = weight("embeddings.position_embeddings.weight", static_cast<Eigen::Index>(config.max_positions), d);
  type_embeddings_ = weight("embeddings.token_type_embeddings.weight", static_cast<Eigen::Index>(config.type_vocab), d);
  ln0_g_ = ln_gamma("embeddings.LayerNorm.weight");
  ln0_b_ = bias("embeddings.LayerNorm.bias", d);

  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "encoder.layer." + std::to_string(l) + ".";
    Layer layer{};
    layer.wq = weight(p + "attention.self.query.weight", d, d);
    layer.bq = bias(p + "attention.self.query.bias", d);
    layer.wk = weight(p + "attention.self.key.weight", d, d);
    layer.bk = bias(p + "attention.self.key.bias", d);
    layer.wv = weight(p + "attention.self.value.weight", d, d);
    layer.bv = bias(p + "attention.self.value.bias", d);
    layer.wo = weight(p + "attention.output.dense.weight", d, d);
    layer.bo = bias(p + "attention.output.dense.bias", d);
    layer.ln1_g = ln_gamma(p + "attention.output.LayerNorm.weight");
    layer.ln1_b = bias(p + "attention.output.LayerNorm.bias", d);
    layer.wi = weight(p + "intermediate.dense.weight", d, f);
    layer.bi = bias(p + "intermediate.dense.bias", f);
    layer.wout = weight(p + "output.dense.weight", f, d);
    layer.bout = bias(p + "output.dense.bias", d);
    layer.ln2_g = ln_gamma(p + "output.LayerNorm.weight");
    layer.ln2_b = bias(p + "output.LayerNorm.bias", d);
    layers_.push_back(layer);
  }
}

Matrix Encoder::embed(const ParamStore& store, std::span<const int> ids) const {
  const Matrix& table = store.value(word_embeddings_);
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw InvalidInput("token id out of vocabulary");
    out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  }
  return out;
}

Matrix Encoder::forward(const ParamStore& store, const Matrix& input_embeds, EncoderCache* cache,
                        Rng* dropout_rng) const {
  const Eigen::Index len = input_embeds.rows();
  if (len == 0) throw InvalidInput("empty input sequence");
  if (static_cast<std::size_t>(len) > config_.max_positions) throw InvalidInput("sequence longer than max_positions");
  const bool hidden_drop = dropout_rng && config_.hidden_dropout > 0.0;
  const bool attn_drop = dropout_rng && config_.attention_dropout > 0.0;
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const Eigen::Index head_dim = static_cast<Eigen::Index>(config_.hidden) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Matrix x = input_embeds + store.value(position_embeddings_).topRows(len);
  x.rowwise() += store.value(type_embeddings_).row(0);
  LayerNormCache ln0;
  Matrix h = layer_norm_forward(x, store.value(ln0_g_), store.value(ln0_b_), config_.layer_norm_eps, &ln0);
  Matrix embed_mask;
  if (hidden_drop) {
    embed_mask = dropout_mask(len, h.cols(), config_.hidden_dropout, *dropout_rng);
    h.array() *= embed_mask.array();
  }
  if (cache) {
    cache->ln0 = std::move(ln0);
    cache->embed_mask = std::move(embed_mask);
    cache->layers.assign(layers_.size(), {});
  }

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& p = layers_[l];
    LayerCache local;
    LayerCache& c = cache ? cache->layers[l] : local;
    c.input = h;
    linear_forward(h, store.value(p.wq), store.value(p.bq), c.q);
    linear_forward(h, store.value(p.wk), store.value(p.bk), c.k);
    linear_forward(h, store.value(p.wv), store.value(p.bv), c.v);
    c.context.resize(len, h.cols());
    c.probs.resize(static_cast<std::size_t>(heads));
    c.probs_dropped.resize(static_cast<std::size_t>(heads));
    c.probs_mask.resize(static_cast<std::size_t>(heads));
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      const auto cols = Eigen::seqN(hd * head_dim, head_dim);
      Matrix scores = (c.q(Eigen::all, cols) * c.k(Eigen::all, cols).transpose()) * scale;
      Vector row_max = scores.rowwise().maxCoeff();
      Matrix probs = (scores.colwise() - row_max).array().exp();
      Vector sums = probs.rowwise().sum();
      probs.array().colwise() /= sums.array();
      Matrix used = probs;
      if (attn_drop) {
        c.probs_mask[static_cast<std::size_t>(hd)] = dropout_mask(len, len, config_.attention_dropout, *dropout_rng);
        used.array() *= c.probs_mask[static_cast<std::size_t>(hd)].array();
      }
      c.context(Eigen::all, cols).noalias() = used * c.v(Eigen::all, cols);
      c.probs[static_cast<std::size_t>(hd)] = std::move(probs);
      c.probs_dropped[static_cast<std::size_t>(hd)] = std::move(used);
    }
    Matrix attn_out;
    linear_forward(c.context, store.value(p.wo), store.value(p.bo), attn_out);
    if (hidden_drop) {
      c.attn_mask = dropout_mask(len, attn_out.cols(), config_.hidden_dropout, *dropout_rng);
      attn_out.array() *= c.attn_mask.array();
    }
    c.h1 = layer_norm_forward(attn_out + h, store.value(p.ln1_g), store.value(p.ln1_b), config_.layer_norm_eps, &c.ln1);
    linear_forward(c.h1, store.value(p.wi), store.value(p.bi), c.pre_gelu);
    c.gelu = c.pre_gelu.unaryExpr([](double v) { return gelu(v); });
    Matrix ffn_out;
    linear_forward(c.gelu, store.value(p.wout), store.value(p.bout), ffn_out);
    if (hidden_drop) {
      c.ffn_mask = dropout_mask(len, ffn_out.cols(), config_.hidden_dropout, *dropout_rng);
      ffn_out.array() *= c.ffn_mask.array();
    }
    h = layer_norm_forward(ffn_out + c.h1, store.value(p.ln2_g), store.value(p.ln2_b), config_.layer_norm_eps, &c.ln2);
  }
  return h;
}

Matrix Encoder::backward(const ParamStore& store, const Matrix& d_states, const EncoderCache& cache,
                         ParamStore* grads) const {
  auto g = [grads](std::size_t i) -> Matrix* { return grads ? &grads->grad(i) : nullptr; };
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const Eigen::Index head_dim = static_cast<Eigen::Index>(config_.hidden) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Matrix dh = d_states;

  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& p = layers_[l];
    const LayerCache& c = cache.layers[l];

    Matrix d_r2 = layer_norm_backward(dh, store.value(p.ln2_g), c.ln2, g(p.ln2_g), g(p.ln2_b));
    Matrix d_h1 = d_r2;
    Matrix d_ffn = d_r2;
    if (c.ffn_mask.size() > 0) d_ffn.array() *= c.ffn_mask.array();
    Matrix d_gelu = Matrix::Zero(c.gelu.rows(), c.gelu.cols());
    linear_backward(c.gelu, store.value(p.wout), d_ffn, g(p.wout), g(p.bout), &d_gelu);
    Matrix d_pre = d_gelu.array() * c.pre_gelu.unaryExpr([](double v) { return gelu_derivative(v); }).array();
    linear_backward(c.h1, store.value(p.wi), d_pre, g(p.wi), g(p.bi), &d_h1);

    Matrix d_r1 = layer_norm_backward(d_h1, store.value(p.ln1_g), c.ln1, g(p.ln1_g), g(p.ln1_b));
    Matrix d_input = d_r1;
    Matrix d_attn = d_r1;
    if (c.attn_mask.size() > 0) d_attn.array() *= c.attn_mask.array();
    Matrix d_context = Matrix::Zero(c.context.rows(), c.context.cols());
    linear_backward(c.context, store.value(p.wo), d_attn, g(p.wo), g(p.bo), &d_context);

    Matrix dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      const auto cols = Eigen::seqN(hd * head_dim, head_dim);
      const auto h_idx = static_cast<std::size_t>(hd);
      const Matrix& probs = c.probs[h_idx];
      const Matrix& used = c.probs_dropped[h_idx];
      Matrix d_ctx_h = d_context(Eigen::all, cols);
      Matrix d_used = d_ctx_h * c.v(Eigen::all, cols).transpose();
      dv(Eigen::all, cols).noalias() = used.transpose() * d_ctx_h;
      Matrix d_probs = d_used;
      if (c.probs_mask[h_idx].size() > 0) d_probs.array() *= c.probs_mask[h_idx].array();
      Vector row_dot = (d_probs.array() * probs.array()).rowwise().sum();
      Matrix d_scores = (probs.array() * (d_probs.colwise() - row_dot).array()) * scale;
      dq(Eigen::all, cols).noalias() = d_scores * c.k(Eigen::all, cols);
      dk(Eigen::all, cols).noalias() = d_scores.transpose() * c.q(Eigen::all, cols);
    }
    linear_backward(c.input, store.value(p.wq), dq, g(p.wq), g(p.bq), &d_input);
    linear_backward(c.input, store.value(p.wk), dk, g(p.wk), g(p.bk), &d_input);
    linear_backward(c.input, store.value(p.wv), dv, g(p.wv), g(p.bv), &d_input);
    dh = std::move(d_input);
  }

  if (cache.embed_mask.size() > 0) dh.array() *= cache.embed_mask.array();
  Matrix d_x = layer_norm_backward(dh, store.value(ln0_g_), cache.ln0, g(ln0_g_), g(ln0_b_));
  if (grads) {
    grads->grad(position_embeddings_).topRows(d_x.rows()) += d_x;
    grads->grad(type_embeddings_).row(0) += d_x.colwise().sum();
  }
  return d_x;
}

void Encoder::accumulate_embedding_grad(ParamStore& store, std::span<const int> ids, const Matrix& d_embeds) const {
  Matrix& grad = store.grad(word_embeddings_);
  for (std::size_t i = 0; i < ids.size(); ++i) grad.row(ids[i]) += d_embeds.row(static_cast<Eigen::Index>(i));
}

}  // namespace guilt::model
