#include "guilt/model/mlm.hpp"

#include <cmath>
#include <limits>

#include "guilt/common/error.hpp"

namespace guilt::model {

Json to_json(const MlmConfig& c) {
  return Json{{"steps", c.steps},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"warmup_ratio", c.warmup_ratio},
              {"mask_probability", c.mask_probability},
              {"eval_every", c.eval_every},
              {"max_length", c.max_length},
              {"seed", c.seed},
              {"adam_beta1", c.adam.beta1},
              {"adam_beta2", c.adam.beta2},
              {"adam_eps", c.adam.eps},
              {"weight_decay", c.adam.weight_decay},
              {"max_grad_norm", c.max_grad_norm}};
}

MlmConfig mlm_config_from_json(const Json& j) {
  MlmConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.mask_probability = j.value("mask_probability", c.mask_probability);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.max_length = j.value("max_length", c.max_length);
  c.seed = j.value("seed", c.seed);
  c.adam.beta1 = j.value("adam_beta1", c.adam.beta1);
  c.adam.beta2 = j.value("adam_beta2", c.adam.beta2);
  c.adam.eps = j.value("adam_eps", c.adam.eps);
  c.adam.weight_decay = j.value("weight_decay", c.adam.weight_decay);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  return c;
}

MaskedSequence mask_tokens(std::span<const int> ids, const WordPieceTokenizer& tokenizer, double p, Rng& rng) {
  MaskedSequence out{{ids.begin(), ids.end()}, std::vector<int>(ids.size(), -1)};
  const auto vocab = static_cast<std::uint64_t>(tokenizer.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (tokenizer.is_special(ids[i]) && ids[i] != tokenizer.unk_id()) continue;
    if (!rng.bernoulli(p)) continue;
    out.labels[i] = ids[i];
    const double u = rng.uniform01();
    if (u < 0.8) {
      out.ids[i] = tokenizer.mask_id();
    } else if (u < 0.9) {
      int r;
      do {
        r = static_cast<int>(rng.uniform_index(vocab));
      } while (tokenizer.is_special(r));
      out.ids[i] = r;
    }
  }
  return out;
}

MaskedLm::MaskedLm(const EncoderConfig& config, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6d6c6dULL));
  encoder_ = Encoder(config, store_, rng);
  const auto d = static_cast<Eigen::Index>(config.hidden);
  dense_w_ = store_.add("cls.predictions.transform.dense.weight", d, d, true);
  init_normal(store_.value(dense_w_), config.init_std, rng);
  dense_b_ = store_.add("cls.predictions.transform.dense.bias", 1, d, false);
  ln_g_ = store_.add("cls.predictions.transform.LayerNorm.weight", 1, d, false);
  store_.value(ln_g_).setOnes();
  ln_b_ = store_.add("cls.predictions.transform.LayerNorm.bias", 1, d, false);
  out_b_ = store_.add("cls.predictions.bias", 1, static_cast<Eigen::Index>(config.vocab_size), false);
}

double MaskedLm::loss(std::span<const MaskedSequence> batch, bool accumulate, Rng* dropout_rng) {
  std::size_t labelled = 0;
  for (const auto& s : batch) {
    for (int l : s.labels) labelled += l >= 0 ? 1 : 0;
  }
  if (labelled == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(labelled);
  const Matrix& emb = store_.value(encoder_.word_embeddings());
  const double eps = encoder_.config().layer_norm_eps;
  double total = 0.0;

  for (const auto& seq : batch) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < seq.labels.size(); ++i) {
      if (seq.labels[i] >= 0) rows.push_back(static_cast<Eigen::Index>(i));
    }
    if (rows.empty()) continue;
    EncoderCache cache;
    const Matrix states = encoder_.forward(store_, encoder_.embed(store_, seq.ids), accumulate ? &cache : nullptr,
                                           dropout_rng);
    const Matrix selected = states(rows, Eigen::all);
    Matrix pre = selected * store_.value(dense_w_);
    pre.rowwise() += store_.value(dense_b_).row(0);
    const Matrix act = pre.unaryExpr([](double v) { return gelu(v); });
    LayerNormCache ln;
    const Matrix t = layer_norm_forward(act, store_.value(ln_g_), store_.value(ln_b_), eps, &ln);
    Matrix logits = t * emb.transpose();
    logits.rowwise() += store_.value(out_b_).row(0);

    Matrix d_logits(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double mx = logits.row(r).maxCoeff();
      const auto shifted = (logits.row(r).array() - mx).exp();
      const double z = shifted.sum();
      const int label = seq.labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
      total += -(logits(r, label) - mx - std::log(z));
      d_logits.row(r) = (shifted / z).matrix() * inv;
      d_logits(r, label) -= inv;
    }
    if (!accumulate) continue;

    store_.grad(out_b_).row(0) += d_logits.colwise().sum();
    store_.grad(encoder_.word_embeddings()).noalias() += d_logits.transpose() * t;
    const Matrix d_t = d_logits * emb;
    const Matrix d_act = layer_norm_backward(d_t, store_.value(ln_g_), ln, &store_.grad(ln_g_), &store_.grad(ln_b_));
    const Matrix d_pre = d_act.array() * pre.unaryExpr([](double v) { return gelu_derivative(v); }).array();
    store_.grad(dense_w_).noalias() += selected.transpose() * d_pre;
    store_.grad(dense_b_).row(0) += d_pre.colwise().sum();
    Matrix d_states = Matrix::Zero(states.rows(), states.cols());
    d_states(rows, Eigen::all) = d_pre * store_.value(dense_w_).transpose();
    const Matrix d_embeds = encoder_.backward(store_, d_states, cache, &store_);
    encoder_.accumulate_embedding_grad(store_, seq.ids, d_embeds);
  }
  return total * inv;
}

Matrix MaskedLm::logits(std::span<const int> ids) const {
  const Matrix states = encoder_.forward(store_, encoder_.embed(store_, ids), nullptr);
  Matrix pre = states * store_.value(dense_w_);
  pre.rowwise() += store_.value(dense_b_).row(0);
  const Matrix t = layer_norm_forward(pre.unaryExpr([](double v) { return gelu(v); }), store_.value(ln_g_),
                                      store_.value(ln_b_), encoder_.config().layer_norm_eps, nullptr);
  Matrix out = t * store_.value(encoder_.word_embeddings()).transpose();
  out.rowwise() += store_.value(out_b_).row(0);
  return out;
}

namespace {

std::vector<MaskedSequence> fixed_masks(std::span<const std::vector<int>> seqs, const WordPieceTokenizer& tokenizer,
                                        double p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<MaskedSequence> out;
  for (const auto& s : seqs) out.push_back(mask_tokens(s, tokenizer, p, rng));
  return out;
}

double eval_loss(MaskedLm& model, std::span<const MaskedSequence> masked) {
  // One pass over all sequences so the mean is over every labelled position.
  return masked.empty() ? std::numeric_limits<double>::quiet_NaN() : model.loss(masked, false);
}

}  // namespace

MlmResult mlm_pretrain(MaskedLm& model, const WordPieceTokenizer& tokenizer, std::span<const std::vector<int>> train,
                       std::span<const std::vector<int>> dev, std::span<const std::vector<int>> test,
                       const MlmConfig& config) {
  if (config.batch_size == 0 || train.size() < config.batch_size) {
    throw InvalidInput("pretraining corpus is smaller than one batch");
  }
  if (config.eval_every == 0) throw InvalidInput("eval interval must be positive");
  const auto dev_masked = fixed_masks(dev, tokenizer, config.mask_probability, derive_seed(config.seed, 11));
  const auto test_masked = fixed_masks(test, tokenizer, config.mask_probability, derive_seed(config.seed, 12));
  Rng order_rng(derive_seed(config.seed, 13));
  Rng mask_rng(derive_seed(config.seed, 14));
  Rng dropout_rng(derive_seed(config.seed, 15));
  const auto& ec = model.encoder().config();
  const bool dropout = ec.hidden_dropout > 0.0 || ec.attention_dropout > 0.0;
  AdamW optimizer(model.params(), config.adam);
  const std::size_t warmup = warmup_steps(config.warmup_ratio, config.steps);

  MlmResult result;
  auto evaluate = [&](std::size_t step) {
    result.eval_steps.push_back(step);
    result.dev_loss.push_back(eval_loss(model, dev_masked));
    result.test_loss.push_back(eval_loss(model, test_masked));
  };
  evaluate(0);

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<MaskedSequence> batch;
    while (batch.size() < config.batch_size) {
      if (cursor == order.size()) {
        order_rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const auto& seq = train[order[cursor++]];
      const std::size_t len = std::min(seq.size(), config.max_length);
      batch.push_back(mask_tokens(std::span<const int>(seq.data(), len), tokenizer, config.mask_probability, mask_rng));
    }
    model.params().zero_grad();
    const double loss = model.loss(batch, true, dropout ? &dropout_rng : nullptr);
    if (!std::isfinite(loss)) throw TrainingDiverged("non-finite masked-LM loss at step " + std::to_string(step));
    clip_grad_norm(model.params(), config.max_grad_norm);
    optimizer.step(model.params(), config.learning_rate * linear_warmup_decay(step, warmup, config.steps));
    result.train_loss.push_back(loss);
    if ((step + 1) % config.eval_every == 0) evaluate(step + 1);
  }
  model.params().zero_grad();
  return result;
}

}  // namespace guilt::model
