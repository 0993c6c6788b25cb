#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "guilt/common/error.hpp"
#include "guilt/common/io.hpp"
#include "guilt/model/checkpoint.hpp"
#include "guilt/model/mlm.hpp"
#include "guilt/model/model.hpp"
#include "guilt/model/optim.hpp"
#include "guilt/model/train.hpp"
#include "guilt/stats/tests.hpp"
#include "guilt/synth/synthetic.hpp"

using namespace guilt;
using namespace guilt::model;
namespace fs = std::filesystem;

namespace {

const fs::path kData = GUILT_TEST_DATA_DIR;

EncoderConfig micro_config(std::size_t vocab) {
  EncoderConfig c = EncoderConfig::tiny(vocab);
  c.hidden = 8;
  c.heads = 2;
  c.intermediate = 16;
  c.max_positions = 512;
  return c;
}

WordPieceTokenizer toy_tokenizer() {
  return WordPieceTokenizer({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "suspect", "arrest", "##ed",
                             "police", "said", "a", "man", ".", "un", "##aff", "##able", "##s"});
}

// Central difference of f with respect to one parameter entry.
template <typename F>
double numeric_grad(ParamStore& store, std::size_t param, Eigen::Index r, Eigen::Index c, F&& f) {
  const double h = 1e-5;
  double& x = store.value(param)(r, c);
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

bool grad_close(double analytic, double numeric) {
  return std::abs(analytic - numeric) <= 1e-4 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-9;
}

struct Planted {
  synth::SyntheticDataset data;
  WordPieceTokenizer tokenizer;
  std::vector<TrainingExample> examples;
};

Planted planted(std::size_t stories, std::uint64_t seed) {
  synth::SyntheticConfig cfg;
  cfg.stories = stories;
  cfg.seed = seed;
  cfg.annotators_per_story = 6;
  Planted p;
  p.data = synth::prepare(synth::generate(cfg));
  std::vector<std::string> texts;
  for (const auto& s : p.data.stories) texts.push_back(s.body);
  p.tokenizer = WordPieceTokenizer::build(texts, 400);
  p.examples = make_examples(p.tokenizer, p.data.stories, p.data.aggregated, annotation::Question::ReaderPerception,
                             128);
  return p;
}

}  // namespace

TEST_CASE("pool") {
  Matrix same(3, 4);
  RowVector v(4);
  v << 0.1, -0.2, 0.3, 0.4;
  same.rowwise() = v;
  CHECK((pool(same, Pooling::MEAN) - v).norm() < 1e-15);

  Matrix ab(2, 2);
  ab << 1, 2, 3, 6;
  CHECK(pool(ab, Pooling::MEAN) == RowVector{{2.0, 4.0}});
  CHECK(pool(ab, Pooling::CLS) == RowVector{{1.0, 2.0}});

  Rng rng(3);
  Matrix states(7, 5);
  for (Eigen::Index i = 0; i < states.size(); ++i) states.data()[i] = rng.normal();
  const RowVector mean = pool(states, Pooling::MEAN);
  for (Eigen::Index d = 0; d < 5; ++d) {
    double sum = 0;
    for (Eigen::Index r = 0; r < 7; ++r) sum += states(r, d);
    CHECK(std::abs(mean[d] - sum / 7) < 1e-6);
  }

  // Interior positions may be permuted without changing the mean.
  Matrix shuffled = states;
  std::vector<Eigen::Index> rows = {1, 2, 3, 4, 5};
  std::reverse(rows.begin(), rows.end());
  for (std::size_t i = 0; i < rows.size(); ++i) shuffled.row(static_cast<Eigen::Index>(i) + 1) = states.row(rows[i]);
  CHECK((pool(shuffled, Pooling::MEAN) - mean).norm() < 1e-12);
  CHECK_THROWS_AS(pool(Matrix(0, 3), Pooling::MEAN), InvalidInput);
}

TEST_CASE("rating loss") {
  const std::vector<double> y = {0.2, 0.5, 0.9};
  CHECK(loss_rating(y, y) == 0.0);
  CHECK(loss_rating(std::vector<double>{0.5}, std::vector<double>{0.9}) == doctest::Approx(0.08).epsilon(1e-12));
  CHECK_THROWS_AS(loss_rating(std::vector<double>{}, std::vector<double>{}), InvalidInput);

  Rng rng(11);
  std::vector<double> p(13), t(13);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.normal();
    t[i] = rng.uniform01();
  }
  double loop = 0;
  for (std::size_t i = 0; i < p.size(); ++i) loop += 0.5 * (p[i] - t[i]) * (p[i] - t[i]);
  CHECK(std::abs(loss_rating(p, t) - loop / 13) < 1e-9);
}

TEST_CASE("token loss") {
  TokenTargets ex{Vector{{0.0, 1.0}}, Vector{{0.0, 0.0}}, {1, 1}};
  CHECK(loss_token(std::span(&ex, 1)) == doctest::Approx(0.25).epsilon(1e-12));
  TokenTargets exact{Vector{{0.3, 0.7}}, Vector{{0.3, 0.7}}, {1, 1}};
  CHECK(loss_token(std::span(&exact, 1)) == 0.0);
  CHECK_THROWS_AS(loss_token(std::span<const TokenTargets>{}), InvalidInput);

  // Padding positions (mask 0) change nothing.
  Rng rng(5);
  std::vector<TokenTargets> plain, padded;
  for (int i = 0; i < 4; ++i) {
    const int n = 3 + i;
    TokenTargets a{Vector(n), Vector(n), std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1)};
    for (int j = 0; j < n; ++j) {
      a.prediction[j] = rng.normal();
      a.target[j] = rng.uniform01();
    }
    a.mask.front() = 0;  // start marker
    TokenTargets b = a;
    b.prediction.conservativeResize(n + 5);
    b.target.conservativeResize(n + 5);
    for (int j = n; j < n + 5; ++j) {
      b.prediction[j] = 100.0 + j;
      b.target[j] = -3.0;
      b.mask.push_back(0);
    }
    plain.push_back(a);
    padded.push_back(b);
  }
  CHECK(std::abs(loss_token(plain) - loss_token(padded)) < 1e-15);

  double loop = 0;
  for (const auto& e : plain) {
    double s = 0;
    int n = 0;
    for (Eigen::Index j = 0; j < e.prediction.size(); ++j) {
      if (!e.mask[static_cast<std::size_t>(j)]) continue;
      s += 0.5 * std::pow(e.prediction[j] - e.target[j], 2);
      ++n;
    }
    loop += s / n;
  }
  CHECK(std::abs(loss_token(plain) - loop / 4) < 1e-9);

  // Batch order does not matter.
  auto reversed = plain;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(std::abs(loss_token(plain) - loss_token(reversed)) < 1e-9);
}

TEST_CASE("joint loss") {
  CHECK(loss_joint(0.02, 0.01, 2.0) == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(loss_joint(0.123, 0.456, 0.0) == 0.123);
  CHECK_THROWS_AS(loss_joint(0.1, 0.1, -1.0), InvalidInput);
  const double jr = 0.0171, jt = 0.0833;
  CHECK(std::abs(loss_joint(jr, jt, 1.0) - (jr + jt)) < 1e-12);
  // Affine in lambda with slope J_t.
  const double j0 = loss_joint(jr, jt, 0.0), j1 = loss_joint(jr, jt, 1.0), j2 = loss_joint(jr, jt, 2.0);
  CHECK(std::abs((j1 - j0) - jt) < 1e-12);
  CHECK(std::abs((j2 - j1) - jt) < 1e-12);
}

TEST_CASE("logistic token loss matches cross-entropy") {
  TokenTargets ex{Vector{{0.3, -1.2, 2.0}}, Vector{{0.5, 0.0, 1.0}}, {0, 1, 1}};
  const double p1 = sigmoid(-1.2), p2 = sigmoid(2.0);
  const double expected = (-std::log(1 - p1) - std::log(p2)) / 2;
  CHECK(std::abs(loss_token_logistic(std::span(&ex, 1)) - expected) < 1e-12);
}

TEST_CASE("layer norm and gelu derivatives") {
  Rng rng(9);
  Matrix x(3, 6), g(1, 6), b(1, 6), dy(3, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < 6; ++i) {
    g(0, i) = 1 + 0.1 * rng.normal();
    b(0, i) = 0.1 * rng.normal();
  }
  for (Eigen::Index i = 0; i < dy.size(); ++i) dy.data()[i] = rng.normal();
  LayerNormCache cache;
  layer_norm_forward(x, g, b, 1e-12, &cache);
  Matrix dg = Matrix::Zero(1, 6), db = Matrix::Zero(1, 6);
  const Matrix dx = layer_norm_backward(dy, g, cache, &dg, &db);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data()[i] += 1e-6;
    xm.data()[i] -= 1e-6;
    const double num = ((layer_norm_forward(xp, g, b, 1e-12, nullptr).array() * dy.array()).sum() -
                        (layer_norm_forward(xm, g, b, 1e-12, nullptr).array() * dy.array()).sum()) /
                       2e-6;
    CHECK(grad_close(dx.data()[i], num));
  }
  for (double v : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    CHECK(std::abs(gelu_derivative(v) - (gelu(v + 1e-6) - gelu(v - 1e-6)) / 2e-6) < 1e-8);
  }
}

TEST_CASE("wordpiece") {
  const auto tok = toy_tokenizer();
  CHECK(tok.wordpiece("arrested") == std::vector<int>{7, 8});
  CHECK(tok.wordpiece("Unaffable") == std::vector<int>{14, 15, 16});
  CHECK(tok.wordpiece("xyz") == std::vector<int>{tok.unk_id()});
  const Encoding enc = tok.encode("The suspect arrested .", 32);
  CHECK(enc.ids == std::vector<int>{2, 5, 6, 7, 8, 13, 3});
  CHECK(enc.word_index == std::vector<int>{-1, 0, 1, 2, 2, 3, -1});
  CHECK(enc.kept_words == 4);

  // Truncation keeps whole words only.
  const Encoding cut = tok.encode("The suspect arrested .", 5);
  CHECK(cut.ids == std::vector<int>{2, 5, 6, 3});
  CHECK(cut.kept_words == 2);
  CHECK_THROWS_AS(tok.encode("the", 1), InvalidInput);
  CHECK_THROWS_AS(WordPieceTokenizer({"a", "b"}), SchemaError);
}

TEST_CASE("built vocabulary covers every character") {
  const auto tok = WordPieceTokenizer::build({"Police arrested the suspect.", "The suspect fled!"}, 60);
  CHECK(tok.token(0) == "[PAD]");
  CHECK(tok.id_of("suspect") != tok.unk_id());
  for (const auto& w : {"zzz", "pol", "fled"}) {
    const auto pieces = tok.wordpiece(w);
    const bool has_unk = std::find(pieces.begin(), pieces.end(), tok.unk_id()) != pieces.end();
    CHECK(has_unk == (std::string(w) == "zzz"));
  }
  const fs::path tmp = fs::temp_directory_path() / "guilt_vocab_test.txt";
  tok.save(tmp);
  CHECK(WordPieceTokenizer::load(tmp).vocab() == tok.vocab());
  fs::remove(tmp);
}

TEST_CASE("encoder matches the reference implementation") {
  const auto bundle = load_hf_bert(kData / "tiny_bert");
  const Json expected = Json::parse(read_file(kData / "tiny_bert" / "expected.json"));
  const auto ids = expected.at("ids").get<std::vector<int>>();
  Encoder encoder;
  {
    ParamStore scratch;
    Rng rng(0);
    encoder = Encoder(bundle.config, scratch, rng);
  }
  const Matrix states = encoder.forward(bundle.params, encoder.embed(bundle.params, ids), nullptr);
  const auto ref = expected.at("last_hidden_state").get<std::vector<std::vector<double>>>();
  double worst = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    for (std::size_t j = 0; j < ref[i].size(); ++j) {
      worst = std::max(worst, std::abs(states(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - ref[i][j]));
    }
  }
  CHECK(worst < 1e-10);

  const auto mlm = load_masked_lm(kData / "tiny_bert");
  const Matrix logits = mlm.model.logits(ids);
  const auto ref_logits = expected.at("logits").get<std::vector<std::vector<double>>>();
  worst = 0;
  for (std::size_t i = 0; i < ref_logits.size(); ++i) {
    for (std::size_t j = 0; j < ref_logits[i].size(); ++j) {
      worst = std::max(worst,
                       std::abs(logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - ref_logits[i][j]));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("joint loss gradients match finite differences") {
  for (auto pooling : {Pooling::MEAN, Pooling::CLS}) {
    for (auto mode : {TokenHeadMode::Linear, TokenHeadMode::Logistic}) {
      const auto tok = toy_tokenizer();
      GuiltModel model(micro_config(tok.size()), tok, {pooling, mode, 32}, 17);
      std::vector<TrainingExample> data;
      Rng rng(23);
      for (const char* text : {"the suspect arrested .", "police said a man .", "unaffable suspects"}) {
        const Encoding enc = tok.encode(text, 32);
        TrainingExample ex{text, enc.ids, rng.uniform01(), Vector::Zero(static_cast<Eigen::Index>(enc.ids.size())),
                           std::vector<std::uint8_t>(enc.ids.size(), 0)};
        for (std::size_t i = 0; i < enc.ids.size(); ++i) {
          if (enc.word_index[i] >= 0) {
            ex.mask[i] = 1;
            ex.token_target[static_cast<Eigen::Index>(i)] = rng.uniform01();
          }
        }
        data.push_back(ex);
      }
      std::vector<const TrainingExample*> batch;
      for (const auto& ex : data) batch.push_back(&ex);
      const double lambda = 0.7;
      auto objective = [&] { return batch_loss(model, batch, lambda, true, false).joint; };

      model.params().zero_grad();
      batch_loss(model, batch, lambda, true, true);
      ParamStore& store = model.params();
      std::vector<std::pair<std::size_t, std::pair<Eigen::Index, Eigen::Index>>> probes = {
          {model.rating_weight(), {0, 0}}, {model.rating_weight(), {5, 0}}, {model.rating_bias(), {0, 0}},
          {model.token_weight(), {2, 0}},  {model.token_bias(), {0, 0}},
      };
      for (const char* name : {"embeddings.word_embeddings.weight", "embeddings.position_embeddings.weight",
                               "embeddings.LayerNorm.weight", "encoder.layer.0.attention.self.query.weight",
                               "encoder.layer.0.attention.self.key.bias", "encoder.layer.1.intermediate.dense.weight",
                               "encoder.layer.1.output.LayerNorm.bias", "encoder.layer.1.attention.output.dense.weight"}) {
        const auto idx = store.index_of(name);
        const Matrix& v = store.value(idx);
        for (int k = 0; k < 2; ++k) {
          const Eigen::Index r = std::min<Eigen::Index>(v.rows() - 1, 6 + 3 * k);
          probes.push_back({idx, {r, (k * 5) % v.cols()}});
        }
      }
      for (const auto& [idx, rc] : probes) {
        const double analytic = store[idx].grad(rc.first, rc.second);
        const double numeric = numeric_grad(store, idx, rc.first, rc.second, objective);
        INFO(store[idx].name, " ", rc.first, ",", rc.second, " analytic ", analytic, " numeric ", numeric);
        CHECK(grad_close(analytic, numeric));
      }
    }
  }
}

TEST_CASE("masked-LM gradients match finite differences") {
  const auto tok = toy_tokenizer();
  MaskedLm mlm(micro_config(tok.size()), 4);
  std::vector<MaskedSequence> batch = {
      {{2, 5, 4, 7, 8, 3}, {-1, -1, 6, -1, 8, -1}},
      {{2, 9, 10, 4, 12, 13, 3}, {-1, 9, -1, 11, -1, -1, -1}},
  };
  mlm.params().zero_grad();
  mlm.loss(batch, true);
  auto objective = [&] { return mlm.loss(batch, false); };
  ParamStore& store = mlm.params();
  for (const char* name : {"embeddings.word_embeddings.weight", "cls.predictions.bias",
                           "cls.predictions.transform.dense.weight", "cls.predictions.transform.LayerNorm.weight",
                           "encoder.layer.0.attention.self.value.weight", "encoder.layer.1.output.dense.bias"}) {
    const auto idx = store.index_of(name);
    const Matrix& v = store.value(idx);
    for (int k = 0; k < 3; ++k) {
      const Eigen::Index r = std::min<Eigen::Index>(v.rows() - 1, 6 + 2 * k);
      const Eigen::Index c = (3 * k) % v.cols();
      const double analytic = store[idx].grad(r, c);
      const double numeric = numeric_grad(store, idx, r, c, objective);
      INFO(name, " ", r, ",", c, " analytic ", analytic, " numeric ", numeric);
      CHECK(grad_close(analytic, numeric));
    }
  }
}

TEST_CASE("AdamW and schedule match reference values") {
  ParamStore store;
  const auto w = store.add("w", 2, 1, true);
  const auto b = store.add("b", 1, 1, false);
  store.value(w) << 1.0, -2.0;
  store.value(b) << 0.5;
  AdamW opt(store, {0.9, 0.999, 1e-8, 0.01});
  const double gw[3][2] = {{0.3, -0.1}, {-0.5, 0.4}, {0.05, 0.2}};
  const double gb[3] = {0.2, 0.1, -0.3};
  for (int s = 0; s < 3; ++s) {
    store.grad(w) << gw[s][0], gw[s][1];
    store.grad(b) << gb[s];
    opt.step(store, 0.1);
  }
  // torch.optim.AdamW, float64
  CHECK(std::abs(store.value(w)(0, 0) - 0.9436777752189792) < 1e-12);
  CHECK(std::abs(store.value(w)(1, 0) - -2.0169018026367382) < 1e-12);
  CHECK(std::abs(store.value(b)(0, 0) - 0.31497972642103483) < 1e-12);

  // transformers' linear warmup schedule with 3 warmup steps of 10
  const double expected[] = {0.0, 1.0 / 3, 2.0 / 3, 1.0, 6.0 / 7, 5.0 / 7, 4.0 / 7, 3.0 / 7, 2.0 / 7, 1.0 / 7, 0.0};
  for (std::size_t s = 0; s <= 10; ++s) CHECK(std::abs(linear_warmup_decay(s, 3, 10) - expected[s]) < 1e-15);
  CHECK(warmup_steps(0.1, 45) == 5);
}

TEST_CASE("prediction shape, determinism and truncation") {
  const auto tok = toy_tokenizer();
  GuiltModel model(micro_config(tok.size()), tok, {Pooling::MEAN, TokenHeadMode::Linear, 8}, 2);
  const std::string text = "the suspect arrested . police said a man the suspect";
  const Prediction a = model.predict(text);
  const Prediction b = model.predict(text);
  CHECK(a.rating == b.rating);
  CHECK(a.token_scores == b.token_scores);
  // 8 positions = 2 markers + 6 subwords: "the suspect arrest ##ed . police"
  CHECK(a.token_scores.size() == 5);
  CHECK(model.predict(text + " unaffable man").rating == a.rating);
  CHECK_THROWS_AS(model.predict(""), InvalidInput);

  model.params().value(model.rating_weight()).setZero();
  model.params().value(model.rating_bias())(0, 0) = 0.37;
  CHECK(model.predict("police said").rating == 0.37);
  CHECK(model.predict("a man arrested the suspect").rating == 0.37);
}

TEST_CASE("checkpoint round trip") {
  const auto tok = toy_tokenizer();
  GuiltModel model(micro_config(tok.size()), tok, {Pooling::CLS, TokenHeadMode::Logistic, 16}, 8);
  const fs::path dir = fs::temp_directory_path() / "guilt_ckpt_test";
  fs::remove_all(dir);
  save_checkpoint(model, dir, Json{{"note", "x"}});
  const GuiltModel loaded = load_checkpoint(dir);
  const auto p0 = model.predict("the suspect arrested .");
  const auto p1 = loaded.predict("the suspect arrested .");
  CHECK(p0.rating == p1.rating);
  CHECK(p0.token_scores == p1.token_scores);
  CHECK(loaded.options().pooling == Pooling::CLS);
  CHECK(load_checkpoint_config(dir).at("run").at("note") == "x");

  MaskedLm mlm(micro_config(tok.size()), 3);
  save_encoder(mlm, tok, dir / "enc");
  const auto bundle = load_encoder(dir / "enc");
  GuiltModel from = model_from_encoder(bundle, {}, 1);
  CHECK(from.params().value(from.params().index_of("encoder.layer.1.output.dense.weight")) ==
        mlm.params().value(mlm.params().index_of("encoder.layer.1.output.dense.weight")));
  fs::remove_all(dir);
}

TEST_CASE("training reduces the loss and learns planted rationales") {
  const Planted p = planted(50, 1);
  REQUIRE(p.examples.size() >= 45);
  GuiltModel model(EncoderConfig::tiny(p.tokenizer.size()), p.tokenizer, {}, 0);
  TrainConfig cfg;
  cfg.lambda = 1.0;
  cfg.token_supervision = true;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 8;
  cfg.epochs = 5;
  const auto result = train(model, p.examples, cfg);
  REQUIRE(result.epoch_losses.size() == 5);
  CHECK(result.epoch_losses.back() <= 0.5 * result.epoch_losses.front());

  std::vector<double> predicted, target;
  for (const auto& ex : p.examples) {
    const auto pass = model.forward_ids(ex.ids, false);
    for (std::size_t i = 0; i < ex.mask.size(); ++i) {
      if (!ex.mask[i]) continue;
      predicted.push_back(pass.token_out[static_cast<Eigen::Index>(i)]);
      target.push_back(ex.token_target[static_cast<Eigen::Index>(i)]);
    }
  }
  const double r = stats::pearson(predicted, target);
  MESSAGE("token-head correlation with planted rationales: ", r);
  CHECK(r > 0.5);
}

TEST_CASE("training is deterministic and checkpoints fire") {
  const Planted p = planted(20, 2);
  auto run = [&] {
    GuiltModel model(micro_config(p.tokenizer.size()), p.tokenizer, {}, 5);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.checkpoint_every = 3;
    cfg.learning_rate = 1e-3;
    std::vector<std::size_t> steps;
    const auto res = train(model, p.examples, cfg, [&](std::size_t s, const GuiltModel&) { steps.push_back(s); });
    return std::make_pair(res.step_losses, steps);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  const std::size_t total = 2 * steps_per_epoch(p.examples.size(), 4);
  CHECK(a.second.back() == total);
  CHECK(a.second.front() == 3);
}

TEST_CASE("non-finite loss aborts training") {
  const auto tok = toy_tokenizer();
  GuiltModel model(micro_config(tok.size()), tok, {}, 1);
  const Encoding enc = tok.encode("the suspect", 16);
  std::vector<TrainingExample> data = {{"bad", enc.ids, std::nan(""), Vector::Zero(4), {0, 1, 1, 0}}};
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(model, data, cfg), TrainingDiverged);
  cfg.lambda = -1;
  CHECK_THROWS_AS(train(model, data, cfg), InvalidInput);
}

TEST_CASE("masking is reproducible and follows the 80/10/10 split") {
  const auto tok = toy_tokenizer();
  std::vector<int> ids(2000);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = 5 + static_cast<int>(i % 13);
  ids.front() = tok.cls_id();
  ids.back() = tok.sep_id();
  Rng r1(42), r2(42);
  const auto a = mask_tokens(ids, tok, 0.15, r1);
  const auto b = mask_tokens(ids, tok, 0.15, r2);
  CHECK(a.ids == b.ids);
  CHECK(a.labels == b.labels);
  CHECK(a.labels.front() == -1);
  CHECK(a.labels.back() == -1);
  std::size_t selected = 0, masked = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (a.labels[i] < 0) continue;
    ++selected;
    masked += a.ids[i] == tok.mask_id() ? 1 : 0;
  }
  CHECK(selected > 240);
  CHECK(selected < 360);
  CHECK(static_cast<double>(masked) / static_cast<double>(selected) > 0.7);
}

TEST_CASE("masked-LM pretraining lowers dev loss") {
  const auto texts = synth::unlabeled_texts(120, 3);
  const auto tok = WordPieceTokenizer::build(texts, 300);
  std::vector<std::vector<int>> seqs;
  for (const auto& t : texts) seqs.push_back(tok.encode(t, 128).ids);
  std::span<const std::vector<int>> all(seqs);
  MaskedLm mlm(micro_config(tok.size()), 1);
  MlmConfig cfg;
  cfg.steps = 30;
  cfg.batch_size = 8;
  cfg.eval_every = 10;
  cfg.learning_rate = 2e-3;
  cfg.max_length = 128;
  const auto res = mlm_pretrain(mlm, tok, all.subspan(0, 100), all.subspan(100, 10), all.subspan(110, 10), cfg);
  REQUIRE(res.dev_loss.size() == 4);
  CHECK(res.dev_loss[1] < res.dev_loss[0]);
  CHECK(res.dev_loss[2] < res.dev_loss[1]);
  CHECK(res.dev_loss[3] < res.dev_loss[2]);

  cfg.batch_size = 200;
  CHECK_THROWS_AS(mlm_pretrain(mlm, tok, all.subspan(0, 100), all.subspan(100, 10), all.subspan(110, 10), cfg),
                  InvalidInput);
}
