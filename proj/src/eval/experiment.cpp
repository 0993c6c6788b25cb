#include "guilt/eval/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "guilt/common/error.hpp"
#include "guilt/common/hash.hpp"
#include "guilt/common/io.hpp"
#include "guilt/common/random.hpp"
#include "guilt/eval/significance.hpp"
#include "guilt/model/checkpoint.hpp"

namespace guilt::eval {

namespace fs = std::filesystem;
using annotation::Question;

namespace {

constexpr const char* kBaselineRow = "Mean Baseline";

std::string question_name(Question q) { return std::string(annotation::short_name(q)); }

Question question_from_short(const std::string& s) {
  if (s == "RP") return Question::ReaderPerception;
  if (s == "AB") return Question::AuthorBelief;
  throw InvalidInput("unknown guilt question: " + s);
}

// Fixed-point text so reports do not depend on locale or shortest-repr rules.
std::string fixed(double v, int digits = 6) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

struct EncoderCache {
  std::map<std::string, model::EncoderBundle> bundles;

  const model::EncoderBundle& get(const std::string& source, std::span<const corpus::Story> stories, std::uint64_t seed) {
    auto it = bundles.find(source);
    if (it != bundles.end()) return it->second;
    model::EncoderBundle b = build_encoder(source, stories, seed);
    return bundles.emplace(source, std::move(b)).first->second;
  }
};

// Identifies an encoder source for run keys without hashing large weight files.
std::string encoder_identity(const std::string& source) {
  if (source == "tiny") return "tiny";
  const fs::path dir(source);
  std::string id = fs::absolute(dir).lexically_normal().string();
  for (const char* f : {"config.json", "vocab.txt"}) {
    if (fs::exists(dir / f)) id += ":" + sha256_file(dir / f);
  }
  for (const char* f : {"params.safetensors", "model.safetensors"}) {
    if (fs::exists(dir / f)) id += ":" + std::to_string(fs::file_size(dir / f));
  }
  return id;
}

std::vector<model::TrainingExample> subset(std::span<const model::TrainingExample> all,
                                           std::span<const std::size_t> idx) {
  std::vector<model::TrainingExample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

model::EncoderBundle build_encoder(const std::string& source, std::span<const corpus::Story> stories,
                                  std::uint64_t seed) {
  if (source != "tiny") return model::load_encoder(source);
  model::EncoderBundle b;
  std::vector<std::string> texts;
  for (const auto& s : stories) texts.push_back(s.body);
  b.tokenizer = model::WordPieceTokenizer::build(texts, 2000, 2);
  b.config = model::EncoderConfig::tiny(b.tokenizer.size());
  Rng rng(derive_seed(seed, 0x7e4));
  model::Encoder enc(b.config, b.params, rng);
  return b;
}

std::string Variant::name() const {
  std::string n = pooling == model::Pooling::CLS ? "CLS" : "MEAN";
  if (pretrained) n += "+pretrain";
  if (token_supervision) n += "+token";
  return n;
}

Variant Variant::parse(const std::string& name) {
  Variant v;
  std::size_t start = 0;
  bool first = true;
  while (start <= name.size()) {
    const auto end = std::min(name.find('+', start), name.size());
    const std::string part = name.substr(start, end - start);
    if (first) {
      if (part != "CLS" && part != "MEAN") throw InvalidInput("unknown variant: " + name);
      v.pooling = model::pooling_from_string(part);
      first = false;
    } else if (part == "pretrain" && !v.pretrained && !v.token_supervision) {
      v.pretrained = true;
    } else if (part == "token" && !v.token_supervision) {
      v.token_supervision = true;
    } else {
      throw InvalidInput("unknown variant: " + name);
    }
    start = end + 1;
  }
  return v;
}

std::vector<Variant> all_variants() {
  std::vector<Variant> out;
  for (auto pooling : {model::Pooling::CLS, model::Pooling::MEAN}) {
    for (bool pre : {false, true}) {
      for (bool tok : {false, true}) out.push_back({pooling, pre, tok});
    }
  }
  return out;
}

void ExperimentPlan::validate() const {
  if (repeats == 0) throw InvalidInput("plan needs at least one repeat");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidInput("test_fraction must be in (0, 1)");
  if (folds < 2) throw InvalidInput("plan needs at least 2 folds");
  if (questions.empty() || variants.empty()) throw InvalidInput("plan needs questions and variants");
  if (bootstrap_resamples == 0) throw InvalidInput("bootstrap_resamples must be positive");
  std::set<std::string> seen;
  for (const auto& v : variants) {
    if (!seen.insert(v.name()).second) throw InvalidInput("duplicate variant " + v.name());
    if (v.pretrained && pretrained_encoder.empty()) {
      throw InvalidInput("variant " + v.name() + " needs pretrained_encoder");
    }
  }
  for (auto q : questions) {
    if (q == Question::AttentionCheck) throw InvalidInput("attention checks are not a modelling target");
  }
  for (const auto* g : {&grid_rating_only, &grid_token}) {
    for (const auto& c : *g) c.validate();
  }
}

std::vector<model::TrainConfig> ExperimentPlan::grid_for(const Variant& v, Question q) const {
  const auto& custom = v.token_supervision ? grid_token : grid_rating_only;
  auto grid = custom.empty() ? reference_grid(v.pooling, v.token_supervision, q) : custom;
  for (auto& c : grid) {
    c.pooling = v.pooling;
    c.question = q;
    c.token_supervision = v.token_supervision;
    if (!v.token_supervision) c.lambda = 0.0;
    c.oversample_tails = oversample_tails;
  }
  return grid;
}

Json to_json(const ExperimentPlan& p) {
  Json qs = Json::array();
  for (auto q : p.questions) qs.push_back(question_name(q));
  Json vs = Json::array();
  for (const auto& v : p.variants) vs.push_back(v.name());
  auto grid = [](const std::vector<model::TrainConfig>& g) {
    Json a = Json::array();
    for (const auto& c : g) a.push_back(model::to_json(c));
    return a;
  };
  return Json{{"repeats", p.repeats},
              {"test_fraction", p.test_fraction},
              {"folds", p.folds},
              {"questions", qs},
              {"variants", vs},
              {"encoder", p.encoder},
              {"pretrained_encoder", p.pretrained_encoder},
              {"max_length", p.max_length},
              {"seed", p.seed},
              {"bootstrap_resamples", p.bootstrap_resamples},
              {"oversample_tails", p.oversample_tails},
              {"grid_rating_only", grid(p.grid_rating_only)},
              {"grid_token", grid(p.grid_token)}};
}

ExperimentPlan plan_from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError("plan must be a JSON object");
  static const std::set<std::string> known = {"repeats", "test_fraction", "folds", "questions", "variants",
                                              "encoder", "pretrained_encoder", "max_length", "seed",
                                              "bootstrap_resamples", "oversample_tails", "grid_rating_only",
                                              "grid_token"};
  for (const auto& [k, _] : j.items()) {
    if (!known.contains(k)) throw SchemaError("unknown plan field: " + k);
  }
  ExperimentPlan p;
  try {
    p.repeats = j.value("repeats", p.repeats);
    p.test_fraction = j.value("test_fraction", p.test_fraction);
    p.folds = j.value("folds", p.folds);
    if (j.contains("questions")) {
      p.questions.clear();
      for (const auto& q : j.at("questions")) p.questions.push_back(question_from_short(q.get<std::string>()));
    }
    if (j.contains("variants")) {
      p.variants.clear();
      for (const auto& v : j.at("variants")) p.variants.push_back(Variant::parse(v.get<std::string>()));
    }
    p.encoder = j.value("encoder", p.encoder);
    p.pretrained_encoder = j.value("pretrained_encoder", p.pretrained_encoder);
    p.max_length = j.value("max_length", p.max_length);
    p.seed = j.value("seed", p.seed);
    p.bootstrap_resamples = j.value("bootstrap_resamples", p.bootstrap_resamples);
    p.oversample_tails = j.value("oversample_tails", p.oversample_tails);
    if (j.contains("grid_rating_only")) {
      for (const auto& c : j.at("grid_rating_only")) p.grid_rating_only.push_back(model::train_config_from_json(c));
    }
    if (j.contains("grid_token")) {
      for (const auto& c : j.at("grid_token")) p.grid_token.push_back(model::train_config_from_json(c));
    }
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed plan: ") + e.what());
  }
  p.validate();
  return p;
}

std::string split_hash(const Split& s) {
  return sha256_hex(canonical_dump(Json{{"train", s.train}, {"test", s.test}}));
}

Split make_split(std::span<const std::string> story_ids, double test_fraction, std::uint64_t seed) {
  const std::size_t n = story_ids.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n_test >= n) throw InvalidInput("too few stories for a train/test split");
  std::vector<std::string> ids(story_ids.begin(), story_ids.end());
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw InvalidInput("duplicate story id in split");
  Rng rng(seed);
  rng.shuffle(ids);
  Split s;
  s.test.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  s.hash = split_hash(s);
  return s;
}

Json to_json(const RunResult& r) {
  return Json{{"variant", r.variant.name()},
              {"question", question_name(r.question)},
              {"repeat", r.repeat},
              {"split_hash", r.split_hash},
              {"search", to_json(r.search)},
              {"selected", model::to_json(r.selected)},
              {"test_mse", r.test_mse},
              {"test_ids", r.test_ids},
              {"test_predictions", r.test_predictions}};
}

RunResult run_result_from_json(const Json& j) {
  try {
    RunResult r;
    r.variant = Variant::parse(j.at("variant").get<std::string>());
    r.question = question_from_short(j.at("question").get<std::string>());
    r.repeat = j.at("repeat").get<std::size_t>();
    r.split_hash = j.at("split_hash").get<std::string>();
    r.search = grid_result_from_json(j.at("search"));
    r.selected = model::train_config_from_json(j.at("selected"));
    r.test_mse = j.at("test_mse").get<double>();
    r.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    r.test_predictions = j.at("test_predictions").get<std::vector<double>>();
    return r;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed run result: ") + e.what());
  }
}

namespace {

Json splits_json(const ExperimentRecord& rec) {
  Json splits = Json::array();
  for (const auto& s : rec.splits) splits.push_back(Json{{"train", s.train}, {"test", s.test}, {"hash", s.hash}});
  Json base = Json::array();
  for (const auto& b : rec.baselines) {
    base.push_back(Json{{"question", question_name(b.question)}, {"repeat", b.repeat}, {"split_hash", b.split_hash},
                        {"test_mse", b.test_mse}});
  }
  return Json{{"splits", splits}, {"baselines", base}};
}

}  // namespace

ExperimentRecord run_experiment(const ExperimentPlan& plan, std::span<const corpus::Story> stories,
                                std::span<const annotation::AggregatedStory> aggregated, const fs::path& out_dir,
                                const ProgressFn& progress) {
  plan.validate();
  ExperimentRecord rec;
  rec.plan = plan;

  std::vector<std::string> ids;
  for (const auto& a : aggregated) {
    bool all = true;
    for (auto q : plan.questions) all = all && a.target(q) != nullptr;
    if (all) ids.push_back(a.story_id);
  }
  for (std::size_t r = 0; r < plan.repeats; ++r) rec.splits.push_back(make_split(ids, plan.test_fraction, derive_seed(plan.seed, r)));

  std::map<std::string, const annotation::AggregatedStory*> by_id;
  for (const auto& a : aggregated) by_id.emplace(a.story_id, &a);
  for (std::size_t r = 0; r < plan.repeats; ++r) {
    for (auto q : plan.questions) {
      std::vector<double> train, test;
      for (const auto& id : rec.splits[r].train) train.push_back(by_id.at(id)->target(q)->mean_rating);
      for (const auto& id : rec.splits[r].test) test.push_back(by_id.at(id)->target(q)->mean_rating);
      rec.baselines.push_back({q, r, rec.splits[r].hash, mean_baseline(train, test)});
    }
  }
  fs::create_directories(out_dir / "runs");
  write_file_atomic(out_dir / "plan.json", to_json(plan).dump(2) + "\n");
  write_file_atomic(out_dir / "splits.json", canonical_dump(splits_json(rec)) + "\n");

  EncoderCache encoders;
  for (const auto& variant : plan.variants) {
    const std::string& source = variant.pretrained ? plan.pretrained_encoder : plan.encoder;
    const std::string identity = encoder_identity(source);
    for (auto q : plan.questions) {
      const auto grid = plan.grid_for(variant, q);
      Json grid_json = Json::array();
      for (const auto& c : grid) grid_json.push_back(model::to_json(c));
      for (std::size_t r = 0; r < plan.repeats; ++r) {
        const Split& split = rec.splits[r];
        const Json key_doc{{"variant", variant.name()}, {"question", question_name(q)}, {"repeat", r},
                           {"split", split.hash},       {"grid", grid_json},            {"folds", plan.folds},
                           {"encoder", identity},       {"max_length", plan.max_length}, {"seed", plan.seed}};
        const std::string key = sha256_hex(canonical_dump(key_doc));
        const fs::path result_path = out_dir / "runs" / key / "result.json";
        const std::string label = variant.name() + " " + question_name(q) + " repeat " + std::to_string(r);
        if (fs::exists(result_path)) {
          auto cached = run_result_from_json(Json::parse(read_file(result_path)));
          if (cached.split_hash != split.hash) throw SchemaError("split mismatch in " + result_path.string());
          rec.runs.push_back(std::move(cached));
          if (progress) progress(label + ": reused");
          continue;
        }

        const auto& bundle = encoders.get(source, stories, plan.seed);
        std::set<std::string> train_ids(split.train.begin(), split.train.end());
        std::vector<corpus::Story> train_stories, test_stories;
        std::vector<annotation::AggregatedStory> train_agg, test_agg;
        for (const auto& s : stories) {
          if (!by_id.contains(s.id)) continue;
          (train_ids.contains(s.id) ? train_stories : test_stories).push_back(s);
          (train_ids.contains(s.id) ? train_agg : test_agg).push_back(*by_id.at(s.id));
        }
        const auto train_ex = model::make_examples(bundle.tokenizer, train_stories, train_agg, q, plan.max_length);
        auto test_ex = model::make_examples(bundle.tokenizer, test_stories, test_agg, q, plan.max_length);
        std::erase_if(test_ex, [&](const auto& ex) {
          return !std::binary_search(split.test.begin(), split.test.end(), ex.story_id);
        });
        const model::ModelOptions options{variant.pooling, model::TokenHeadMode::Linear, plan.max_length};

        const FoldRunner runner = [&](const model::TrainConfig& cfg, std::span<const std::size_t> tr,
                                      std::span<const std::size_t> dev) {
          auto m = model::model_from_encoder(bundle, options, cfg.seed);
          const auto tr_ex = subset(train_ex, tr);
          const auto dev_ex = subset(train_ex, dev);
          Curve curve;
          model::train(m, tr_ex, cfg, [&](std::size_t step, const model::GuiltModel& cur) {
            curve.steps.push_back(step);
            curve.dev_mse.push_back(model::rating_mse(cur, dev_ex));
          });
          return curve;
        };
        RunResult res;
        res.variant = variant;
        res.question = q;
        res.repeat = r;
        res.split_hash = split.hash;
        res.search = cv_grid_search(train_ex.size(), grid, plan.folds, derive_seed(plan.seed, 1000 + r), runner);
        res.selected = grid[res.search.best];
        res.selected.max_steps = res.search.final_steps;
        auto final_model = model::model_from_encoder(bundle, options, res.selected.seed);
        model::train(final_model, train_ex, res.selected);
        if (test_ex.empty()) throw InvalidInput("no test examples for " + label);
        double sse = 0.0;
        for (const auto& ex : test_ex) {
          const double pred = final_model.forward_ids(ex.ids, false).rating;
          res.test_ids.push_back(ex.story_id);
          res.test_predictions.push_back(pred);
          sse += (pred - ex.rating) * (pred - ex.rating);
        }
        res.test_mse = sse / static_cast<double>(test_ex.size());
        fs::create_directories(result_path.parent_path());
        write_file_atomic(result_path, to_json(res).dump(1) + "\n");
        if (progress) progress(label + ": test MSE " + fixed(res.test_mse));
        rec.runs.push_back(std::move(res));
      }
    }
  }
  return rec;
}

ExperimentRecord load_experiment(const fs::path& out_dir) {
  ExperimentRecord rec;
  rec.plan = plan_from_json(Json::parse(read_file(out_dir / "plan.json")));
  const Json sj = Json::parse(read_file(out_dir / "splits.json"));
  for (const auto& s : sj.at("splits")) {
    Split split{s.at("train").get<std::vector<std::string>>(), s.at("test").get<std::vector<std::string>>(), ""};
    split.hash = split_hash(split);
    if (split.hash != s.at("hash").get<std::string>()) throw SchemaError("splits.json hash mismatch");
    rec.splits.push_back(std::move(split));
  }
  for (const auto& b : sj.at("baselines")) {
    rec.baselines.push_back({question_from_short(b.at("question").get<std::string>()), b.at("repeat").get<std::size_t>(),
                             b.at("split_hash").get<std::string>(), b.at("test_mse").get<double>()});
  }
  std::vector<fs::path> files;
  if (fs::exists(out_dir / "runs")) {
    for (const auto& e : fs::directory_iterator(out_dir / "runs")) {
      if (fs::exists(e.path() / "result.json")) files.push_back(e.path() / "result.json");
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto r = run_result_from_json(Json::parse(read_file(f)));
    if (r.repeat >= rec.splits.size() || rec.splits[r.repeat].hash != r.split_hash) {
      throw SchemaError("run result does not match the recorded split: " + f.string());
    }
    rec.runs.push_back(std::move(r));
  }
  return rec;
}

EvalReport make_report(const ExperimentRecord& record) {
  const auto& plan = record.plan;
  EvalReport rep;
  std::vector<std::string> rows = {kBaselineRow};
  for (const auto& v : plan.variants) rows.push_back(v.name());

  // row -> question -> repeat -> mse
  std::map<std::string, std::map<Question, std::map<std::size_t, double>>> mse;
  for (const auto& b : record.baselines) mse[kBaselineRow][b.question][b.repeat] = b.test_mse;
  for (const auto& r : record.runs) mse[r.variant.name()][r.question][r.repeat] = r.test_mse;

  std::size_t incomplete = 0;
  for (auto q : plan.questions) {
    for (const auto& row : rows) {
      CellSummary c;
      c.row = row;
      c.question = q;
      for (const auto& [repeat, v] : mse[row][q]) c.mse.push_back(v);
      if (c.mse.size() != plan.repeats) ++incomplete;
      if (c.mse.empty()) {
        c.mean = c.std = c.ci_lo = c.ci_hi = std::numeric_limits<double>::quiet_NaN();
      } else {
        c.mean = std::accumulate(c.mse.begin(), c.mse.end(), 0.0) / static_cast<double>(c.mse.size());
        c.std = sample_std(c.mse);
        std::tie(c.ci_lo, c.ci_hi) = bootstrap_ci(c.mse, 0.95, plan.bootstrap_resamples, plan.seed);
      }
      rep.cells.push_back(std::move(c));
    }
    for (const auto& a : rows) {
      for (const auto& b : rows) {
        if (a == b) continue;
        std::vector<double> xa, xb;
        for (const auto& [repeat, v] : mse[a][q]) {
          auto it = mse[b][q].find(repeat);
          if (it == mse[b][q].end()) continue;
          xa.push_back(v);
          xb.push_back(it->second);
        }
        if (xa.size() < 5) continue;
        PairwiseTest t;
        t.question = q;
        t.a = a;
        t.b = b;
        try {
          const auto w = wilcoxon_signed_rank(xa, xb);
          t.n = w.n;
          t.w_plus = w.w_plus;
          t.p = w.p;
          t.exact = w.exact;
        } catch (const DegenerateStatistic&) {
          t.p = std::numeric_limits<double>::quiet_NaN();
        }
        rep.tests.push_back(t);
      }
    }
  }
  rep.metadata = Json{{"bootstrap_resamples", plan.bootstrap_resamples},
                      {"bootstrap_level", 0.95},
                      {"bootstrap_method", "percentile, linear interpolation"},
                      {"std", "sample (n - 1)"},
                      {"wilcoxon", "one-sided, A lower MSE than B; exact for n <= 25, tie-corrected normal above"},
                      {"multiple_comparison_correction", "none"},
                      {"repeats", plan.repeats},
                      {"incomplete_cells", incomplete},
                      {"plan", to_json(plan)}};
  return rep;
}

std::string table_csv(const EvalReport& r) {
  std::vector<std::string> rows;
  std::vector<Question> qs;
  for (const auto& c : r.cells) {
    if (std::find(rows.begin(), rows.end(), c.row) == rows.end()) rows.push_back(c.row);
    if (std::find(qs.begin(), qs.end(), c.question) == qs.end()) qs.push_back(c.question);
  }
  std::string out = "model";
  for (auto q : qs) out += "," + question_name(q) + "_mean," + question_name(q) + "_std";
  out += "\n";
  for (const auto& row : rows) {
    out += row;
    for (auto q : qs) {
      for (const auto& c : r.cells) {
        if (c.row == row && c.question == q) out += "," + fixed(c.mean) + "," + fixed(c.std);
      }
    }
    out += "\n";
  }
  return out;
}

std::string intervals_csv(const EvalReport& r) {
  std::string out = "model,question,repeats,mean,ci_lo,ci_hi\n";
  for (const auto& c : r.cells) {
    out += c.row + "," + question_name(c.question) + "," + std::to_string(c.mse.size()) + "," + fixed(c.mean) + "," +
           fixed(c.ci_lo) + "," + fixed(c.ci_hi) + "\n";
  }
  return out;
}

std::string significance_csv(const EvalReport& r) {
  std::string out = "question,a,b,n,w_plus,p,exact\n";
  for (const auto& t : r.tests) {
    out += question_name(t.question) + "," + t.a + "," + t.b + "," + std::to_string(t.n) + "," + fixed(t.w_plus, 1) +
           "," + sci(t.p) + "," + (t.exact ? "true" : "false") + "\n";
  }
  return out;
}

void write_report(const EvalReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    cells.push_back(Json{{"model", c.row}, {"question", question_name(c.question)}, {"mse", c.mse},
                         {"mean", fixed(c.mean)}, {"std", fixed(c.std)}, {"ci", {fixed(c.ci_lo), fixed(c.ci_hi)}}});
  }
  write_file_atomic(dir / "table.csv", table_csv(r));
  write_file_atomic(dir / "intervals.csv", intervals_csv(r));
  write_file_atomic(dir / "significance.csv", significance_csv(r));
  write_file_atomic(dir / "report.json", Json{{"cells", cells}, {"metadata", r.metadata}}.dump(2) + "\n");
}

}  // namespace guilt::eval
