#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "guilt/common/error.hpp"
#include "guilt/common/io.hpp"
#include "guilt/common/random.hpp"
#include "guilt/eval/experiment.hpp"
#include "guilt/eval/grid.hpp"
#include "guilt/eval/significance.hpp"
#include "guilt/synth/synthetic.hpp"

using namespace guilt;
using namespace guilt::eval;
namespace fs = std::filesystem;

namespace {

// P(W+ <= observed) by listing all 2^n sign assignments of the midranks.
double enumerated_p(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return std::abs(d[x]) < std::abs(d[y]); });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = (static_cast<double>(i + j) + 2.0) / 2.0;
    i = j + 1;
  }
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) observed += rank[i];
  }
  std::size_t at_most = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1) w += rank[i];
    }
    if (w <= observed + 1e-9) ++at_most;
  }
  return static_cast<double>(at_most) / static_cast<double>(std::uint64_t{1} << n);
}

std::string slurp(const fs::path& p) { return read_file(p); }

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("guilt_eval_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("mean baseline") {
  const std::vector<double> same = {0.7, 0.7, 0.7};
  CHECK(mean_baseline(same, same) == 0.0);
  const std::vector<double> train = {0.3, 0.7}, test = {0.4, 0.6};
  CHECK(mean_baseline(train, test) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK_THROWS_AS(mean_baseline({}, test), InvalidInput);
  CHECK_THROWS_AS(mean_baseline(train, {}), InvalidInput);
}

TEST_CASE("wilcoxon matches exhaustive enumeration for n <= 12") {
  Rng rng(21);
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int trial = 0; trial < 25; ++trial) {
      std::vector<double> a(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        // Coarse grid values create ties and zero differences.
        a[i] = std::round(rng.normal() * 4) / 4;
        b[i] = std::round((rng.normal() + 0.3) * 4) / 4;
      }
      const bool all_zero = std::equal(a.begin(), a.end(), b.begin());
      if (all_zero) continue;
      std::size_t nonzero = 0;
      for (std::size_t i = 0; i < n; ++i) nonzero += a[i] != b[i];
      const auto r = wilcoxon_signed_rank(a, b);
      CHECK(r.exact);
      CHECK(r.n == nonzero);
      CHECK(r.p == doctest::Approx(enumerated_p(a, b)).epsilon(1e-12));
    }
  }
}

TEST_CASE("wilcoxon reference values") {
  // Eight paired MSEs: 5 of 8 favour A, the others hold ranks 1, 2 and 3 (frozen from scipy).
  const std::vector<double> a = {0.0101, 0.0123, 0.0093, 0.0112, 0.0106, 0.0097, 0.0126, 0.0090};
  const std::vector<double> b = {0.0118, 0.0121, 0.0117, 0.0109, 0.0119, 0.0122, 0.0120, 0.0116};
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK(r.w_plus == 6.0);
  CHECK(r.p == doctest::Approx(0.0546875).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(enumerated_p(a, b)).epsilon(1e-12));

  // Large samples use the normal approximation (frozen from scipy, no continuity correction).
  std::vector<double> x(40), y(40), xr(40), yr(40);
  for (int i = 0; i < 40; ++i) {
    x[i] = std::sin(i);
    y[i] = x[i] + 0.3 + 0.8 * std::cos(3 * i);
    xr[i] = std::nearbyint(std::sin(i) * 10) / 10;
    yr[i] = std::nearbyint((xr[i] + 0.3 + 0.8 * std::cos(3 * i)) * 10) / 10;
  }
  const auto big = wilcoxon_signed_rank(x, y);
  CHECK_FALSE(big.exact);
  CHECK(big.w_plus == 193.0);
  CHECK(big.p == doctest::Approx(0.0017684304337889402).epsilon(1e-9));
  const auto tied = wilcoxon_signed_rank(xr, yr);
  CHECK(tied.n == 39);
  CHECK(tied.w_plus == 176.0);
  CHECK(tied.p == doctest::Approx(0.0014040175931221198).epsilon(1e-9));

  CHECK_THROWS_AS(wilcoxon_signed_rank(a, a), DegenerateStatistic);
  CHECK_THROWS_AS(wilcoxon_signed_rank(std::span(a).first(0), std::span(b).first(0)), InvalidInput);
  CHECK_THROWS_AS(wilcoxon_signed_rank(a, std::span(b).first(7)), InvalidInput);
}

TEST_CASE("bootstrap interval properties") {
  const std::vector<double> constant(20, 0.0123);
  const auto [clo, chi] = bootstrap_ci(constant, 0.95, 2000, 1);
  CHECK(clo == 0.0123);
  CHECK(chi == 0.0123);

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(3 + trial % 20);
    for (auto& x : v) x = rng.normal() * (1 + trial);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const auto [lo, hi] = bootstrap_ci(v, 0.95, 500, trial);
    CHECK(lo <= mean);
    CHECK(mean <= hi);
    CHECK(bootstrap_ci(v, 0.95, 500, trial) == std::make_pair(lo, hi));
  }
  CHECK_THROWS_AS(bootstrap_ci({}, 0.95, 100, 0), InvalidInput);
}

TEST_CASE("bootstrap coverage of the true mean is 95 +/- 2 percent") {
  Rng rng(2024);
  int covered = 0;
  const int sims = 1000;
  for (int s = 0; s < sims; ++s) {
    std::vector<double> v(20);
    for (auto& x : v) x = 0.0119 + 0.001 * rng.normal();
    const auto [lo, hi] = bootstrap_ci(v, 0.95, 10000, static_cast<std::uint64_t>(s));
    covered += lo <= 0.0119 && 0.0119 <= hi;
  }
  const double coverage = static_cast<double>(covered) / sims;
  MESSAGE("coverage ", coverage);
  CHECK(coverage >= 0.93);
  CHECK(coverage <= 0.97);
}

TEST_CASE("checkpoint rule and folds") {
  const std::vector<std::size_t> best = {400, 400, 400, 500, 300};
  CHECK(checkpoint_rule(best, 100) == 500);
  const std::vector<std::size_t> small = {100};
  CHECK(checkpoint_rule(small, 100) == 100);
  const std::vector<std::size_t> mid = {100, 200};  // 1.25 x 150 = 187.5
  CHECK(checkpoint_rule(mid, 100) == 200);
  CHECK_THROWS_AS(checkpoint_rule({}, 100), InvalidInput);

  const auto folds = kfold(23, 5, 9);
  std::vector<std::size_t> all;
  for (const auto& f : folds) {
    CHECK((f.size() == 4 || f.size() == 5));
    all.insert(all.end(), f.begin(), f.end());
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
  CHECK(kfold(23, 5, 9) == folds);
}

TEST_CASE("reference grid") {
  const auto plain = reference_grid(model::Pooling::MEAN, false, annotation::Question::ReaderPerception);
  REQUIRE(plain.size() == 4);
  std::set<std::pair<double, std::uint64_t>> lr_seed;
  for (const auto& c : plain) {
    lr_seed.insert({c.learning_rate, c.seed});
    CHECK(c.epochs == 5);
    CHECK(c.batch_size == 16);
    CHECK(c.checkpoint_every == 100);
    CHECK(c.warmup_ratio == 0.1);
  }
  CHECK(lr_seed.size() == 4);
  const auto token = reference_grid(model::Pooling::CLS, true, annotation::Question::AuthorBelief);
  REQUIRE(token.size() == 4);
  std::set<std::pair<double, double>> lr_lambda;
  for (const auto& c : token) {
    lr_lambda.insert({c.learning_rate, c.lambda});
    CHECK(c.seed == 0);
    CHECK(c.token_supervision);
  }
  CHECK(lr_lambda == std::set<std::pair<double, double>>{{3e-5, 1}, {3e-5, 2}, {5e-5, 1}, {5e-5, 2}});
}

namespace {

// Least squares y = w.x + noise fitted by minibatch SGD; only the learning
// rate differs between configs, and the smaller one barely moves in the budget.
struct LinearProblem {
  std::vector<std::vector<double>> x;
  std::vector<double> y;

  explicit LinearProblem(std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<double> w = {0.8, -0.5, 0.3};
    for (int i = 0; i < 120; ++i) {
      std::vector<double> row(3);
      double t = 0.5;
      for (int k = 0; k < 3; ++k) {
        row[k] = rng.normal();
        t += w[k] * row[k];
      }
      x.push_back(row);
      y.push_back(t + 0.3 * rng.normal());
    }
  }

  Curve run(const model::TrainConfig& cfg, std::span<const std::size_t> train, std::span<const std::size_t> dev) const {
    std::vector<double> w(3, 0.0);
    double b = 0.0;
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train.begin(), train.end());
    Curve curve;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        std::vector<double> gw(3, 0.0);
        double gb = 0.0;
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        for (std::size_t i = start; i < end; ++i) {
          const auto& r = x[order[i]];
          const double e = w[0] * r[0] + w[1] * r[1] + w[2] * r[2] + b - y[order[i]];
          for (int k = 0; k < 3; ++k) gw[k] += e * r[k];
          gb += e;
        }
        const double scale = cfg.learning_rate / static_cast<double>(end - start);
        for (int k = 0; k < 3; ++k) w[k] -= scale * gw[k];
        b -= scale * gb;
        if (++step % cfg.checkpoint_every == 0) {
          double mse = 0.0;
          for (auto i : dev) {
            const auto& r = x[i];
            const double e = w[0] * r[0] + w[1] * r[1] + w[2] * r[2] + b - y[i];
            mse += e * e;
          }
          curve.steps.push_back(step);
          curve.dev_mse.push_back(mse / static_cast<double>(dev.size()));
        }
      }
    }
    return curve;
  }
};

}  // namespace

TEST_CASE("grid search: single config, planted optimum, divergence") {
  model::TrainConfig base;
  base.epochs = 5;
  base.batch_size = 16;
  base.checkpoint_every = 2;

  const LinearProblem one(0);
  const std::vector<model::TrainConfig> single = {base};
  const auto r1 = cv_grid_search(one.y.size(), single, 5, 0, [&](const auto& c, auto tr, auto dev) {
    return one.run(c, tr, dev);
  });
  CHECK(r1.best == 0);
  CHECK(r1.curves.size() == 1);
  CHECK(r1.curves[0].size() == 5);
  CHECK(r1.best_steps.size() == 5);
  CHECK(r1.final_steps % base.checkpoint_every == 0);

  std::vector<model::TrainConfig> planted(2, base);
  planted[0].learning_rate = 0.002;
  planted[1].learning_rate = 0.1;
  int dominant = 0;
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    const LinearProblem p(100 + rep);
    const auto r = cv_grid_search(p.y.size(), planted, 5, rep, [&](const auto& c, auto tr, auto dev) {
      return p.run(c, tr, dev);
    });
    dominant += r.best == 1;
  }
  MESSAGE("dominant config chosen in ", dominant, "/20 repeats");
  CHECK(dominant >= 18);

  std::vector<model::TrainConfig> mixed(2, base);
  mixed[0].learning_rate = 1e9;
  const auto rd = cv_grid_search(one.y.size(), mixed, 5, 0, [&](const auto& c, auto tr, auto dev) {
    if (c.learning_rate > 1) throw TrainingDiverged("nan");
    return one.run(c, tr, dev);
  });
  CHECK(rd.best == 1);
  CHECK(std::isnan(rd.mean_best_loss[0]));
  const std::vector<model::TrainConfig> bad = {mixed[0]};
  CHECK_THROWS_AS(cv_grid_search(one.y.size(), bad, 5, 0,
                                 [](const auto&, auto, auto) -> Curve { throw TrainingDiverged("nan"); }),
                  TrainingDiverged);
  CHECK_THROWS_AS(cv_grid_search(10, std::span<const model::TrainConfig>{}, 5, 0, {}), InvalidInput);

  const auto round = grid_result_from_json(to_json(rd));
  CHECK(round.best == rd.best);
  CHECK(std::isnan(round.mean_best_loss[0]));
  CHECK(round.final_steps == rd.final_steps);
}

TEST_CASE("split integrity and determinism over 20 seeded splits") {
  std::vector<std::string> ids;
  for (int i = 0; i < 61; ++i) ids.push_back("s" + std::to_string(i));
  std::set<std::string> distinct_hashes;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = make_split(ids, 0.15, seed);
    CHECK(std::abs(static_cast<double>(s.test.size()) - 0.15 * 61) <= 1.0);
    std::vector<std::string> both;
    std::set_intersection(s.train.begin(), s.train.end(), s.test.begin(), s.test.end(), std::back_inserter(both));
    CHECK(both.empty());
    CHECK(s.train.size() + s.test.size() == ids.size());
    const auto again = make_split(ids, 0.15, seed);
    CHECK(again.test == s.test);
    CHECK(again.hash == s.hash);
    distinct_hashes.insert(s.hash);
  }
  CHECK(distinct_hashes.size() == 20);
  CHECK_THROWS_AS(make_split(std::vector<std::string>{"a", "a", "b", "c"}, 0.5, 0), InvalidInput);
}

TEST_CASE("variants and plan serialization") {
  CHECK(all_variants().size() == 8);
  for (const auto& v : all_variants()) CHECK(Variant::parse(v.name()) == v);
  CHECK(Variant::parse("MEAN+pretrain+token").name() == "MEAN+pretrain+token");
  CHECK_THROWS_AS(Variant::parse("MEAN+token+pretrain"), InvalidInput);
  CHECK_THROWS_AS(Variant::parse("MAX"), InvalidInput);

  ExperimentPlan p;
  p.pretrained_encoder = "/enc";
  const auto round = plan_from_json(to_json(p));
  CHECK(to_json(round) == to_json(p));
  CHECK_THROWS_AS(plan_from_json(Json{{"repeats", 0}}), InvalidInput);
  CHECK_THROWS_AS(plan_from_json(Json{{"variants", {"MEAN+pretrain"}}}), InvalidInput);
  CHECK_THROWS_AS(plan_from_json(Json{{"bogus", 1}}), SchemaError);
  const auto grid = p.grid_for({model::Pooling::CLS, false, false}, annotation::Question::AuthorBelief);
  for (const auto& c : grid) {
    CHECK(c.pooling == model::Pooling::CLS);
    CHECK(c.lambda == 0.0);
    CHECK(c.question == annotation::Question::AuthorBelief);
  }
}

TEST_CASE("toy experiment: report, resume, regeneration") {
  synth::SyntheticConfig sc;
  sc.stories = 24;
  sc.filler_sentences_min = 1;
  sc.filler_sentences_max = 2;
  const auto data = synth::prepare(synth::generate(sc));

  ExperimentPlan plan;
  plan.repeats = 5;
  plan.folds = 2;
  plan.variants = {Variant{model::Pooling::MEAN, false, false}, Variant{model::Pooling::MEAN, false, true}};
  plan.max_length = 64;
  plan.bootstrap_resamples = 200;
  model::TrainConfig c;
  c.epochs = 1;
  c.batch_size = 8;
  c.checkpoint_every = 1;
  c.learning_rate = 1e-3;
  plan.grid_rating_only = {c};
  c.lambda = 1.0;
  plan.grid_token = {c};

  const auto dir = temp_dir("toy");
  std::vector<std::string> log;
  const auto rec = run_experiment(plan, data.stories, data.aggregated, dir, [&](const std::string& m) { log.push_back(m); });
  CHECK(rec.runs.size() == 2 * 2 * 5);
  CHECK(rec.baselines.size() == 2 * 5);
  // Every variant in a repeat saw the same split.
  for (const auto& r : rec.runs) {
    CHECK(r.split_hash == rec.splits[r.repeat].hash);
    CHECK(r.test_ids.size() == rec.splits[r.repeat].test.size());
    CHECK(std::isfinite(r.test_mse));
  }
  const auto report = make_report(rec);
  CHECK(report.cells.size() == 2 * 3);
  CHECK(report.tests.size() == 2 * 3 * 2);
  CHECK(report.metadata.at("bootstrap_resamples") == 200);
  const std::string table = table_csv(report);
  CHECK(table.starts_with("model,RP_mean,RP_std,AB_mean,AB_std\nMean Baseline,"));
  write_report(report, dir / "report");

  // A second run reuses every cell and reproduces the report byte for byte.
  log.clear();
  const auto again = run_experiment(plan, data.stories, data.aggregated, dir, [&](const std::string& m) { log.push_back(m); });
  CHECK(std::all_of(log.begin(), log.end(), [](const auto& m) { return m.ends_with("reused"); }));
  CHECK(table_csv(make_report(again)) == table);

  // Regeneration from disk is a pure function of the stored results.
  const auto loaded = load_experiment(dir);
  const auto regenerated = make_report(loaded);
  write_report(regenerated, dir / "report2");
  for (const char* f : {"table.csv", "intervals.csv", "significance.csv", "report.json"}) {
    CHECK(slurp(dir / "report" / f) == slurp(dir / "report2" / f));
  }

  // A fresh directory with the same plan and seeds gives identical numbers.
  const auto dir2 = temp_dir("toy2");
  const auto fresh = run_experiment(plan, data.stories, data.aggregated, dir2);
  CHECK(significance_csv(make_report(fresh)) == significance_csv(report));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}
