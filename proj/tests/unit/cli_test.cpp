#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include <doctest.h>

#include "guilt/cli/cli.hpp"
#include "guilt/common/hash.hpp"
#include "guilt/common/io.hpp"

namespace fs = std::filesystem;
using guilt::Json;

namespace {

const fs::path kSource = GUILT_SOURCE_DIR;
const fs::path kFixture = kSource / "data" / "fixture";

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("guilt_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Result {
  int code = 0;
  std::string out, err;
};

Result cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = guilt::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

void expect_ok(const std::vector<std::string>& args) {
  const auto r = cli(args);
  INFO("guilt " << args.at(0) << " " << (args.size() > 1 ? args[1] : "") << ": " << r.err);
  REQUIRE(r.code == 0);
}

Json manifest(const fs::path& dir, const std::string& name) {
  return Json::parse(guilt::read_file(dir / ("manifest." + name + ".json")));
}

const char* kPlan = R"({
  "repeats": 3, "test_fraction": 0.2, "folds": 2, "questions": ["RP"],
  "variants": ["MEAN", "MEAN+token"], "encoder": "tiny", "max_length": 64, "seed": 0,
  "bootstrap_resamples": 200,
  "grid_rating_only": [{"learning_rate": 0.001, "epochs": 1, "batch_size": 8, "checkpoint_every": 1, "lambda": 0}],
  "grid_token": [{"learning_rate": 0.001, "epochs": 1, "batch_size": 8, "checkpoint_every": 1, "lambda": 1}]
})";

// filter -> ingest -> exclude -> aggregate -> stats -> train -> eval -> attrib, each stage in its own directory.
void pipeline(const fs::path& root) {
  const auto p = [&root](const std::string& rel) { return (root / rel).string(); };
  guilt::write_file_atomic(root / "plan.json", kPlan);
  expect_ok({"corpus", "filter", "--in", (kFixture / "archive.jsonl").string(), "--out-dir", p("corpus")});
  expect_ok({"annotations", "ingest", "--in", (kFixture / "ui_sessions.jsonl").string(), "--stories",
             p("corpus/stories.jsonl"), "--out-dir", p("ingest")});
  expect_ok({"annotations", "exclude", "--in", p("ingest/sessions.jsonl"), "--stories", p("corpus/stories.jsonl"),
             "--out-dir", p("exclude")});
  expect_ok({"annotations", "aggregate", "--sessions", p("exclude/kept_sessions.jsonl"), "--stories",
             p("exclude/kept_stories.jsonl"), "--out-dir", p("aggregate")});
  const std::vector<std::string> stats_inputs = {"--stories", p("exclude/kept_stories.jsonl"), "--sessions",
                                                 p("exclude/kept_sessions.jsonl")};
  for (const char* cmd : {"agreement", "words"}) {
    std::vector<std::string> args = {"stats", cmd, "--out-dir", p("stats")};
    args.insert(args.end(), stats_inputs.begin(), stats_inputs.end());
    expect_ok(args);
  }
  expect_ok({"model", "train", "--stories", p("exclude/kept_stories.jsonl"), "--aggregated",
             p("aggregate/aggregated.jsonl"), "--token", "--lr", "1e-3", "--epochs", "2", "--batch", "8",
             "--max-length", "96", "--out-dir", p("train")});
  expect_ok({"eval", "run", "--plan", p("plan.json"), "--stories", p("exclude/kept_stories.jsonl"), "--aggregated",
             p("aggregate/aggregated.jsonl"), "--out-dir", p("eval")});
  expect_ok({"eval", "report", "--run-dir", p("eval"), "--out", "mse_table.csv", "--out-dir", p("report")});
  expect_ok({"attrib", "run", "--model", p("train/model"), "--stories", p("exclude/kept_stories.jsonl"), "--steps",
             "16", "--out-dir", p("attrib")});
  expect_ok({"attrib", "compare", "--attributions", p("attrib/attributions.jsonl"), "--stories",
             p("exclude/kept_stories.jsonl"), "--stats", p("stats/word_stats.csv"), "--agreement",
             p("stats/agreement.json"), "--out-dir", p("attrib")});
}

const std::vector<std::pair<std::string, std::string>> kStages = {
    {"corpus", "corpus-filter"},        {"ingest", "annotations-ingest"}, {"exclude", "annotations-exclude"},
    {"aggregate", "annotations-aggregate"}, {"stats", "stats-agreement"}, {"stats", "stats-words"},
    {"train", "model-train"},           {"eval", "eval-run"},             {"report", "eval-report"},
    {"attrib", "attrib-run"},           {"attrib", "attrib-compare"}};

// Output path -> hash for every stage, the bytes that must not depend on the run.
std::map<std::string, std::string> output_hashes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& [dir, name] : kStages) {
    const Json m = manifest(root / dir, name);
    for (const auto& o : m["outputs"]) {
      out[name + ":" + o["path"].get<std::string>()] = o["sha256"].get<std::string>();
    }
  }
  return out;
}

}  // namespace

TEST_CASE("end-to-end pipeline on the bundled fixture chains manifests by hash and is deterministic") {
  const auto a = fresh_dir("pipeline_a");
  const auto b = fresh_dir("pipeline_b");
  pipeline(a);
  pipeline(b);

  std::size_t links = 0;
  for (const auto& [dir, name] : kStages) {
    const Json m = manifest(a / dir, name);
    CHECK(m["version"] == std::string(guilt::cli::kVersion));
    CHECK(m["seed"] == 0);
    CHECK(!m["outputs"].empty());
    for (const auto& in : m["inputs"]) {
      const fs::path path = in["path"].get<std::string>();
      if (fs::is_regular_file(path)) CHECK(in["sha256"] == guilt::sha256_file(path));
      // The fixture and the plan are external inputs.
      if (path.string().starts_with(kFixture.string()) || path.filename() == "plan.json") continue;
      // Every input produced inside the pipeline names the manifest that produced it.
      INFO(name << " input " << path);
      REQUIRE(!in["upstream_manifest"].is_null());
      const fs::path up_dir = fs::is_directory(path) && in["upstream_manifest"]["command"] == "eval run"
                                  ? path
                                  : path.parent_path();
      CHECK(in["upstream_manifest"]["sha256"] ==
            guilt::sha256_file(up_dir / in["upstream_manifest"]["path"].get<std::string>()));
      ++links;
    }
  }
  CHECK(links >= 15);

  const auto ha = output_hashes(a), hb = output_hashes(b);
  CHECK(ha.size() >= 20);
  for (const auto& [k, v] : ha) {
    INFO(k);
    CHECK(hb.at(k) == v);
  }
  // The final stage holds the per-word comparison and its summary.
  CHECK(fs::exists(a / "attrib" / "comparison.csv"));
  CHECK(fs::exists(a / "report" / "mse_table.csv"));
  CHECK(!fs::exists(a / "report" / "table.csv"));
}

TEST_CASE("fixture command regenerates the checked-in fixture") {
  const auto dir = fresh_dir("fixture");
  expect_ok({"fixture", "--out-dir", dir.string()});
  for (const char* f : {"archive.jsonl", "ui_sessions.jsonl", "truth.jsonl", "unlabeled.jsonl"}) {
    INFO(f);
    CHECK(guilt::sha256_file(dir / f) == guilt::sha256_file(kFixture / f));
  }
}

TEST_CASE("dry run validates without writing") {
  const auto root = fresh_dir("dry");
  const auto p = [&root](const std::string& rel) { return (root / rel).string(); };
  guilt::write_file_atomic(root / "plan.json", kPlan);
  expect_ok({"corpus", "filter", "--in", (kFixture / "archive.jsonl").string(), "--out-dir", p("c")});
  expect_ok({"annotations", "ingest", "--in", (kFixture / "ui_sessions.jsonl").string(), "--stories",
             p("c/stories.jsonl"), "--out-dir", p("c")});
  expect_ok({"annotations", "aggregate", "--sessions", p("c/sessions.jsonl"), "--stories", p("c/stories.jsonl"),
             "--out-dir", p("c")});

  const auto out = root / "out";
  auto r = cli({"--dry-run", "eval", "run", "--plan", p("plan.json"), "--stories", p("c/stories.jsonl"),
                "--aggregated", p("c/aggregated.jsonl"), "--out-dir", out.string()});
  CHECK(r.code == guilt::cli::kOk);
  CHECK(!fs::exists(out));
  r = cli({"--dry-run", "model", "train", "--stories", p("c/stories.jsonl"), "--aggregated", p("c/aggregated.jsonl"),
           "--out-dir", out.string()});
  CHECK(r.code == guilt::cli::kOk);
  CHECK(!fs::exists(out));
  r = cli({"--dry-run", "fixture", "--out-dir", out.string()});
  CHECK(r.code == guilt::cli::kOk);
  CHECK(!fs::exists(out));
}

TEST_CASE("errors map to distinct exit codes and leave no partial output") {
  const auto root = fresh_dir("errors");
  const auto out = root / "out";

  auto r = cli({"corpus", "filter", "--in", (root / "absent.jsonl").string(), "--out-dir", out.string()});
  CHECK(r.code == guilt::cli::kMissingInput);
  CHECK(!fs::exists(out));

  r = cli({"corpus", "filter", "--in", (kFixture / "archive.jsonl").string(), "--no-such-flag"});
  CHECK(r.code == guilt::cli::kUsage);
  r = cli({"frobnicate"});
  CHECK(r.code == guilt::cli::kUsage);
  r = cli({"corpus", "filter", "--in", (kFixture / "archive.jsonl").string(), "--out", "../x.jsonl", "--out-dir",
           out.string()});
  CHECK(r.code == guilt::cli::kUsage);
  CHECK(!fs::exists(out));

  guilt::write_file_atomic(root / "bad_plan.json", R"({"repeats": 2, "unknown_field": true})");
  r = cli({"eval", "run", "--plan", (root / "bad_plan.json").string(), "--stories",
           (kFixture / "archive.jsonl").string(), "--aggregated", (kFixture / "truth.jsonl").string(), "--out-dir",
           out.string()});
  CHECK(r.code == guilt::cli::kInvalidData);
  CHECK(!fs::exists(out));

  // Sliders above 100 fail ingest validation part way through the file.
  std::string sessions = guilt::read_file(kFixture / "ui_sessions.jsonl");
  const auto pos = sessions.rfind("\"slider\":");
  sessions.replace(pos, sessions.find_first_of(",}", pos) - pos, "\"slider\":250.0");
  guilt::write_file_atomic(root / "bad_sessions.jsonl", sessions);
  expect_ok({"corpus", "filter", "--in", (kFixture / "archive.jsonl").string(), "--out-dir", (root / "c").string()});
  r = cli({"annotations", "ingest", "--in", (root / "bad_sessions.jsonl").string(), "--stories",
           (root / "c" / "stories.jsonl").string(), "--out-dir", out.string()});
  CHECK(r.code == guilt::cli::kInvalidData);
  CHECK(!fs::exists(out));
}

TEST_CASE("config file values apply unless overridden on the command line") {
  const auto root = fresh_dir("config");
  guilt::write_file_atomic(root / "guilt.toml", "[corpus.filter]\nmax-words = 50\n");
  const auto archive = (kFixture / "archive.jsonl").string();
  expect_ok({"--config", (root / "guilt.toml").string(), "corpus", "filter", "--in", archive, "--out-dir",
             (root / "a").string()});
  expect_ok({"--config", (root / "guilt.toml").string(), "corpus", "filter", "--in", archive, "--max-words", "300",
             "--out-dir", (root / "b").string()});
  const Json a = manifest(root / "a", "corpus-filter"), b = manifest(root / "b", "corpus-filter");
  CHECK(a["config"]["max-words"] == "50");
  CHECK(b["config"]["max-words"] == "300");
  CHECK(guilt::read_jsonl(root / "a" / "stories.jsonl").empty());
  CHECK(guilt::read_jsonl(root / "b" / "stories.jsonl").size() == 30);
}

TEST_CASE("the installed binary runs") {
  const std::string cmd = std::string(GUILT_CLI_BINARY) + " --version > /dev/null";
  CHECK(std::system(cmd.c_str()) == 0);
  const std::string bad = std::string(GUILT_CLI_BINARY) + " corpus filter --in /nonexistent/x.jsonl 2> /dev/null";
  const int status = std::system(bad.c_str());
  CHECK(WEXITSTATUS(status) == guilt::cli::kMissingInput);
}
