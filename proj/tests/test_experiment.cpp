#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "missmod/errors.hpp"
#include "missmod/experiment.hpp"

using namespace missmod;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"({
  "task.n_samples": 80,
  "task.n_classes": 3,
  "task.latent_dim": 4,
  "task.seq_len_m1": 4,
  "task.seq_len_m2": 3,
  "task.vocab_m1": 9,
  "task.vocab_m2": 7,
  "encoder.depth": 1,
  "encoder.width": 8,
  "encoder.heads": 2,
  "encoder.prompt_len": 2,
  "pretrain.samples": 40,
  "pretrain.epochs": 1,
  "train.epochs": 2,
  "train.batch_size": 8,
  "patterns.train": ["100/30"],
  "run.seeds": [0, 1]
})";

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("missmod_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_of(const std::string& text) {
  try {
    parse_experiment_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_experiment_config(kTiny);
  CHECK(cfg.task.n_samples == 80);
  CHECK(cfg.encoder.width == 8);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK(cfg.train_patterns.size() == 1);
  CHECK(cfg.train_patterns[0].label() == "100/30");
  CHECK(cfg.effective_test_patterns().size() == 3);

  CHECK(error_of("{\n  \"train.epochs\": 2,\n  \"bogus\": 1\n}").find("line 3") != std::string::npos);
  CHECK(error_of("{\n  \"train.epochs\": 2,\n  \"bogus\": 1\n}").find("bogus") != std::string::npos);
  CHECK(error_of("{\n\n  \"train.epochs\": ,\n}").find("line 3") != std::string::npos);
  CHECK(error_of("{\"train.epochs\": \"many\"}") != "");
  CHECK(error_of("{\"patterns.train\": [\"120/30\"]}") != "");
  CHECK(error_of("{\"peft.kind\": \"lora\"}") != "");
  CHECK(error_of("{\"encoder.width\": 10, \"encoder.heads\": 4}") != "");
  CHECK(error_of("{\"_comment\": \"ignored\"}") == "");
}

TEST_CASE("overrides") {
  auto cfg = parse_experiment_config(kTiny, {"train.lr=0.001", "peft.kind=adapter", "patterns.test=[\"30/100\"]"});
  CHECK(cfg.train.base_lr == 1e-3);
  CHECK(cfg.peft.kind == PeftKind::adapter);
  CHECK(cfg.effective_test_patterns().size() == 1);
  CHECK_THROWS_AS(apply_override(cfg, "nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "train.lr"), ConfigError);
}

TEST_CASE("effective config round trip and hash") {
  const auto cfg = parse_experiment_config(kTiny);
  const auto text = to_json_text(cfg);
  const auto again = parse_experiment_config(text);
  CHECK(to_json_text(again) == text);
  CHECK(config_hash(again) == config_hash(cfg));
  CHECK(config_hash(cfg).size() == 16);

  // seeds, workers and paths do not change the hash; model settings do
  CHECK(config_hash(parse_experiment_config(kTiny, {"run.seeds=[7]", "run.workers=3", "output.dir=\"x\""})) ==
        config_hash(cfg));
  CHECK(config_hash(parse_experiment_config(kTiny, {"train.lr=0.5"})) != config_hash(cfg));

  const auto j = nlohmann::json::parse(text);
  CHECK(j.contains("_config_hash"));
  for (const auto& e : experiment_schema()) CHECK_MESSAGE(j.contains(e.key), e.key);
}

TEST_CASE("summaries") {
  std::vector<ResultRow> rows{{0, "method", "100/30", "30/100", "accuracy", 0.5},
                              {1, "method", "100/30", "30/100", "accuracy", 0.7},
                              {2, "method", "100/30", "30/100", "accuracy", 0.9},
                              {0, "baseline", "100/30", "30/100", "accuracy", 0.4}};
  const auto s = summarize(rows);
  REQUIRE(s.size() == 2);
  for (const auto& r : s) {
    if (r.method == "method") {
      CHECK(r.mean == doctest::Approx(0.7));
      REQUIRE(r.std.has_value());
      CHECK(*r.std == doctest::Approx(0.2));
      CHECK(r.count == 3);
    } else {
      CHECK(r.mean == 0.4);
      CHECK_FALSE(r.std.has_value());
    }
  }
}

TEST_CASE("run, artifacts and report") {
  const auto dir = scratch("run");
  auto cfg = parse_experiment_config(kTiny);
  const auto result = run_experiment(cfg, dir);

  // 2 seeds x 2 methods x 3 test patterns
  CHECK(result.rows.size() == 12);
  CHECK(result.diagnostics.size() == 4);
  for (const auto* f : {"effective_config.json", "results.csv", "summary.csv", "results.json"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  CHECK(fs::exists(dir / "history"));
  CHECK(fs::exists(dir / "embeddings"));

  const auto csv = slurp(dir / "results.csv");
  CHECK(csv.rfind("seed,method,train_pattern,test_pattern,metric,value,config_hash", 0) == 0);
  CHECK(csv.find(result.config_hash) != std::string::npos);

  const auto& cell = result.cell("method", "100/30", "30/100");
  double sum = 0;
  for (const auto& r : result.rows) {
    if (r.method == "method" && r.test_pattern == "30/100") sum += r.value;
  }
  CHECK(cell.mean == doctest::Approx(sum / 2).epsilon(1e-15));
  CHECK_THROWS(result.cell("method", "1/1", "30/100"));

  // the written effective config reproduces the same results
  const auto replay = run_experiment(load_experiment_config(dir / "effective_config.json"), std::nullopt);
  REQUIRE(replay.rows.size() == result.rows.size());
  for (std::size_t i = 0; i < replay.rows.size(); ++i) CHECK(replay.rows[i].value == result.rows[i].value);

  const auto report = report_text(dir);
  CHECK(report.find("accuracy") != std::string::npos);
  CHECK(report.find("30/100") != std::string::npos);
  CHECK_THROWS_AS(report_text(scratch("empty")), InputError);
}

TEST_CASE("worker count does not change results") {
  auto one = parse_experiment_config(kTiny, {"run.workers=1", "eval.compare_baseline=false"});
  auto two = parse_experiment_config(kTiny, {"run.workers=2", "eval.compare_baseline=false"});
  const auto a = run_experiment(one, std::nullopt);
  const auto b = run_experiment(two, std::nullopt);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].seed == b.rows[i].seed);
    CHECK(a.rows[i].value == b.rows[i].value);
  }
}

TEST_CASE("ablation grids") {
  for (const auto& d : ablation_dimensions()) CHECK_FALSE(ablation_grid(d).empty());
  CHECK_THROWS_AS(ablation_grid("colour"), ConfigError);
  // every variant is a valid override set
  for (const auto& d : ablation_dimensions()) {
    for (const auto& v : ablation_grid(d)) CHECK_NOTHROW(parse_experiment_config(kTiny, v.overrides));
  }
}

#ifdef MISSMOD_CLI
TEST_CASE("cli exit codes") {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "ok.json") << kTiny;
    std::ofstream(dir / "bad.json") << "{\n  \"train.epochs\": 1,\n  \"bogus\": true\n}";
  }
  auto run = [](const std::string& args) {
    const int status = std::system((std::string(MISSMOD_CLI) + " " + args + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run("schema") == 0);
  CHECK(run("config --config " + (dir / "ok.json").string()) == 0);
  CHECK(run("config --config " + (dir / "bad.json").string()) == 2);
  CHECK(run("run --config " + (dir / "missing.json").string()) == 2);
  CHECK(run("ablate colour --config " + (dir / "ok.json").string()) == 2);
  CHECK(run("report " + (dir / "nothing").string()) == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("run --config " + (dir / "ok.json").string() + " --seeds 0") == 2);
  CHECK(run("run --config " + (dir / "ok.json").string() + " --seeds 1 --out " + (dir / "out").string()) == 0);
  CHECK(fs::exists(dir / "out" / "results.csv"));
  CHECK(run("report " + (dir / "out").string()) == 0);
}
#endif
