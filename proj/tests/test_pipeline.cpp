#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "paramap/pipeline.hpp"
#include "paramap/rng.hpp"
#include "paramap/synthetic.hpp"

using namespace paramap;
using namespace paramap::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("paramap_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One corpus of 200 rows, five 20-row subsets.
PipelineConfig tiny(const fs::path& root) {
  const auto corpus = root / "tiny.csv";
  if (!fs::exists(corpus)) data::save_tabular(synth::tail_noise_dataset(200, 0.2, 9), corpus);
  PipelineConfig c;
  c.seed = 17;
  c.corpora = {{"tiny", corpus}};
  c.sample = {20, 5, 0.5, std::nullopt};
  c.encoder.bottleneck = 1;
  c.encoder.train = {0.05, 3, 8, std::nullopt, 0, nn::Loss::mse};
  c.label_budget = 12;
  c.eval_budget = 8;
  c.core.trunk = {8};
  c.core.train = {0.02, 20, 2, 1.0, 0, nn::Loss::mse};
  c.out = root / "run";
  return c;
}

json manifest(const PipelineConfig& c, const std::string& stage) {
  return json::parse(slurp(c.out / stage / "manifest.json"));
}

}  // namespace

TEST_CASE("tiny corpus runs end to end") {
  const auto root = scratch("tiny");
  const auto cfg = tiny(root);
  const auto prep = run_prepare(cfg);
  CHECK_FALSE(prep.skipped);
  const auto m = manifest(cfg, "prepare");
  CHECK(m.at("data").at("examples").size() >= 5);
  CHECK(m.at("files").contains("labels.json"));
  CHECK_FALSE(fs::exists(cfg.out / "prepare.partial"));

  run_train(cfg);
  const auto split = json::parse(slurp(cfg.out / "train" / "split.json"));
  CHECK(split.at("test").size() == 1);
  CHECK(split.at("train").size() == 4);

  // A validation loss for every epoch, plus the initial row.
  std::istringstream curves(slurp(cfg.out / "train" / "curves.csv"));
  std::string line;
  std::getline(curves, line);
  int epochs = 0;
  while (std::getline(curves, line)) {
    const auto last = line.substr(line.rfind(',') + 1);
    CHECK_FALSE(last.empty());
    CHECK(last != "nan");
    ++epochs;
  }
  CHECK(epochs == cfg.core.train.epochs + 1);

  run_evaluate(cfg);
  run_report(cfg);
  const auto results = json::parse(slurp(cfg.out / "evaluate" / "results.json"));
  const auto& rows = results.at("rows");
  CHECK(rows.size() == split.at("test").size() * kGroups.size());
  for (std::size_t i = 0; i < rows.size(); i += kGroups.size()) {
    REQUIRE(rows[i].at("group") == "CN");
    REQUIRE(rows[i + 1].at("group") == "CN+LOPT");
    CHECK(rows[i + 1].at("accuracy").get<double>() >= rows[i].at("accuracy").get<double>());
  }

  const auto summary = json::parse(slurp(cfg.out / "report" / "summary.json"));
  for (const auto& g : summary.at("groups")) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows) {
      if (r.at("group") == g.at("group")) {
        sum += r.at("accuracy").get<double>();
        ++n;
      }
    }
    CHECK(std::abs(g.at("mean").get<double>() - sum / n) <= 1e-12);
  }
  std::istringstream rows_csv(slurp(cfg.out / "report" / "rows.csv"));
  std::size_t lines = 0;
  while (std::getline(rows_csv, line)) ++lines;
  CHECK(lines == 1 + rows.size());
  CHECK(fs::exists(cfg.out / "report" / "timing.csv"));
  CHECK(fs::exists(cfg.out / "report" / "long.csv"));
}

TEST_CASE("rerun is a no-op and a fresh run reproduces the hashes") {
  const auto root = scratch("rerun");
  auto cfg = tiny(root);
  const auto first = run_all(cfg);
  const auto again = run_all(cfg);
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(again[i].skipped);
    CHECK(again[i].manifest_hash == first[i].manifest_hash);
  }
  cfg.out = root / "run2";
  const auto fresh = run_all(cfg);
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK_FALSE(fresh[i].skipped);
    CHECK(fresh[i].manifest_hash == first[i].manifest_hash);
  }
  for (const auto* f : {"rows.csv", "summary.json", "long.csv", "predictions.csv"}) {
    CHECK(slurp(root / "run" / "report" / f) == slurp(root / "run2" / "report" / f));
  }

  // A changed downstream setting reruns that stage only.
  cfg.eval_budget = 9;
  const auto changed = run_all(cfg);
  CHECK(changed[0].skipped);
  CHECK(changed[1].skipped);
  CHECK_FALSE(changed[2].skipped);
}

TEST_CASE("tampered output is rebuilt") {
  const auto root = scratch("tamper");
  const auto cfg = tiny(root);
  const auto first = run_prepare(cfg);
  std::ofstream(cfg.out / "prepare" / "labels.json") << "[]";
  const auto again = run_prepare(cfg);
  CHECK_FALSE(again.skipped);
  CHECK(again.manifest_hash == first.manifest_hash);
}

TEST_CASE("infeasible plan writes nothing") {
  const auto root = scratch("infeasible");
  auto cfg = tiny(root);
  cfg.sample = {150, 50, 0.1, std::nullopt};
  try {
    run_prepare(cfg);
    FAIL("expected a planner error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "prepare");
    CHECK(std::string(e.what()).find("tiny") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(cfg.out));
}

TEST_CASE("stages need their inputs") {
  const auto root = scratch("missing");
  const auto cfg = tiny(root);
  CHECK_THROWS_AS(run_train(cfg), StageError);
  try {
    run_evaluate(cfg);
  } catch (const StageError& e) {
    CHECK(e.stage() == "evaluate");
  }
}

TEST_CASE("model file round trip through the pipeline") {
  const auto root = scratch("model");
  const auto cfg = tiny(root);
  run_prepare(cfg);
  run_train(cfg);
  const auto model = cn::load_model(cfg.out / "train" / "model.json");
  const auto copy = root / "copy.json";
  cn::save_model(model, copy);
  const auto back = cn::load_model(copy);
  CHECK(slurp(copy) == slurp(cfg.out / "train" / "model.json"));
  for (const auto& e : fs::directory_iterator(cfg.out / "prepare" / "metas")) {
    const auto meta = json::parse(slurp(e.path())).get<npe::EncodedMeta>();
    CHECK(cn::predict_raw(back, meta) == cn::predict_raw(model, meta));
  }
  CHECK(back.encoder.at("class_names") == json({"0", "1"}));
}

TEST_CASE("config round trip and validation") {
  const auto root = scratch("config");
  auto cfg = tiny(root);
  cfg.sample.m = 40;
  const json j = cfg;
  const auto back = j.get<PipelineConfig>();
  CHECK(json(back) == j);
  CHECK(back.sample.m == 40u);
  cfg.sample.m_margin = 1.5;
  CHECK(json(cfg).get<PipelineConfig>().sample.m_margin == 1.5);

  auto bad = j;
  bad["corpora"].push_back(bad["corpora"][0]);
  CHECK_THROWS(bad.get<PipelineConfig>());
  bad = j;
  bad["corpora"][0]["id"] = "a/b";
  CHECK_THROWS(bad.get<PipelineConfig>());
  bad = j;
  bad["split_ratio"] = 1.0;
  CHECK_THROWS(bad.get<PipelineConfig>());
  bad = j;
  bad["sample"]["m_margin"] = 0.5;
  CHECK_THROWS(bad.get<PipelineConfig>());

  // Relative paths resolve against the config file.
  json rel = j;
  rel["corpora"][0]["path"] = "tiny.csv";
  rel["out"] = "out";
  std::ofstream(root / "cfg.json") << rel.dump();
  const auto loaded = load_config(root / "cfg.json");
  CHECK(loaded.corpora[0].path == root / "tiny.csv");
  CHECK(loaded.out == root / "out");
}

TEST_CASE("class canonicalization") {
  CHECK(canonical_classes({{"10", "2"}, {"1", "2"}}) == std::vector<std::string>{"1", "2", "10"});
  CHECK(canonical_classes({{"b", "a"}, {"c"}}) == std::vector<std::string>{"a", "b", "c"});

  data::TabularDataset d;
  d.n_rows = 3;
  d.n_features = 1;
  d.features = {1, 2, 3};
  d.labels = {0, 1, 0};
  d.n_classes = 2;
  d.class_names = {"yes", "no"};
  const auto c = canonicalize(d, {"maybe", "no", "yes"}, 2);
  CHECK(c.labels == std::vector<int>{2, 1, 2});
  CHECK(c.n_classes == 3);
  CHECK(c.n_features == 2);
  CHECK(c.at(1, 0) == 2.0);
  CHECK(c.at(1, 1) == 0.0);
  CHECK_THROWS(canonicalize(d, {"yes"}, 2));
  CHECK_THROWS(canonicalize(d, {"yes", "no"}, 0));
}

TEST_CASE("quantiles follow linear interpolation") {
  // Reference values from numpy.percentile (default linear method).
  const auto s = summarize("g", {0.3, 0.1, 0.7, 0.2, 0.9, 0.5, 0.55});
  CHECK(s.q1 == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.median == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.q3 == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(s.sd == doctest::Approx(0.28389300466062584).epsilon(1e-12));
  CHECK(s.min == 0.1);
  CHECK(s.max == 0.9);
  const auto t = summarize("g", {4, 1, 3, 2});
  CHECK(t.q1 == 1.75);
  CHECK(t.median == 2.5);
  CHECK(t.q3 == 3.25);

  // Naive oracle: position-weighted average of neighbouring order statistics.
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + rng.below(30);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform();
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const double pos = q * static_cast<double>(n - 1);
      const auto below = static_cast<std::size_t>(pos);
      const auto above = std::min(below + 1, n - 1);
      const double frac = pos - static_cast<double>(below);
      const double oracle = (1.0 - frac) * sorted[below] + frac * sorted[above];
      CHECK(quantile(sorted, q) == doctest::Approx(oracle).epsilon(1e-12));
    }
    const auto g = summarize("g", v);
    double sum = 0.0;
    for (double x : v) sum += x;
    CHECK(std::abs(g.mean - sum / static_cast<double>(n)) <= 1e-12);
  }
  CHECK_THROWS(summarize("g", {}));
}

TEST_CASE("empty group is omitted with a warning") {
  std::vector<ReportRow> rows;
  for (const auto& g : kGroups) {
    for (int i = 0; i < 3; ++i) {
      ReportRow r{"d" + std::to_string(i), g, 0.5 + 0.1 * i, 1, ""};
      if (g == "BCG") {
        r.accuracy.reset();
        r.error = "boom";
      }
      rows.push_back(r);
    }
  }
  std::vector<std::string> warnings;
  const auto s = summarize_rows(rows, warnings);
  REQUIRE(s.size() == 3);
  for (const auto& g : s) CHECK(g.group != "BCG");
  CHECK(std::any_of(warnings.begin(), warnings.end(),
                    [](const std::string& w) { return w.find("BCG") != std::string::npos; }));
}

TEST_CASE("spearman with ties") {
  // scipy.stats.spearmanr reference.
  CHECK(spearman({1, 2, 2, 3, 5, 4}, {2, 1, 3, 3, 6, 5}) == doctest::Approx(0.8676470588235294).epsilon(1e-12));
  CHECK(spearman({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(std::isnan(spearman({1, 1, 1}, {1, 2, 3})));
  CHECK_THROWS(spearman({1, 2}, {1}));
}
