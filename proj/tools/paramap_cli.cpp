#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "paramap/codec.hpp"
#include "paramap/core_network.hpp"
#include "paramap/labeling.hpp"
#include "paramap/lopt.hpp"
#include "paramap/pipeline.hpp"
#include "paramap/synthetic.hpp"

using namespace paramap;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> budget;
  std::optional<int> workers;
};

pipeline::PipelineConfig resolve(const Overrides& o) {
  auto cfg = pipeline::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (o.budget) cfg.eval_budget = *o.budget;
  if (o.workers) cfg.workers = *o.workers;
  return cfg;
}

void print(const pipeline::StageResult& r) {
  std::cout << r.stage << ": " << (r.skipped ? "up to date" : "done") << " (manifest "
            << codec::hex64(r.manifest_hash) << ")\n";
}

void add_pipeline_flags(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "override the config seed");
  app->add_option("--out", o.out, "override the output directory");
  app->add_option("--budget", o.budget, "override the evaluation budget");
  app->add_option("--workers", o.workers, "datasets processed in parallel");
}

// Reads a dataset into the model's encoder geometry and splits it as the
// pipeline would.
data::TabularSplit model_split(const cn::CoreNetworkModel& m, const fs::path& path, std::uint64_t seed,
                               npe::EncoderSpec& spec) {
  if (m.encoder.is_null()) throw std::runtime_error("model file carries no encoder description");
  spec = m.encoder.at("spec").get<npe::EncoderSpec>();
  const auto classes = m.encoder.at("class_names").get<std::vector<std::string>>();
  const auto d = pipeline::canonicalize(data::load_tabular(path), classes, static_cast<std::size_t>(spec.n_features));
  const auto id = path.stem().string();
  return data::split(d, pipeline::split_seed(seed, id), m.encoder.at("split_ratio").get<double>());
}

std::vector<double> parse_vector(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  return v;
}

json named(const env::Specs& specs, const env::HyperparamVector& v) {
  json j = json::object();
  for (std::size_t i = 0; i < specs.size(); ++i) j[specs[i].name] = v[i];
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paramap: hyperparameter prediction from dataset embeddings"};
  app.require_subcommand(1);
  std::string stage = "cli";

  Overrides o;
  auto* prepare = app.add_subcommand("prepare", "sample, encode and label the corpora");
  auto* train = app.add_subcommand("train", "train the core network on the prepared examples");
  auto* evaluate = app.add_subcommand("evaluate", "score CN, CN+LOPT, BASELINE and BCG on held-out datasets");
  auto* report = app.add_subcommand("report", "write row, summary and timing files");
  auto* run = app.add_subcommand("run", "all four stages in order");
  for (auto* s : {prepare, train, evaluate, report, run}) add_pipeline_flags(s, o);

  std::string model_path, data_path, start, trace, learner = "ridge_logistic";
  std::uint64_t seed = 0;
  std::size_t budget = 120;
  auto* predict = app.add_subcommand("predict", "predict hyperparameters for one dataset");
  predict->add_option("--model", model_path, "model.json from the train stage")->required()->check(CLI::ExistingFile);
  predict->add_option("--data", data_path, "dataset CSV")->required()->check(CLI::ExistingFile);
  predict->add_option("--seed", seed, "pipeline seed used for the split");

  auto* refine = app.add_subcommand("lopt", "refine a hyperparameter vector on one dataset");
  refine->add_option("--data", data_path, "dataset CSV")->required()->check(CLI::ExistingFile);
  refine->add_option("--model", model_path, "start from this model's prediction")->check(CLI::ExistingFile);
  refine->add_option("--start", start, "comma-separated start vector");
  refine->add_option("--learner", learner, "ridge_logistic or boosted_stumps");
  refine->add_option("--budget", budget, "environment evaluations");
  refine->add_option("--seed", seed, "split seed");
  refine->add_option("--trace", trace, "write the per-evaluation trace CSV here");

  std::string dir = "corpora", config_out;
  std::size_t count = 60, rows = 22223;
  auto* synth = app.add_subcommand("synth", "write the tail-noise corpus family and a matching config");
  synth->add_option("--dir", dir, "output directory for the CSVs");
  synth->add_option("--count", count, "number of corpora");
  synth->add_option("--rows", rows, "rows per corpus");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--config-out", config_out, "also write a pipeline config here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      stage = "prepare";
      print(pipeline::run_prepare(resolve(o)));
    } else if (train->parsed()) {
      stage = "train";
      print(pipeline::run_train(resolve(o)));
    } else if (evaluate->parsed()) {
      stage = "evaluate";
      print(pipeline::run_evaluate(resolve(o)));
    } else if (report->parsed()) {
      stage = "report";
      print(pipeline::run_report(resolve(o)));
    } else if (run->parsed()) {
      stage = "config";
      const auto cfg = resolve(o);
      for (auto f : {pipeline::run_prepare, pipeline::run_train, pipeline::run_evaluate, pipeline::run_report}) {
        print(f(cfg));
      }
    } else if (predict->parsed()) {
      stage = "predict";
      const auto m = cn::load_model(model_path);
      npe::EncoderSpec spec;
      const auto split = model_split(m, data_path, seed, spec);
      const auto meta = npe::encode_dataset(split.train, spec, m.encoder.at("encoder_seed").get<std::uint64_t>(),
                                            fs::path(data_path).stem().string());
      std::cout << named(m.specs, cn::predict(m, meta)).dump(1) << "\n";
    } else if (refine->parsed()) {
      stage = "lopt";
      const auto env = env::toy_learner_env(env::learner_from_string(learner));
      env::HyperparamVector p0;
      std::optional<data::TabularSplit> split;
      if (!model_path.empty()) {
        const auto m = cn::load_model(model_path);
        npe::EncoderSpec spec;
        split = model_split(m, data_path, seed, spec);
        p0 = cn::predict(m, npe::encode_dataset(split->train, spec, m.encoder.at("encoder_seed").get<std::uint64_t>(),
                                                 fs::path(data_path).stem().string()));
      } else {
        if (start.empty()) throw std::invalid_argument("give --start or --model");
        p0 = parse_vector(start);
        split = data::split(data::load_tabular(data_path), pipeline::split_seed(seed, fs::path(data_path).stem().string()));
      }
      lopt::LoptConfig cfg;
      cfg.budget = budget;
      const auto r = lopt::lopt(p0, *env, *split, cfg, !trace.empty());
      if (!trace.empty()) {
        std::ofstream t(trace);
        lopt::write_trace_csv(t, r.trace);
      }
      std::cout << json{{"start", named(env->specs(), p0)},
                        {"start_accuracy", r.start_accuracy},
                        {"best", named(env->specs(), r.best)},
                        {"accuracy", r.accuracy},
                        {"evaluations", r.evaluations},
                        {"budget_exhausted", r.budget_exhausted}}
                       .dump(1)
                << "\n";
    } else if (synth->parsed()) {
      stage = "synth";
      const auto made = synth::write_noise_family(dir, count, rows, seed);
      for (const auto& c : made) std::cout << c.id << "," << c.rho << "\n";
      if (!config_out.empty()) {
        pipeline::PipelineConfig cfg;
        cfg.seed = seed;
        const auto base = fs::absolute(config_out).parent_path();
        for (const auto& c : made) cfg.corpora.push_back({c.id, fs::relative(fs::absolute(c.path), base)});
        cfg.sample = {rows * 9 / 10, 1, 0.5, std::nullopt};
        cfg.encoder.n_features = 0;
        cfg.encoder.bottleneck = 1;
        cfg.encoder.train = {0.05, 1, 32, std::nullopt, 0, nn::Loss::mse};
        cfg.out = "run";
        std::ofstream(config_out) << json(cfg).dump(1) << "\n";
      }
    }
  } catch (const pipeline::StageError& e) {
    std::cerr << "error " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [" << stage << "] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
