#include "paramap/pipeline.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "paramap/codec.hpp"
#include "paramap/labeling.hpp"
#include "paramap/rng.hpp"
#include "paramap/sampler.hpp"

namespace paramap::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed purposes.
enum : std::uint64_t {
  kSampleSeed = 1,
  kSplitSeed = 2,
  kLabelSeed = 3,
  kBaselineSeed = 4,
  kEncoderSeed = 5,
  kTrainSeed = 6,
  kMetaSplitSeed = 7,
  kBcgSeed = 8,
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(1) + "\n"); }
json read_json(const fs::path& p) { return json::parse(read_file(p)); }

std::string num(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

bool valid_id(const std::string& id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

// Runs f(i) for i in [0, n) on up to `workers` threads. Results are written by
// index so output does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, int workers, F f) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      f(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(w, n); ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- manifests ----

struct Stage {
  std::string name;
  std::uint64_t config_hash = 0;
  std::optional<std::uint64_t> input;  // upstream manifest hash
};

fs::path stage_dir(const PipelineConfig& cfg, const std::string& name) { return cfg.out / name; }

std::uint64_t manifest_hash(const fs::path& dir) { return codec::fnv1a64(read_file(dir / "manifest.json")); }

std::uint64_t upstream(const PipelineConfig& cfg, const std::string& name, const std::string& for_stage) {
  const auto dir = stage_dir(cfg, name);
  if (!fs::exists(dir / "manifest.json")) {
    throw StageError(for_stage, "missing " + name + " output in " + dir.string() + "; run " + name + " first");
  }
  return manifest_hash(dir);
}

bool up_to_date(const fs::path& dir, const Stage& st) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) return false;
  try {
    const auto m = read_json(path);
    if (m.at("format_version").get<int>() != kFormatVersion) return false;
    if (m.at("config_hash").get<std::string>() != codec::hex64(st.config_hash)) return false;
    const auto in = m.at("input");
    if (st.input ? (in.is_null() || in.get<std::string>() != codec::hex64(*st.input)) : !in.is_null()) return false;
    for (const auto& [rel, h] : m.at("files").items()) {
      if (!fs::exists(dir / rel) || codec::hex64(hash_file(dir / rel)) != h.get<std::string>()) return false;
    }
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

// Runs body in <out>/<stage>.partial, writes the manifest, then swaps the
// directory into place. Files named in `unhashed` (wall-clock data) are left
// out of the manifest.
template <class Body>
StageResult run_stage(const PipelineConfig& cfg, const Stage& st, Body body,
                      const std::set<std::string>& unhashed = {}) {
  const auto final_dir = stage_dir(cfg, st.name);
  if (up_to_date(final_dir, st)) return {st.name, true, manifest_hash(final_dir)};
  const auto partial = cfg.out / (st.name + ".partial");
  try {
    fs::remove_all(partial);
    fs::create_directories(partial);
    json extra = body(partial);
    json files = json::object();
    std::vector<fs::path> all;
    for (const auto& e : fs::recursive_directory_iterator(partial)) {
      if (e.is_regular_file()) all.push_back(e.path());
    }
    std::sort(all.begin(), all.end());
    for (const auto& p : all) {
      const auto rel = fs::relative(p, partial).generic_string();
      if (!unhashed.count(rel)) files[rel] = codec::hex64(hash_file(p));
    }
    json m{{"format_version", kFormatVersion},
           {"stage", st.name},
           {"config_hash", codec::hex64(st.config_hash)},
           {"input", st.input ? json(codec::hex64(*st.input)) : json(nullptr)},
           {"files", files},
           {"unhashed", std::vector<std::string>(unhashed.begin(), unhashed.end())},
           {"data", extra}};
    write_json(partial / "manifest.json", m);
    fs::remove_all(final_dir);
    fs::rename(partial, final_dir);
  } catch (const StageError&) {
    fs::remove_all(partial);
    throw;
  } catch (const std::exception& e) {
    fs::remove_all(partial);
    throw StageError(st.name, e.what());
  }
  return {st.name, false, manifest_hash(final_dir)};
}

std::uint64_t hash_json(const json& j) { return codec::fnv1a64(j.dump()); }

// ---- prepare internals ----

struct Corpus {
  CorpusRef ref;
  data::TabularDataset data;
  sampling::SamplePlan plan;
};

struct Resolved {
  npe::EncoderSpec encoder;
  std::vector<std::string> classes;
};

json corpora_fingerprint(const PipelineConfig& cfg) {
  json out = json::array();
  for (const auto& c : cfg.corpora) out.push_back({{"id", c.id}, {"content", codec::hex64(hash_file(c.path))}});
  return out;
}

env::Specs specs_of(const PipelineConfig& cfg) { return env::learner_specs(cfg.learner); }

struct Prepared {
  std::vector<std::string> ids;
  std::vector<std::string> classes;
  npe::EncoderSpec encoder;
  env::Specs specs;
  std::map<std::string, json> labels;  // id -> label record
};

Prepared load_prepared(const PipelineConfig& cfg, const std::string& for_stage) {
  (void)upstream(cfg, "prepare", for_stage);
  const auto dir = stage_dir(cfg, "prepare");
  const auto m = read_json(dir / "manifest.json").at("data");
  Prepared p;
  p.ids = m.at("examples").get<std::vector<std::string>>();
  p.classes = m.at("class_names").get<std::vector<std::string>>();
  p.encoder = m.at("encoder").get<npe::EncoderSpec>();
  p.specs = m.at("specs").get<env::Specs>();
  for (const auto& r : read_json(dir / "labels.json")) p.labels[r.at("dataset_id").get<std::string>()] = r;
  return p;
}

data::TabularSplit load_split(const PipelineConfig& cfg, const Prepared& p, const std::string& id) {
  const auto d = canonicalize(data::load_tabular(stage_dir(cfg, "prepare") / "data" / (id + ".csv")), p.classes,
                              static_cast<std::size_t>(p.encoder.n_features));
  return data::split(d, dataset_seed(cfg.seed, kSplitSeed, id), cfg.split_ratio);
}

std::vector<double> label_values(const json& j) { return j.get<std::vector<double>>(); }

}  // namespace

// ---- config ----

void to_json(json& j, const PipelineConfig& c) {
  json corpora = json::array();
  for (const auto& r : c.corpora) corpora.push_back({{"id", r.id}, {"path", r.path.generic_string()}});
  json sample{{"S", c.sample.S}, {"k", c.sample.k}, {"delta", c.sample.delta}};
  if (c.sample.m) sample["m"] = *c.sample.m;
  if (c.sample.m_margin != 1.0) sample["m_margin"] = c.sample.m_margin;
  j = json{{"format_version", kFormatVersion},
           {"seed", c.seed},
           {"corpora", corpora},
           {"sample", sample},
           {"encoder", c.encoder},
           {"learner", env::to_string(c.learner)},
           {"label_budget", c.label_budget},
           {"eval_budget", c.eval_budget},
           {"core", c.core},
           {"lopt", c.lopt},
           {"split_ratio", c.split_ratio},
           {"holdout_fraction", c.holdout_fraction},
           {"workers", c.workers},
           {"out", c.out.generic_string()}};
}

void from_json(const json& j, PipelineConfig& c) {
  if (j.value("format_version", kFormatVersion) != kFormatVersion) throw std::invalid_argument("unsupported config version");
  c.seed = j.value("seed", c.seed);
  c.corpora.clear();
  std::set<std::string> seen;
  for (const auto& r : j.at("corpora")) {
    CorpusRef ref{r.at("id").get<std::string>(), r.at("path").get<std::string>()};
    if (!valid_id(ref.id)) throw std::invalid_argument("corpus id '" + ref.id + "' must be [A-Za-z0-9_.-]+");
    if (!seen.insert(ref.id).second) throw std::invalid_argument("duplicate corpus id '" + ref.id + "'");
    c.corpora.push_back(std::move(ref));
  }
  if (c.corpora.empty()) throw std::invalid_argument("config lists no corpora");
  const auto& s = j.at("sample");
  c.sample.S = s.at("S").get<std::size_t>();
  c.sample.k = s.value("k", c.sample.k);
  c.sample.delta = s.value("delta", c.sample.delta);
  c.sample.m = s.contains("m") ? std::optional<std::size_t>(s.at("m").get<std::size_t>()) : std::nullopt;
  c.sample.m_margin = s.value("m_margin", 1.0);
  if (!(c.sample.m_margin >= 1.0)) throw std::invalid_argument("sample.m_margin must be at least 1");
  if (c.sample.k == 0) throw std::invalid_argument("sample.k must be positive");
  if (!(c.sample.delta > 0.0 && c.sample.delta <= 1.0)) throw std::invalid_argument("sample.delta must be in (0, 1]");
  c.encoder = j.at("encoder").get<npe::EncoderSpec>();
  if (c.encoder.variant != npe::Variant::table) throw std::invalid_argument("the pipeline runs tabular corpora only");
  c.learner = env::learner_from_string(j.value("learner", env::to_string(c.learner)));
  c.label_budget = j.value("label_budget", c.label_budget);
  c.eval_budget = j.value("eval_budget", c.eval_budget);
  if (j.contains("core")) c.core = j.at("core").get<cn::CoreNetworkSpec>();
  if (j.contains("lopt")) c.lopt = j.at("lopt").get<lopt::LoptConfig>();
  c.split_ratio = j.value("split_ratio", c.split_ratio);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.workers = j.value("workers", c.workers);
  c.out = j.value("out", c.out.generic_string());
  if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw std::invalid_argument("split_ratio must be in (0, 1)");
  if (!(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0)) {
    throw std::invalid_argument("holdout_fraction must be in (0, 1)");
  }
  if (c.eval_budget == 0) throw std::invalid_argument("eval_budget must be positive");
}

PipelineConfig load_config(const fs::path& path) {
  PipelineConfig c;
  try {
    c = read_json(path).get<PipelineConfig>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  for (auto& r : c.corpora) {
    if (r.path.is_relative()) r.path = base / r.path;
  }
  if (c.out.is_relative()) c.out = base / c.out;
  return c;
}

StageError::StageError(std::string stage, const std::string& what)
    : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}

// ---- helpers ----

std::vector<std::string> canonical_classes(const std::vector<std::vector<std::string>>& per_corpus) {
  std::set<std::string> all;
  for (const auto& v : per_corpus) all.insert(v.begin(), v.end());
  std::vector<std::string> out(all.begin(), all.end());
  auto as_number = [](const std::string& s) -> std::optional<double> {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
  };
  const bool numeric = std::all_of(out.begin(), out.end(), [&](const std::string& s) { return as_number(s).has_value(); });
  if (numeric) {
    std::stable_sort(out.begin(), out.end(), [&](const std::string& a, const std::string& b) {
      return *as_number(a) < *as_number(b);
    });
  }
  return out;
}

data::TabularDataset canonicalize(const data::TabularDataset& d, const std::vector<std::string>& classes,
                                  std::size_t n_features) {
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index[classes[i]] = static_cast<int>(i);
  std::vector<int> remap(d.class_names.size());
  for (std::size_t i = 0; i < d.class_names.size(); ++i) {
    const auto it = index.find(d.class_names[i]);
    if (it == index.end()) throw std::invalid_argument("class '" + d.class_names[i] + "' is not in the class list");
    remap[i] = it->second;
  }
  if (d.n_features > n_features) {
    throw std::invalid_argument("dataset has " + std::to_string(d.n_features) + " features, encoder takes " +
                                std::to_string(n_features));
  }
  auto out = data::zero_pad_features(d, n_features);
  for (auto& l : out.labels) l = remap[static_cast<std::size_t>(l)];
  out.class_names = classes;
  out.n_classes = static_cast<int>(classes.size());
  return out;
}

std::uint64_t dataset_seed(std::uint64_t seed, std::uint64_t purpose, const std::string& id) {
  return mix_seed(mix_seed(seed, purpose), codec::fnv1a64(id));
}

std::uint64_t split_seed(std::uint64_t seed, const std::string& id) { return dataset_seed(seed, kSplitSeed, id); }

std::uint64_t hash_file(const fs::path& path) { return codec::fnv1a64(read_file(path)); }

// ---- prepare ----

StageResult run_prepare(const PipelineConfig& cfg) {
  const std::string name = "prepare";
  Stage st{name, 0, std::nullopt};
  std::vector<Corpus> corpora;
  Resolved res;
  try {
    json c = cfg;
    st.config_hash = hash_json({{"seed", cfg.seed},
                                {"corpora", corpora_fingerprint(cfg)},
                                {"sample", c.at("sample")},
                                {"encoder", c.at("encoder")},
                                {"learner", c.at("learner")},
                                {"label_budget", cfg.label_budget},
                                {"lopt", c.at("lopt")},
                                {"split_ratio", cfg.split_ratio}});
    if (up_to_date(stage_dir(cfg, name), st)) return {name, true, manifest_hash(stage_dir(cfg, name))};

    // Load and plan everything before touching the output directory.
    std::vector<std::vector<std::string>> class_lists;
    std::size_t max_features = 0;
    for (const auto& ref : cfg.corpora) {
      Corpus k{ref, data::load_tabular(ref.path), {}};
      class_lists.push_back(k.data.class_names);
      max_features = std::max(max_features, k.data.n_features);
      const auto N = k.data.n_rows;
      try {
        if (cfg.sample.m) {
          const double p0 = sampling::compute_p0(N, cfg.sample.S, cfg.sample.delta);
          k.plan = {N, cfg.sample.S, cfg.sample.k, cfg.sample.delta, *cfg.sample.m, p0};
        } else {
          k.plan = sampling::plan_m(N, cfg.sample.S, cfg.sample.k, cfg.sample.delta);
          k.plan.m = static_cast<std::size_t>(std::ceil(static_cast<double>(k.plan.m) * cfg.sample.m_margin));
        }
      } catch (const std::exception& e) {
        throw std::runtime_error("corpus " + ref.id + ": " + e.what());
      }
      corpora.push_back(std::move(k));
    }
    res.classes = canonical_classes(class_lists);
    res.encoder = cfg.encoder;
    if (res.encoder.n_features == 0) res.encoder.n_features = static_cast<int>(max_features);
    if (res.encoder.n_classes == 0) res.encoder.n_classes = static_cast<int>(res.classes.size());
    if (res.encoder.n_classes != static_cast<int>(res.classes.size())) {
      throw std::runtime_error("encoder expects " + std::to_string(res.encoder.n_classes) + " classes, corpora have " +
                               std::to_string(res.classes.size()));
    }
    (void)npe::meta_shapes(res.encoder);
    for (auto& k : corpora) k.data = canonicalize(k.data, res.classes, static_cast<std::size_t>(res.encoder.n_features));
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }

  return run_stage(cfg, st, [&](const fs::path& dir) {
    struct Job {
      std::string id;
      std::string corpus;
      data::TabularDataset data;
      env::HyperparamVector label;
      double accuracy = 0.0;
      std::size_t evaluations = 0;
    };
    std::vector<Job> jobs;
    for (const auto& k : corpora) {
      const auto set = sampling::sample_independent(k.plan, dataset_seed(cfg.seed, kSampleSeed, k.ref.id), k.ref.id);
      json sj = set;
      sj["plan"] = k.plan;
      write_json(dir / "samples" / (k.ref.id + ".json"), sj);
      for (std::size_t i = 0; i < set.subsets.size(); ++i) {
        jobs.push_back({k.ref.id + ".s" + std::to_string(i), k.ref.id, data::subset(k.data, set.subsets[i]), {}, 0, 0});
      }
    }
    fs::create_directories(dir / "data");
    fs::create_directories(dir / "metas");
    const auto env = env::toy_learner_env(cfg.learner, cfg.seed);
    const auto enc_seed = mix_seed(cfg.seed, kEncoderSeed);
    parallel_for(jobs.size(), cfg.workers, [&](std::size_t i) {
      auto& job = jobs[i];
      data::save_tabular(job.data, dir / "data" / (job.id + ".csv"));
      const auto split = data::split(job.data, dataset_seed(cfg.seed, kSplitSeed, job.id), cfg.split_ratio);
      const auto meta = npe::encode_dataset(split.train, res.encoder, enc_seed, job.id);
      write_json(dir / "metas" / (job.id + ".json"), meta);
      const auto r = labeling::label_dataset(*env, split, cfg.label_budget, dataset_seed(cfg.seed, kLabelSeed, job.id),
                                             cfg.lopt, job.id);
      job.label = r.best;
      job.accuracy = r.accuracy;
      job.evaluations = r.evaluations;
      job.data = {};
    });
    json labels = json::array();
    std::vector<std::string> ids;
    for (const auto& job : jobs) {
      labels.push_back({{"dataset_id", job.id},
                        {"corpus", job.corpus},
                        {"raw_label", job.label},
                        {"achieved_accuracy", job.accuracy},
                        {"evaluations", job.evaluations}});
      ids.push_back(job.id);
    }
    write_json(dir / "labels.json", labels);
    return json{{"examples", ids},
                {"class_names", res.classes},
                {"encoder", res.encoder},
                {"encoder_hash", codec::hex64(npe::spec_hash(res.encoder))},
                {"specs", specs_of(cfg)}};
  });
}

// ---- train ----

StageResult run_train(const PipelineConfig& cfg) {
  const std::string name = "train";
  Stage st{name, 0, upstream(cfg, "prepare", name)};
  json c = cfg;
  st.config_hash =
      hash_json({{"seed", cfg.seed}, {"core", c.at("core")}, {"holdout_fraction", cfg.holdout_fraction}});
  return run_stage(cfg, st, [&](const fs::path& dir) {
    const auto p = load_prepared(cfg, name);
    const std::size_t n = p.ids.size();
    const auto n_test = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(cfg.holdout_fraction * static_cast<double>(n))));
    if (n < n_test + 2) {
      throw StageError(name, "need at least " + std::to_string(n_test + 2) + " labeled datasets, have " +
                                 std::to_string(n));
    }
    auto order = p.ids;
    Rng rng(mix_seed(cfg.seed, kMetaSplitSeed));
    rng.shuffle(order);
    std::vector<std::string> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::string> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());

    std::vector<cn::LabeledExample> examples;
    for (const auto& id : train) {
      auto meta = read_json(stage_dir(cfg, "prepare") / "metas" / (id + ".json")).get<npe::EncodedMeta>();
      const auto& l = p.labels.at(id);
      examples.push_back(cn::make_example(std::move(meta), label_values(l.at("raw_label")),
                                          l.at("achieved_accuracy").get<double>(), p.specs));
    }
    auto model = cn::train_cn(examples, p.specs, cfg.core, mix_seed(cfg.seed, kTrainSeed));
    model.encoder = {{"spec", p.encoder},
                     {"class_names", p.classes},
                     {"split_ratio", cfg.split_ratio},
                     {"encoder_seed", mix_seed(cfg.seed, kEncoderSeed)}};

    std::string curves = "epoch,train_loss,validation_loss\n";
    curves += "0," + num(model.initial_loss) + "," + num(model.initial_validation_loss) + "\n";
    bool finite = std::isfinite(model.initial_loss);
    for (std::size_t e = 0; e < model.loss_history.size(); ++e) {
      const double v = e < model.validation_history.size() ? model.validation_history[e] : NAN;
      curves += std::to_string(e + 1) + "," + num(model.loss_history[e]) + "," + num(v) + "\n";
      finite = finite && std::isfinite(model.loss_history[e]);
    }
    if (!finite) {
      const auto kept = cfg.out / "train.diverged.csv";
      write_file(kept, curves);
      throw StageError(name, "core network training diverged; loss curves kept in " + kept.string());
    }
    write_file(dir / "curves.csv", curves);
    cn::save_model(model, dir / "model.json");
    write_json(dir / "split.json", {{"train", train}, {"test", test}});
    return json{{"train", train.size()}, {"test", test.size()}};
  });
}

// ---- evaluate ----

StageResult run_evaluate(const PipelineConfig& cfg) {
  const std::string name = "evaluate";
  Stage st{name, 0, upstream(cfg, "train", name)};
  json c = cfg;
  st.config_hash = hash_json({{"seed", cfg.seed},
                              {"eval_budget", cfg.eval_budget},
                              {"lopt", c.at("lopt")},
                              {"learner", c.at("learner")},
                              {"split_ratio", cfg.split_ratio}});
  return run_stage(
      cfg, st,
      [&](const fs::path& dir) {
        const auto p = load_prepared(cfg, name);
        const auto tdir = stage_dir(cfg, "train");
        const auto model = cn::load_model(tdir / "model.json");
        const auto bcg = cn::untrained_cn(model, mix_seed(cfg.seed, kBcgSeed));
        const auto test = read_json(tdir / "split.json").at("test").get<std::vector<std::string>>();
        const auto env = env::toy_learner_env(cfg.learner, cfg.seed);
        const auto enc_seed = mix_seed(cfg.seed, kEncoderSeed);
        if (npe::spec_hash(p.encoder) != model.encoder_hash) {
          throw cn::HashMismatch("prepared encoder spec does not match the model");
        }

        struct Cell {
          std::optional<double> accuracy;
          std::size_t evaluations = 0;
          std::string error;
          double seconds = 0.0;
          env::HyperparamVector prediction;
        };
        std::vector<std::array<Cell, 4>> cells(test.size());
        parallel_for(test.size(), cfg.workers, [&](std::size_t i) {
          const auto& id = test[i];
          auto& row = cells[i];
          std::optional<data::TabularSplit> split;
          std::optional<npe::EncodedMeta> meta;
          double encode_s = 0.0;
          try {
            split = load_split(cfg, p, id);
            const auto t0 = std::chrono::steady_clock::now();
            meta = npe::encode_dataset(split->train, p.encoder, enc_seed, id);
            encode_s = seconds_since(t0);
          } catch (const std::exception& e) {
            for (auto& cell : row) cell.error = e.what();
            return;
          }
          auto one_shot = [&](Cell& cell, const cn::CoreNetworkModel& m) {
            try {
              const auto t0 = std::chrono::steady_clock::now();
              cell.prediction = cn::predict(m, *meta);
              cell.accuracy = env->evaluate(cell.prediction, *split);
              cell.seconds = encode_s + seconds_since(t0);
              cell.evaluations = 1;
            } catch (const std::exception& e) {
              cell.error = e.what();
            }
          };
          one_shot(row[0], model);
          if (row[0].accuracy) {
            try {
              auto lc = cfg.lopt;
              lc.budget = cfg.eval_budget;
              const auto t0 = std::chrono::steady_clock::now();
              const auto r = lopt::lopt(row[0].prediction, *env, *split, lc, false, *row[0].accuracy);
              row[1].seconds = row[0].seconds + seconds_since(t0);
              row[1].accuracy = r.accuracy;
              row[1].prediction = r.best;
              row[1].evaluations = 1 + r.evaluations;
            } catch (const std::exception& e) {
              row[1].error = e.what();
            }
          } else {
            row[1].error = "no CN prediction: " + row[0].error;
          }
          try {
            const auto t0 = std::chrono::steady_clock::now();
            const auto r =
                labeling::random_search(*env, *split, cfg.eval_budget, dataset_seed(cfg.seed, kBaselineSeed, id));
            row[2].seconds = seconds_since(t0);
            row[2].accuracy = r.accuracy;
            row[2].prediction = r.best;
            row[2].evaluations = r.evaluations;
          } catch (const std::exception& e) {
            row[2].error = e.what();
          }
          one_shot(row[3], bcg);
        });

        json rows = json::array(), timing = json::array();
        for (std::size_t i = 0; i < test.size(); ++i) {
          for (std::size_t g = 0; g < kGroups.size(); ++g) {
            const auto& cell = cells[i][g];
            rows.push_back({{"dataset_id", test[i]},
                            {"group", kGroups[g]},
                            {"accuracy", cell.accuracy ? json(*cell.accuracy) : json(nullptr)},
                            {"evaluations", cell.evaluations},
                            {"prediction", cell.prediction},
                            {"error", cell.error}});
            if (cell.error.empty()) timing.push_back({{"dataset_id", test[i]}, {"group", kGroups[g]}, {"seconds", cell.seconds}});
          }
        }
        json oracle = json::object();
        for (const auto& id : test) {
          const auto& l = p.labels.at(id);
          oracle[id] = {{"raw_label", l.at("raw_label")}, {"achieved_accuracy", l.at("achieved_accuracy")}};
        }
        write_json(dir / "results.json", {{"format_version", kFormatVersion},
                                          {"specs", p.specs},
                                          {"rows", rows},
                                          {"oracle", oracle}});
        write_json(dir / "timing.json", {{"format_version", kFormatVersion}, {"rows", timing}});
        return json{{"datasets", test.size()}};
      },
      {"timing.json"});
}

// ---- statistics ----

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

GroupSummary summarize(const std::string& group, std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("cannot summarize an empty group");
  std::sort(values.begin(), values.end());
  GroupSummary s;
  s.group = group;
  s.n = values.size();
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile(values, 0.25);
  s.median = quantile(values, 0.5);
  s.q3 = quantile(values, 0.75);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
  return s;
}

std::vector<GroupSummary> summarize_rows(const std::vector<ReportRow>& rows, std::vector<std::string>& warnings) {
  std::vector<GroupSummary> out;
  for (const auto& g : kGroups) {
    std::vector<double> v;
    std::size_t failed = 0;
    for (const auto& r : rows) {
      if (r.group != g) continue;
      if (r.accuracy) {
        v.push_back(*r.accuracy);
      } else {
        ++failed;
      }
    }
    if (failed) warnings.push_back(g + ": " + std::to_string(failed) + " failed row(s) excluded");
    if (v.empty()) {
      warnings.push_back(g + ": no successful rows, group omitted");
      continue;
    }
    out.push_back(summarize(g, std::move(v)));
  }
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

json summary_json(const GroupSummary& s) {
  return {{"group", s.group}, {"n", s.n},   {"max", s.max}, {"q3", s.q3}, {"median", s.median},
          {"mean", s.mean},   {"sd", s.sd}, {"q1", s.q1},   {"min", s.min}};
}

void long_rows(std::string& out, const GroupSummary& s, const std::string& prefix) {
  const std::pair<const char*, double> m[] = {{"max", s.max},   {"q3", s.q3}, {"median", s.median}, {"mean", s.mean},
                                              {"sd", s.sd},     {"q1", s.q1}, {"min", s.min}};
  for (const auto& [k, v] : m) out += csv_field(s.group) + "," + prefix + k + "," + num(v) + "\n";
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman needs equal-length samples");
  if (x.size() < 2) return NAN;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return NAN;
  return sxy / std::sqrt(sxx * syy);
}

// ---- report ----

StageResult run_report(const PipelineConfig& cfg) {
  const std::string name = "report";
  Stage st{name, hash_json(json::object()), upstream(cfg, "evaluate", name)};
  return run_stage(
      cfg, st,
      [&](const fs::path& dir) {
        const auto edir = stage_dir(cfg, "evaluate");
        const auto results = read_json(edir / "results.json");
        const auto specs = results.at("specs").get<env::Specs>();
        std::vector<ReportRow> rows;
        for (const auto& r : results.at("rows")) {
          rows.push_back({r.at("dataset_id").get<std::string>(), r.at("group").get<std::string>(),
                          r.at("accuracy").is_null() ? std::nullopt : std::optional<double>(r.at("accuracy").get<double>()),
                          r.at("evaluations").get<std::size_t>(), r.at("error").get<std::string>()});
        }
        if (rows.empty()) throw std::runtime_error("evaluation produced no rows");

        std::string csv = "dataset_id,group,accuracy,evaluations,error\n";
        for (const auto& r : rows) {
          csv += csv_field(r.dataset_id) + "," + csv_field(r.group) + "," + (r.accuracy ? num(*r.accuracy) : "") + "," +
                 std::to_string(r.evaluations) + "," + csv_field(r.error) + "\n";
        }
        write_file(dir / "rows.csv", csv);

        std::vector<std::string> warnings;
        const auto summaries = summarize_rows(rows, warnings);
        std::string long_csv = "group,metric,value\n";
        json groups = json::array();
        for (const auto& s : summaries) {
          groups.push_back(summary_json(s));
          long_rows(long_csv, s, "accuracy_");
        }

        // Recovery of the oracle labels by the CN, per hyperparameter.
        const auto& oracle = results.at("oracle");
        std::string pred_csv = "dataset_id,group";
        for (const auto& s : specs) pred_csv += "," + csv_field(s.name);
        pred_csv += ",accuracy\n";
        std::vector<std::vector<double>> cn_pred(specs.size()), truth(specs.size());
        std::vector<std::string> seen;
        for (const auto& r : results.at("rows")) {
          const auto id = r.at("dataset_id").get<std::string>();
          if (std::find(seen.begin(), seen.end(), id) == seen.end()) {
            seen.push_back(id);
            const auto label = oracle.at(id).at("raw_label").get<std::vector<double>>();
            pred_csv += csv_field(id) + ",ORACLE";
            for (double v : label) pred_csv += "," + num(v);
            pred_csv += "," + num(oracle.at(id).at("achieved_accuracy").get<double>()) + "\n";
          }
          const auto pred = r.at("prediction").get<std::vector<double>>();
          if (pred.size() != specs.size()) continue;
          pred_csv += csv_field(id) + "," + csv_field(r.at("group").get<std::string>());
          for (double v : pred) pred_csv += "," + num(v);
          pred_csv += "," + (r.at("accuracy").is_null() ? std::string() : num(r.at("accuracy").get<double>())) + "\n";
          if (r.at("group") == "CN") {
            const auto label = oracle.at(id).at("raw_label").get<std::vector<double>>();
            for (std::size_t k = 0; k < specs.size(); ++k) {
              cn_pred[k].push_back(pred[k]);
              truth[k].push_back(label[k]);
            }
          }
        }
        write_file(dir / "predictions.csv", pred_csv);
        json recovery = json::object();
        for (std::size_t k = 0; k < specs.size(); ++k) {
          const double rho = spearman(cn_pred[k], truth[k]);
          recovery[specs[k].name] = std::isfinite(rho) ? json(rho) : json(nullptr);
          if (!std::isfinite(rho)) warnings.push_back("spearman undefined for " + specs[k].name);
          else long_csv += "CN,spearman_" + specs[k].name + "," + num(rho) + "\n";
        }
        write_file(dir / "long.csv", long_csv);
        write_json(dir / "summary.json", {{"format_version", kFormatVersion},
                                          {"quantiles", "linear interpolation, h = (n - 1) q"},
                                          {"sd", "sample, n - 1"},
                                          {"rows", rows.size()},
                                          {"groups", groups},
                                          {"spearman_cn_vs_oracle", recovery},
                                          {"warnings", warnings}});

        // Wall times live apart from the accuracy report so the latter is reproducible.
        const auto timing = read_json(edir / "timing.json").at("rows");
        std::string tcsv = "dataset_id,group,wall_time_seconds,log10_seconds\n";
        std::map<std::string, std::vector<double>> by_group;
        for (const auto& t : timing) {
          const double s = t.at("seconds").get<double>();
          tcsv += csv_field(t.at("dataset_id").get<std::string>()) + "," + csv_field(t.at("group").get<std::string>()) +
                  "," + num(s) + "," + num(std::log10(std::max(s, 1e-9))) + "\n";
          by_group[t.at("group").get<std::string>()].push_back(s);
        }
        write_file(dir / "timing.csv", tcsv);
        json tgroups = json::array();
        for (const auto& g : kGroups) {
          if (!by_group.count(g)) continue;
          const auto s = summarize(g, by_group[g]);
          auto j = summary_json(s);
          j["log10_median"] = std::log10(std::max(s.median, 1e-9));
          j["log10_mean"] = std::log10(std::max(s.mean, 1e-9));
          tgroups.push_back(j);
        }
        json tsum{{"format_version", kFormatVersion}, {"unit", "seconds"}, {"groups", tgroups}};
        if (by_group.count("CN") && by_group.count("BASELINE")) {
          tsum["cn_to_baseline_median_ratio"] =
              summarize("CN", by_group["CN"]).median / summarize("BASELINE", by_group["BASELINE"]).median;
        }
        write_json(dir / "timing_summary.json", tsum);
        return json{{"rows", rows.size()}, {"warnings", warnings.size()}};
      },
      {"timing.csv", "timing_summary.json"});
}

std::vector<StageResult> run_all(const PipelineConfig& cfg) {
  return {run_prepare(cfg), run_train(cfg), run_evaluate(cfg), run_report(cfg)};
}

}  // namespace paramap::pipeline
