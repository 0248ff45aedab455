#pragma once

// Experiment orchestration: layered config resolution, seed sweeps with
// optional parallelism, CSV/JSON result files, and the RL score log.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "merlab/dqn.hpp"
#include "merlab/learners.hpp"
#include "merlab/metrics.hpp"
#include "merlab/presets.hpp"
#include "merlab/streams.hpp"

namespace merlab {

struct ExperimentSpec {
  Benchmark benchmark = Benchmark::kSynthetic;
  StreamSpec stream;            // seed field is ignored; set per run seed
  LearnerConfig learner;        // seed field is ignored; set per run seed
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string output_dir = "results";
  std::string data_dir;         // IDX files; env fallback MERLAB_DATA_DIR
  std::string name;             // file stem; defaulted when empty
  bool probe_alignment = false;
  bool probe_eval_matrix = false;
  int eval_per_task = 0;        // 0 = full test sets
  int jobs = 1;

  std::string resolved_name() const {
    if (!name.empty()) return name;
    std::string n = benchmark_name(benchmark);
    n += "-" + std::to_string(learner.buffer_capacity);
    n += "-";
    n += algorithm_name(learner.algorithm);
    return n;
  }
};

struct SeedResult {
  std::uint64_t seed = 0;
  double ra = 0.0, la = 0.0, bti = 0.0;
  double fti = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  AlignmentTrace alignment;
  std::vector<std::vector<double>> matrix;  // filled when probe requested
  bool failed = false;
  std::string error;
};

struct SummaryStat {
  double mean = 0.0;
  double stddev = 0.0;
};

struct ExperimentResult {
  std::vector<SeedResult> rows;
  SummaryStat ra, la, bti, fti;
  double wall_seconds_total = 0.0;
  std::string csv_path, summary_path;
};

// ---- config parsing --------------------------------------------------------

namespace detail {

inline const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "preset",      "benchmark",      "algorithm",
      "buffer",      "alpha",          "beta",
      "gamma",       "s",              "k",
      "ewc_lambda",  "gem_memory_strength", "ewc_fisher_examples",
      "independent_clone",             "tasks",
      "train_per_task",                "seeds",
      "data_dir",    "out",            "name",
      "probes",      "eval_per_task",  "jobs"};
  return keys;
}

inline void reject_unknown(const nlohmann::json& j) {
  for (const auto& [key, value] : j.items()) {
    const auto& ok = known_keys();
    if (std::find(ok.begin(), ok.end(), key) == ok.end())
      throw std::invalid_argument("config: unknown key \"" + key + "\"");
    if (key == "probes") {
      for (const auto& [pkey, pvalue] : value.items())
        if (pkey != "alignment" && pkey != "eval_matrix")
          throw std::invalid_argument("config: unknown key \"probes." + pkey +
                                      "\"");
    }
  }
}

}  // namespace detail

// Layered resolution: Appendix-style built-in defaults for the resolved
// (benchmark, algorithm, buffer) cell, overridden by the config file,
// overridden by command-line flags. Unknown keys are rejected by name.
inline ExperimentSpec parse_config(const nlohmann::json& file,
                                   const nlohmann::json& flags) {
  detail::reject_unknown(file);
  detail::reject_unknown(flags);

  auto pick = [&](const char* key) -> nlohmann::json {
    if (flags.contains(key)) return flags.at(key);
    if (file.contains(key)) return file.at(key);
    return nlohmann::json();
  };

  Benchmark bench = Benchmark::kSynthetic;
  Algorithm algo = Algorithm::kOnline;
  std::size_t buffer = 0;
  if (auto p = pick("preset"); !p.is_null()) {
    const std::string name = p.get<std::string>();
    const auto d1 = name.find('-');
    const auto d2 = name.find('-', d1 + 1);
    if (d1 == std::string::npos || d2 == std::string::npos)
      throw std::invalid_argument(
          "config: preset must be <benchmark>-<buffer>-<algorithm>");
    bench = benchmark_from_name(name.substr(0, d1));
    buffer = std::stoul(name.substr(d1 + 1, d2 - d1 - 1));
    algo = algorithm_from_name(name.substr(d2 + 1));
  }
  if (auto b = pick("benchmark"); !b.is_null())
    bench = benchmark_from_name(b.get<std::string>());
  if (auto a = pick("algorithm"); !a.is_null())
    algo = algorithm_from_name(a.get<std::string>());
  if (auto b = pick("buffer"); !b.is_null()) buffer = b.get<std::size_t>();

  ExperimentSpec spec;
  spec.benchmark = bench;
  spec.learner = preset_config(bench, algo, buffer);
  spec.stream.kind = stream_kind_of(bench);
  spec.stream = spec.stream.with_defaults();

  auto apply = [&](const nlohmann::json& j) {
    if (j.contains("alpha")) spec.learner.alpha = j.at("alpha").get<double>();
    if (j.contains("beta")) spec.learner.beta = j.at("beta").get<double>();
    if (j.contains("gamma")) spec.learner.gamma = j.at("gamma").get<double>();
    if (j.contains("s")) spec.learner.s = j.at("s").get<int>();
    if (j.contains("k")) spec.learner.k = j.at("k").get<int>();
    if (j.contains("ewc_lambda"))
      spec.learner.ewc_lambda = j.at("ewc_lambda").get<double>();
    if (j.contains("gem_memory_strength"))
      spec.learner.gem_memory_strength =
          j.at("gem_memory_strength").get<double>();
    if (j.contains("ewc_fisher_examples"))
      spec.learner.ewc_fisher_examples =
          j.at("ewc_fisher_examples").get<int>();
    if (j.contains("independent_clone"))
      spec.learner.independent_clone = j.at("independent_clone").get<bool>();
    if (j.contains("tasks")) spec.stream.task_count = j.at("tasks").get<int>();
    if (j.contains("train_per_task"))
      spec.stream.train_per_task = j.at("train_per_task").get<int>();
    if (j.contains("seeds"))
      spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("data_dir"))
      spec.data_dir = j.at("data_dir").get<std::string>();
    if (j.contains("out")) spec.output_dir = j.at("out").get<std::string>();
    if (j.contains("name")) spec.name = j.at("name").get<std::string>();
    if (j.contains("eval_per_task"))
      spec.eval_per_task = j.at("eval_per_task").get<int>();
    if (j.contains("jobs")) spec.jobs = j.at("jobs").get<int>();
    if (j.contains("probes")) {
      const auto& p = j.at("probes");
      if (p.contains("alignment"))
        spec.probe_alignment = p.at("alignment").get<bool>();
      if (p.contains("eval_matrix"))
        spec.probe_eval_matrix = p.at("eval_matrix").get<bool>();
    }
  };
  apply(file);
  apply(flags);

  if (spec.data_dir.empty())
    if (const char* env = std::getenv("MERLAB_DATA_DIR")) spec.data_dir = env;

  spec.learner.validate();
  spec.stream.validate();
  return spec;
}

inline ExperimentSpec parse_config_file(const std::string& path,
                                        const nlohmann::json& flags) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json file = nlohmann::json::parse(f);
  return parse_config(file, flags);
}

// ---- running ---------------------------------------------------------------

namespace detail {

inline SummaryStat summarize(const std::vector<double>& xs) {
  SummaryStat s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= xs.size();
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / (xs.size() - 1));
  }
  return s;
}

inline std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);  // exact round trip
  return buf;
}

}  // namespace detail

// One seed: build the stream, train, populate the evaluation matrix, and
// compute metrics. The full T x T matrix is evaluated only when requested;
// otherwise just the entries the metrics read (diagonal, superdiagonal,
// final row, random-init baselines).
inline SeedResult run_seed(const ExperimentSpec& spec, std::uint64_t seed,
                           std::shared_ptr<const MnistData> data) {
  SeedResult out;
  out.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();

  StreamSpec sspec = spec.stream;
  sspec.seed = derive_seed(seed, seed_tag::kStream);
  TaskStream stream = make_stream(sspec, std::move(data));
  const int T = stream.task_count();

  LearnerConfig lcfg = spec.learner;
  lcfg.seed = seed;
  lcfg.task_count = T;
  NetworkSpec base(stream.input_dim(), {100, 100}, stream.class_count());
  auto learner = make_learner(lcfg, base);

  EvalMatrix matrix(T);
  for (int j = 0; j < T; ++j)
    matrix.set_baseline(
        j, evaluate_task(*learner, stream, j, spec.eval_per_task));

  std::unique_ptr<AlignmentProbe> probe;
  if (spec.probe_alignment)
    probe = std::make_unique<AlignmentProbe>(
        std::make_shared<NetworkSpec>(base),
        derive_seed(seed, seed_tag::kProbe));

  for (int t = 0; t < T; ++t) {
    for (const Example& ex : stream.train(t)) {
      if (probe) probe->before_step(learner->params(), ex);
      learner->step(ex);
      if (probe) probe->after_step(ex);
    }
    if (spec.probe_eval_matrix) {
      for (int j = 0; j < T; ++j)
        matrix.set(t, j, evaluate_task(*learner, stream, j, spec.eval_per_task));
    } else {
      matrix.set(t, t, evaluate_task(*learner, stream, t, spec.eval_per_task));
      if (t + 1 < T)
        matrix.set(t, t + 1,
                   evaluate_task(*learner, stream, t + 1, spec.eval_per_task));
      if (t == T - 1)
        for (int j = 0; j < T; ++j)
          if (!matrix.populated(t, j))
            matrix.set(t, j,
                       evaluate_task(*learner, stream, j, spec.eval_per_task));
    }
  }

  out.ra = retained_accuracy(matrix);
  out.la = learning_accuracy(matrix);
  out.bti = backward_transfer(matrix);
  if (T >= 2) out.fti = forward_transfer(matrix);
  if (probe) out.alignment = probe->trace();
  if (spec.probe_eval_matrix) {
    out.matrix.assign(T, std::vector<double>(T, 0.0));
    for (int i = 0; i < T; ++i)
      for (int j = 0; j < T; ++j) out.matrix[i][j] = matrix.at(i, j);
  }

  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

inline std::shared_ptr<const MnistData> load_benchmark_data(
    const ExperimentSpec& spec) {
  if (spec.benchmark == Benchmark::kSynthetic) return nullptr;
  if (spec.data_dir.empty())
    throw std::runtime_error(
        "experiment: benchmark needs IDX data; set data_dir or MERLAB_DATA_DIR");
  return load_mnist(spec.data_dir);
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  // data problems must surface before any training starts
  std::shared_ptr<const MnistData> data = load_benchmark_data(spec);

  std::filesystem::create_directories(spec.output_dir);
  const std::string stem =
      (std::filesystem::path(spec.output_dir) / spec.resolved_name()).string();

  ExperimentResult result;
  result.rows.resize(spec.seeds.size());

  const int jobs =
      spec.jobs > 0 ? spec.jobs
                    : std::max(1u, std::thread::hardware_concurrency());
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t next = 0;
  while (next < spec.seeds.size()) {
    const std::size_t batch =
        std::min<std::size_t>(jobs, spec.seeds.size() - next);
    std::vector<std::future<SeedResult>> futures;
    for (std::size_t i = 0; i < batch; ++i) {
      const std::uint64_t seed = spec.seeds[next + i];
      futures.push_back(std::async(std::launch::async, [&, seed]() {
        try {
          return run_seed(spec, seed, data);
        } catch (const std::exception& e) {
          SeedResult r;
          r.seed = seed;
          r.failed = true;
          r.error = e.what();
          return r;
        }
      }));
    }
    for (std::size_t i = 0; i < batch; ++i)
      result.rows[next + i] = futures[i].get();
    next += batch;
  }
  result.wall_seconds_total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  // per-seed CSV (metrics in percentage points)
  result.csv_path = stem + ".csv";
  {
    std::ofstream csv(result.csv_path);
    csv << "seed,algorithm,benchmark,buffer,ra,la,bti,fti,wall_seconds\n";
    for (const SeedResult& r : result.rows) {
      if (r.failed) continue;
      csv << r.seed << ',' << algorithm_name(spec.learner.algorithm) << ','
          << benchmark_name(spec.benchmark) << ','
          << spec.learner.buffer_capacity << ',' << detail::fmt(100.0 * r.ra)
          << ',' << detail::fmt(100.0 * r.la) << ','
          << detail::fmt(100.0 * r.bti) << ',' << detail::fmt(100.0 * r.fti)
          << ',' << detail::fmt(r.wall_seconds) << "\n";
    }
  }

  std::vector<double> ras, las, btis, ftis;
  for (const SeedResult& r : result.rows) {
    if (r.failed) continue;
    ras.push_back(100.0 * r.ra);
    las.push_back(100.0 * r.la);
    btis.push_back(100.0 * r.bti);
    if (!std::isnan(r.fti)) ftis.push_back(100.0 * r.fti);
  }
  result.ra = detail::summarize(ras);
  result.la = detail::summarize(las);
  result.bti = detail::summarize(btis);
  result.fti = detail::summarize(ftis);

  // summary JSON, with stats recomputed from the CSV as a self-check
  {
    std::ifstream csv(result.csv_path);
    std::string line;
    std::getline(csv, line);  // header
    std::vector<double> check;
    while (std::getline(csv, line)) {
      std::stringstream ss(line);
      std::string field;
      for (int i = 0; i < 5; ++i) std::getline(ss, field, ',');
      check.push_back(std::stod(field));
    }
    const SummaryStat again = detail::summarize(check);
    if (std::abs(again.mean - result.ra.mean) > 1e-9 ||
        std::abs(again.stddev - result.ra.stddev) > 1e-9)
      throw std::runtime_error(
          "experiment: summary does not match the CSV rows");
  }

  nlohmann::json summary;
  summary["name"] = spec.resolved_name();
  summary["benchmark"] = benchmark_name(spec.benchmark);
  summary["algorithm"] = algorithm_name(spec.learner.algorithm);
  summary["buffer"] = spec.learner.buffer_capacity;
  summary["seeds"] = spec.seeds;
  summary["metrics"] = {
      {"ra", {{"mean", result.ra.mean}, {"std", result.ra.stddev}}},
      {"la", {{"mean", result.la.mean}, {"std", result.la.stddev}}},
      {"bti", {{"mean", result.bti.mean}, {"std", result.bti.stddev}}},
  };
  if (!ftis.empty())
    summary["metrics"]["fti"] = {{"mean", result.fti.mean},
                                 {"std", result.fti.stddev}};
  summary["wall_seconds_total"] = result.wall_seconds_total;
  for (const SeedResult& r : result.rows)
    if (r.failed)
      summary["failures"].push_back({{"seed", r.seed}, {"error", r.error}});
  if (spec.probe_alignment) {
    for (const SeedResult& r : result.rows) {
      if (r.failed) continue;
      summary["alignment"].push_back({{"seed", r.seed},
                                      {"mean", r.alignment.mean},
                                      {"std", r.alignment.stddev}});
    }
  }

  result.summary_path = stem + "_summary.json";
  std::ofstream(result.summary_path) << summary.dump(2) << "\n";

  // optional probe sidecars
  for (const SeedResult& r : result.rows) {
    if (r.failed) continue;
    if (spec.probe_alignment) {
      std::ofstream f(stem + "_seed" + std::to_string(r.seed) +
                      "_alignment.csv");
      f << "step,mean_dot\n";
      for (const auto& [step, v] : r.alignment.samples)
        f << step << ',' << detail::fmt(v) << "\n";
    }
    if (spec.probe_eval_matrix) {
      std::ofstream f(stem + "_seed" + std::to_string(r.seed) + "_matrix.csv");
      for (const auto& row : r.matrix) {
        for (std::size_t j = 0; j < row.size(); ++j)
          f << (j ? "," : "") << detail::fmt(100.0 * row[j]);
        f << "\n";
      }
    }
  }

  return result;
}

// ---- RL orchestration ------------------------------------------------------

struct RlExperimentSpec {
  CatcherConfig env;
  DqnConfig dqn;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string output_dir = "results";
  std::string variant = "both";  // "er", "mer", or "both"
};

struct RlRunSummary {
  std::uint64_t seed = 0;
  DqnVariant variant = DqnVariant::kEr;
  double final_task0 = 0.0;
  double peak_task0_post = 0.0;  // peak after task 0 finished training
  std::string csv_path;
};

inline RlRunSummary run_rl_seed(const RlExperimentSpec& spec,
                                std::uint64_t seed, DqnVariant variant) {
  DqnConfig cfg = spec.dqn;
  cfg.seed = seed;
  DqnRunResult run = train_dqn(spec.env, cfg, variant);

  RlRunSummary s;
  s.seed = seed;
  s.variant = variant;
  std::filesystem::create_directories(spec.output_dir);
  s.csv_path = (std::filesystem::path(spec.output_dir) /
                ("catcher-" +
                 std::string(variant == DqnVariant::kMer ? "mer" : "er") +
                 "-seed" + std::to_string(seed) + ".csv"))
                   .string();
  std::ofstream csv(s.csv_path);
  csv << "frame,task_evaluated,mean_greedy_score\n";
  const int total = cfg.task_count * cfg.frames_per_task;
  for (const ScoreRecord& r : run.scores) {
    csv << r.frame << ',' << r.task << ',' << detail::fmt(r.mean_score) << "\n";
    if (r.task == 0 && r.frame >= cfg.frames_per_task)
      s.peak_task0_post = std::max(s.peak_task0_post, r.mean_score);
    if (r.task == 0 && r.frame == total) s.final_task0 = r.mean_score;
  }
  return s;
}

inline std::vector<RlRunSummary> run_rl_experiment(const RlExperimentSpec& spec) {
  std::vector<RlRunSummary> out;
  for (std::uint64_t seed : spec.seeds) {
    if (spec.variant != "er")
      out.push_back(run_rl_seed(spec, seed, DqnVariant::kMer));
    if (spec.variant != "mer")
      out.push_back(run_rl_seed(spec, seed, DqnVariant::kEr));
  }
  return out;
}

}  // namespace merlab
