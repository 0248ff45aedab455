// Experiment driver: continual-learning benchmark runs, hyperparameter
// grids, the continual-RL harness, the gradient-alignment probe, and a
// plain-text report over result files.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "merlab/experiment.hpp"

using namespace merlab;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config, preset, benchmark, algorithm, name, data_dir, out;
  std::vector<std::uint64_t> seeds;
  long long buffer = -1;
  double alpha = -1, beta = -1, gamma = -1, ewc_lambda = -1, gem_strength = -1;
  int s = -1, k = -1, tasks = -1, train_per_task = -1;
  int eval_per_task = -1, jobs = -1;
  bool probe_alignment = false, probe_eval_matrix = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON config file");
    app->add_option("--preset", preset,
                    "preset name, e.g. rot-5120-mer_a1");
    app->add_option("--benchmark", benchmark,
                    "rotations | permutations | many_permutations | synthetic");
    app->add_option("--algorithm", algorithm, "learner algorithm");
    app->add_option("--buffer", buffer, "replay buffer capacity");
    app->add_option("--seeds", seeds, "seed list")->delimiter(',');
    app->add_option("--alpha", alpha, "inner learning rate");
    app->add_option("--beta", beta, "within-batch meta rate");
    app->add_option("--gamma", gamma, "across-batch meta rate");
    app->add_option("--s", s, "batch count / current-example multiplier");
    app->add_option("--k", k, "batch size (current example included)");
    app->add_option("--ewc-lambda", ewc_lambda, "EWC penalty strength");
    app->add_option("--gem-strength", gem_strength, "GEM memory strength");
    app->add_option("--tasks", tasks, "task count");
    app->add_option("--train-per-task", train_per_task,
                    "training examples per task");
    app->add_option("--data-dir", data_dir,
                    "IDX data directory (or MERLAB_DATA_DIR)");
    app->add_option("--out", out, "output directory");
    app->add_option("--name", name, "experiment name (file stem)");
    app->add_option("--eval-per-task", eval_per_task,
                    "cap on evaluated test examples per task (0 = all)");
    app->add_option("--jobs", jobs, "parallel seed workers");
    app->add_flag("--probe-alignment", probe_alignment,
                  "record the gradient-alignment trace");
    app->add_flag("--probe-eval-matrix", probe_eval_matrix,
                  "evaluate and emit the full task-by-task matrix");
  }

  json to_json() const {
    json j = json::object();
    if (!preset.empty()) j["preset"] = preset;
    if (!benchmark.empty()) j["benchmark"] = benchmark;
    if (!algorithm.empty()) j["algorithm"] = algorithm;
    if (buffer >= 0) j["buffer"] = buffer;
    if (!seeds.empty()) j["seeds"] = seeds;
    if (alpha >= 0) j["alpha"] = alpha;
    if (beta >= 0) j["beta"] = beta;
    if (gamma >= 0) j["gamma"] = gamma;
    if (s >= 0) j["s"] = s;
    if (k >= 0) j["k"] = k;
    if (ewc_lambda >= 0) j["ewc_lambda"] = ewc_lambda;
    if (gem_strength >= 0) j["gem_memory_strength"] = gem_strength;
    if (tasks >= 0) j["tasks"] = tasks;
    if (train_per_task >= 0) j["train_per_task"] = train_per_task;
    if (!data_dir.empty()) j["data_dir"] = data_dir;
    if (!out.empty()) j["out"] = out;
    if (!name.empty()) j["name"] = name;
    if (eval_per_task >= 0) j["eval_per_task"] = eval_per_task;
    if (jobs >= 0) j["jobs"] = jobs;
    json probes = json::object();
    if (probe_alignment) probes["alignment"] = true;
    if (probe_eval_matrix) probes["eval_matrix"] = true;
    if (!probes.empty()) j["probes"] = probes;
    return j;
  }

  ExperimentSpec resolve() const {
    const json flags = to_json();
    if (!config.empty()) return parse_config_file(config, flags);
    return parse_config(json::object(), flags);
  }
};

void print_result(const ExperimentSpec& spec, const ExperimentResult& r) {
  std::printf("%s: RA %.2f +- %.2f  LA %.2f +- %.2f  BTI %+.2f +- %.2f",
              spec.resolved_name().c_str(), r.ra.mean, r.ra.stddev, r.la.mean,
              r.la.stddev, r.bti.mean, r.bti.stddev);
  if (!std::isnan(r.fti.mean) && spec.benchmark == Benchmark::kRotations)
    std::printf("  FTI %.2f +- %.2f", r.fti.mean, r.fti.stddev);
  std::printf("  (%.1fs)\n", r.wall_seconds_total);
  int failures = 0;
  for (const auto& row : r.rows) failures += row.failed;
  if (failures) std::printf("  %d seed(s) failed; see summary JSON\n", failures);
}

int cmd_run(const CommonFlags& flags) {
  ExperimentSpec spec = flags.resolve();
  ExperimentResult result = run_experiment(spec);
  print_result(spec, result);
  return 0;
}

int cmd_grid(CommonFlags flags, const std::vector<std::string>& algorithms,
             const std::vector<long long>& buffers) {
  for (const std::string& algo : algorithms) {
    for (long long buffer : buffers) {
      flags.algorithm = algo;
      flags.buffer = buffer;
      flags.name.clear();
      ExperimentSpec spec = flags.resolve();
      ExperimentResult result = run_experiment(spec);
      print_result(spec, result);
    }
  }
  return 0;
}

int cmd_probe(CommonFlags flags) {
  flags.probe_alignment = true;
  ExperimentSpec spec = flags.resolve();
  ExperimentResult result = run_experiment(spec);
  std::printf("%s alignment probe:\n", spec.resolved_name().c_str());
  for (const auto& row : result.rows) {
    if (row.failed) continue;
    std::printf("  seed %llu: mean dot %+0.4f +- %.4f over %zu records\n",
                static_cast<unsigned long long>(row.seed), row.alignment.mean,
                row.alignment.stddev, row.alignment.samples.size());
  }
  return 0;
}

int cmd_rl(const RlExperimentSpec& spec) {
  auto runs = run_rl_experiment(spec);
  for (const auto& r : runs) {
    std::printf(
        "catcher %s seed %llu: task0 final %.2f, post-task0 peak %.2f -> %s\n",
        r.variant == DqnVariant::kMer ? "mer" : "er",
        static_cast<unsigned long long>(r.seed), r.final_task0,
        r.peak_task0_post, r.csv_path.c_str());
  }
  return 0;
}

int cmd_report(const std::string& dir) {
  std::printf("%-32s %8s %8s %8s %8s\n", "experiment", "RA", "LA", "BTI",
              "FTI");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().filename().string().ends_with("_summary.json"))
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream f(path);
    json j = json::parse(f);
    const auto& m = j.at("metrics");
    auto cell = [&](const char* key) -> std::string {
      if (!m.contains(key)) return "-";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", m.at(key).at("mean").get<double>());
      return buf;
    };
    std::printf("%-32s %8s %8s %8s %8s\n",
                j.at("name").get<std::string>().c_str(), cell("ra").c_str(),
                cell("la").c_str(), cell("bti").c_str(), cell("fti").c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual-learning lab: MER, its ablations, and baselines"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "run one experiment");
  run_flags.attach(run);

  CommonFlags grid_flags;
  std::vector<std::string> grid_algorithms;
  std::vector<long long> grid_buffers{5120};
  CLI::App* grid = app.add_subcommand("grid", "sweep algorithms x buffers");
  grid_flags.attach(grid);
  grid->add_option("--algorithms", grid_algorithms, "algorithm list")
      ->required()
      ->delimiter(',');
  grid->add_option("--buffers", grid_buffers, "buffer list")->delimiter(',');

  CommonFlags probe_flags;
  CLI::App* probe =
      app.add_subcommand("probe", "gradient-alignment probe runs");
  probe_flags.attach(probe);

  RlExperimentSpec rl_spec;
  CLI::App* rl = app.add_subcommand("rl", "continual-RL Catcher runs");
  rl->add_option("--variant", rl_spec.variant, "er | mer | both");
  rl->add_option("--seeds", rl_spec.seeds, "seed list")->delimiter(',');
  rl->add_option("--out", rl_spec.output_dir, "output directory");
  rl->add_option("--tasks", rl_spec.dqn.task_count, "task count");
  rl->add_option("--frames-per-task", rl_spec.dqn.frames_per_task,
                 "frames per task");
  rl->add_option("--alpha", rl_spec.dqn.alpha, "inner learning rate");
  rl->add_option("--beta", rl_spec.dqn.beta, "within-batch meta rate");
  rl->add_option("--gamma-meta", rl_spec.dqn.gamma_meta,
                 "across-batch meta rate");
  rl->add_option("--k", rl_spec.dqn.k, "batch size");
  rl->add_option("--steps", rl_spec.dqn.steps, "batch count");
  rl->add_option("--rl-buffer", rl_spec.dqn.buffer_capacity,
                 "transition buffer capacity");
  rl->add_option("--eval-every", rl_spec.dqn.eval_every_frames,
                 "frames between greedy evaluations");

  std::string report_dir = "results";
  CLI::App* report = app.add_subcommand("report", "summarize result files");
  report->add_option("--dir", report_dir, "directory of summary files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_flags);
    if (grid->parsed())
      return cmd_grid(grid_flags, grid_algorithms, grid_buffers);
    if (probe->parsed()) return cmd_probe(probe_flags);
    if (rl->parsed()) return cmd_rl(rl_spec);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
