#pragma once

// Every training procedure behind one contract: consume the stream one
// example at a time, mutate parameters and memory, expose parameters for
// evaluation. Deterministic given (config, example sequence).

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "merlab/example.hpp"
#include "merlab/gem.hpp"
#include "merlab/nn.hpp"
#include "merlab/replay.hpp"
#include "merlab/rng.hpp"

namespace merlab {

enum class Algorithm {
  kOnline,
  kIndependent,
  kTaskInput,
  kEwc,
  kGem,
  kErReservoir,
  kErTasks,
  kMerA1,
  kMerObb,
  kMerCel,
};

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kOnline: return "online";
    case Algorithm::kIndependent: return "independent";
    case Algorithm::kTaskInput: return "task_input";
    case Algorithm::kEwc: return "ewc";
    case Algorithm::kGem: return "gem";
    case Algorithm::kErReservoir: return "er_reservoir";
    case Algorithm::kErTasks: return "er_tasks";
    case Algorithm::kMerA1: return "mer_a1";
    case Algorithm::kMerObb: return "mer_obb";
    case Algorithm::kMerCel: return "mer_cel";
  }
  return "?";
}

struct LearnerConfig {
  Algorithm algorithm = Algorithm::kOnline;
  double alpha = 0.01;   // inner learning rate
  double beta = 1.0;     // within-batch meta rate
  double gamma = 1.0;    // across-batch meta rate
  int s = 1;             // batch count / current-example multiplier
  int k = 1;             // batch size (current example included)
  std::size_t buffer_capacity = 0;
  double ewc_lambda = 0.0;
  double gem_memory_strength = 0.0;
  std::uint64_t seed = 0;

  int task_count = 1;            // used by gem / independent / task_input
  int ewc_fisher_examples = 1000;
  bool independent_clone = false;

  void validate() const {
    auto finite_nonneg = [](double v, const char* name) {
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument(std::string("LearnerConfig: ") + name +
                                    " must be finite and >= 0");
    };
    finite_nonneg(alpha, "alpha");
    finite_nonneg(beta, "beta");
    finite_nonneg(gamma, "gamma");
    finite_nonneg(ewc_lambda, "ewc_lambda");
    finite_nonneg(gem_memory_strength, "gem_memory_strength");
    if (s < 1 || k < 1)
      throw std::invalid_argument("LearnerConfig: s and k must be >= 1");
    if (task_count < 1)
      throw std::invalid_argument("LearnerConfig: task_count must be >= 1");
  }
};

class Learner {
 public:
  virtual ~Learner() = default;
  virtual void step(const Example& ex) = 0;
  virtual const ParamVector& params() const = 0;
  // Logits used for evaluation; task-aware baselines read ex.task_id.
  virtual void eval_logits(const Example& ex, std::span<double> out) const = 0;
  const LearnerConfig& config() const { return cfg_; }

 protected:
  explicit Learner(const LearnerConfig& cfg) : cfg_(cfg) { cfg_.validate(); }
  LearnerConfig cfg_;
};

// Common state for the single-model algorithms.
class SingleModelLearner : public Learner {
 public:
  const ParamVector& params() const override { return params_; }
  void eval_logits(const Example& ex, std::span<double> out) const override {
    auto logits = ws_.forward<float>(params_, ex.x, 0);
    std::copy(logits.begin(), logits.end(), out.begin());
  }

 protected:
  SingleModelLearner(const LearnerConfig& cfg, SpecPtr spec)
      : Learner(cfg),
        spec_(spec),
        params_(init_params(spec, derive_seed(cfg.seed, seed_tag::kInit))),
        ws_(spec),
        buffer_rng_(derive_seed(cfg.seed, seed_tag::kBuffer)) {}

  SpecPtr spec_;
  ParamVector params_;
  mutable Workspace ws_;
  Rng buffer_rng_;
};

// Plain SGD on the incoming stream, literally one example at a time.
class OnlineLearner : public SingleModelLearner {
 public:
  OnlineLearner(const LearnerConfig& cfg, SpecPtr spec)
      : SingleModelLearner(cfg, spec) {}

  void step(const Example& ex) override {
    sgd_train_step(params_, ex, 0, cfg_.alpha, ws_);
  }
};

// ER with reservoir sampling: one mini-batch SGD step on the mean loss of
// the current example plus k-1 buffer draws.
class ErReservoirLearner : public SingleModelLearner {
 public:
  ErReservoirLearner(const LearnerConfig& cfg, SpecPtr spec)
      : SingleModelLearner(cfg, spec),
        buffer_(cfg.buffer_capacity),
        acc_(make_params(spec)) {}

  void step(const Example& ex) override {
    auto batches = sample_mer_batches(buffer_, ex, 1, cfg_.k, buffer_rng_);
    minibatch_step(batches[0]);
    buffer_.update(ex, buffer_rng_);
  }

  ReservoirBuffer<Example>& buffer() { return buffer_; }

  // Mean gradient of the batch, then one SGD step.
  void minibatch_step(const std::vector<const Example*>& batch) {
    std::fill(acc_.values.begin(), acc_.values.end(), 0.0);
    for (const Example* e : batch) {
      loss_and_grad_ws(params_, *e, 0, ws_);
      ws_.accumulate(acc_, 1.0);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& v : acc_.values) v *= inv;
    axpy(params_.data(), -cfg_.alpha, acc_.data(), params_.size());
  }

 protected:
  ReservoirBuffer<Example> buffer_;
  ParamVector acc_;
};

// ER with tasks: the batch is partitioned by task id and each represented
// task contributes its sub-batch mean loss with equal group weight.
class ErTasksLearner : public SingleModelLearner {
 public:
  ErTasksLearner(const LearnerConfig& cfg, SpecPtr spec)
      : SingleModelLearner(cfg, spec),
        buffer_(cfg.buffer_capacity),
        acc_(make_params(spec)) {}

  void step(const Example& ex) override {
    auto batches = sample_mer_batches(buffer_, ex, 1, cfg_.k, buffer_rng_);
    balanced_step(batches[0]);
    buffer_.update(ex, buffer_rng_);
  }

  ReservoirBuffer<Example>& buffer() { return buffer_; }

  void balanced_step(const std::vector<const Example*>& batch) {
    group_size_.clear();
    for (const Example* e : batch) {
      if (static_cast<int>(group_size_.size()) <= e->task_id)
        group_size_.resize(e->task_id + 1, 0);
      group_size_[e->task_id]++;
    }
    std::fill(acc_.values.begin(), acc_.values.end(), 0.0);
    for (const Example* e : batch) {
      loss_and_grad_ws(params_, *e, 0, ws_);
      ws_.accumulate(acc_, 1.0 / group_size_[e->task_id]);
    }
    axpy(params_.data(), -cfg_.alpha, acc_.data(), params_.size());
  }

 private:
  ReservoirBuffer<Example> buffer_;
  ParamVector acc_;
  std::vector<int> group_size_;
};

// MER, nested meta-update form: s batches of k single-example SGD steps,
// a within-batch Reptile update at rate beta after each batch, and an
// across-batch Reptile update at rate gamma at the end.
class MerA1Learner : public SingleModelLearner {
 public:
  MerA1Learner(const LearnerConfig& cfg, SpecPtr spec)
      : SingleModelLearner(cfg, spec),
        buffer_(cfg.buffer_capacity),
        theta_a0_(make_params(spec)),
        theta_w0_(make_params(spec)) {}

  void step(const Example& ex) override {
    auto batches =
        sample_mer_batches(buffer_, ex, cfg_.s, cfg_.k, buffer_rng_);
    apply_meta_update(batches);
    observe(ex);
  }

  void apply_meta_update(const std::vector<std::vector<const Example*>>& batches) {
    theta_a0_.values = params_.values;
    for (const auto& batch : batches) {
      theta_w0_.values = params_.values;
      for (const Example* e : batch)
        sgd_train_step(params_, *e, 0, cfg_.alpha, ws_);
      interpolate_inplace(params_, theta_w0_, cfg_.beta);
    }
    interpolate_inplace(params_, theta_a0_, cfg_.gamma);
  }

  void observe(const Example& ex) { buffer_.update(ex, buffer_rng_); }
  ReservoirBuffer<Example>& buffer() { return buffer_; }

 private:
  ReservoirBuffer<Example> buffer_;
  ParamVector theta_a0_, theta_w0_;
};

// MER, one-big-batch form: s*k sequential single-example steps and a
// single Reptile update at rate gamma.
class MerObbLearner : public SingleModelLearner {
 public:
  MerObbLearner(const LearnerConfig& cfg, SpecPtr spec)
      : SingleModelLearner(cfg, spec),
        buffer_(cfg.buffer_capacity),
        theta0_(make_params(spec)) {}

  void step(const Example& ex) override {
    auto batch = sample_big_batch(buffer_, ex, cfg_.s, cfg_.k, buffer_rng_);
    apply_big_batch(batch);
    observe(ex);
  }

  void apply_big_batch(const std::vector<const Example*>& batch) {
    theta0_.values = params_.values;
    for (const Example* e : batch)
      sgd_train_step(params_, *e, 0, cfg_.alpha, ws_);
    interpolate_inplace(params_, theta0_, cfg_.gamma);
  }

  void observe(const Example& ex) { buffer_.update(ex, buffer_rng_); }
  ReservoirBuffer<Example>& buffer() { return buffer_; }

 private:
  ReservoirBuffer<Example> buffer_;
  ParamVector theta0_;
};

// MER, current-example-learning-rate form: one batch of k slots where the
// current example's step runs at rate s*alpha.
class MerCelLearner : public SingleModelLearner {
 public:
  MerCelLearner(const LearnerConfig& cfg, SpecPtr spec)
      : SingleModelLearner(cfg, spec),
        buffer_(cfg.buffer_capacity),
        theta0_(make_params(spec)) {}

  void step(const Example& ex) override {
    auto [batch, index] =
        sample_random_position_batch(buffer_, cfg_.k, ex, buffer_rng_);
    apply_cel_batch(batch, index);
    observe(ex);
  }

  void apply_cel_batch(const std::vector<const Example*>& batch,
                       int current_index) {
    theta0_.values = params_.values;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const double rate = static_cast<int>(j) == current_index
                              ? cfg_.s * cfg_.alpha
                              : cfg_.alpha;
      sgd_train_step(params_, *batch[j], 0, rate, ws_);
    }
    interpolate_inplace(params_, theta0_, cfg_.gamma);
  }

  void observe(const Example& ex) { buffer_.update(ex, buffer_rng_); }
  ReservoirBuffer<Example>& buffer() { return buffer_; }

 private:
  ReservoirBuffer<Example> buffer_;
  ParamVector theta0_;
};

// Online learning with a quadratic penalty pulling consolidated weights
// toward their per-task anchors, weighted by the empirical Fisher diagonal.
// Consolidation triggers on an observed task_id change.
class EwcLearner : public SingleModelLearner {
 public:
  struct Anchor {
    ParamVector theta_star;
    ParamVector fisher;
  };

  EwcLearner(const LearnerConfig& cfg, SpecPtr spec)
      : SingleModelLearner(cfg, spec), pen_(make_params(spec)) {}

  void step(const Example& ex) override {
    if (last_task_ != -1 && ex.task_id != last_task_) consolidate();
    last_task_ = ex.task_id;
    task_cache_.push_back(ex);

    loss_and_grad_ws(params_, ex, 0, ws_);
    if (cfg_.ewc_lambda != 0.0 && !anchors_.empty()) {
      penalty_grad(params_, pen_);
      ws_.apply(params_, cfg_.alpha);
      axpy(params_.data(), -cfg_.alpha, pen_.data(), params_.size());
    } else {
      ws_.apply(params_, cfg_.alpha);
    }
  }

  // d/dtheta of lambda * sum_tasks sum_i F_i (theta_i - theta*_i)^2
  void penalty_grad(const ParamVector& theta, ParamVector& out) const {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    for (const Anchor& a : anchors_) {
      for (std::size_t i = 0; i < theta.size(); ++i)
        out.values[i] += 2.0 * cfg_.ewc_lambda * a.fisher.values[i] *
                         (theta.values[i] - a.theta_star.values[i]);
    }
  }

  double penalty_loss(const ParamVector& theta) const {
    double loss = 0.0;
    for (const Anchor& a : anchors_) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double d = theta.values[i] - a.theta_star.values[i];
        loss += a.fisher.values[i] * d * d;
      }
    }
    return cfg_.ewc_lambda * loss;
  }

  // Anchors the current parameters with a Fisher estimate over a seeded
  // sample of the finished task's training examples.
  void consolidate() {
    if (task_cache_.empty()) return;
    const int want = cfg_.ewc_fisher_examples;
    std::vector<Example> sample;
    if (static_cast<int>(task_cache_.size()) <= want) {
      sample = task_cache_;
    } else {
      Rng rng(derive_seed(cfg_.seed, 0x500 + consolidations_));
      std::vector<std::size_t> idx;
      detail::sample_distinct(task_cache_.size(), want, rng, idx);
      sample.reserve(want);
      for (std::size_t i : idx) sample.push_back(task_cache_[i]);
    }
    anchors_.push_back(Anchor{params_, fisher_diagonal(params_, sample)});
    ++consolidations_;
    task_cache_.clear();
  }

  const std::vector<Anchor>& anchors() const { return anchors_; }
  int last_task() const { return last_task_; }

 private:
  std::vector<Anchor> anchors_;
  std::vector<Example> task_cache_;
  ParamVector pen_;
  int last_task_ = -1;
  int consolidations_ = 0;
};

// GEM: follow the raw gradient when it does not interfere with any past
// task's memories; otherwise project it to the closest non-interfering
// direction and step along that.
class GemLearner : public SingleModelLearner {
 public:
  GemLearner(const LearnerConfig& cfg, SpecPtr spec)
      : SingleModelLearner(cfg, spec),
        ring_(cfg.buffer_capacity, cfg.task_count),
        g_(make_params(spec)),
        first_seen_(cfg.task_count, -1) {}

  void step(const Example& ex) override {
    if (ex.task_id < 0 || ex.task_id >= cfg_.task_count)
      throw std::invalid_argument("GemLearner: unknown task_id");
    if (first_seen_[ex.task_id] == -1)
      first_seen_[ex.task_id] = observed_count_++;

    std::fill(g_.values.begin(), g_.values.end(), 0.0);
    loss_and_grad_ws(params_, ex, 0, ws_);
    ws_.accumulate(g_, 1.0);

    constraint_ptrs_.clear();
    for (int t = 0; t < cfg_.task_count; ++t) {
      if (t == ex.task_id || first_seen_[t] == -1 ||
          first_seen_[t] > first_seen_[ex.task_id])
        continue;
      const auto& seg = ring_.segment(t);
      if (seg.empty()) continue;
      ParamVector& tg = task_grad(t);
      std::fill(tg.values.begin(), tg.values.end(), 0.0);
      const double w = 1.0 / static_cast<double>(seg.size());
      for (const Example& e : seg) {
        loss_and_grad_ws(params_, e, 0, ws_);
        ws_.accumulate(tg, w);
      }
      constraint_ptrs_.push_back(tg.data());
    }

    auto stats = gem_project(std::span<double>(g_.values), constraint_ptrs_,
                             cfg_.gem_memory_strength);
    if (stats.projected && !stats.converged) {
      // non-convergence: retake the raw gradient, count the event
      ++fallback_count_;
      std::fill(g_.values.begin(), g_.values.end(), 0.0);
      loss_and_grad_ws(params_, ex, 0, ws_);
      ws_.accumulate(g_, 1.0);
    }
    if (stats.projected) ++projection_count_;

    axpy(params_.data(), -cfg_.alpha, g_.data(), params_.size());
    ring_.update(ex);
  }

  TaskRingBuffer& ring() { return ring_; }
  int fallback_count() const { return fallback_count_; }
  int projection_count() const { return projection_count_; }

 private:
  ParamVector& task_grad(int t) {
    if (task_grads_.size() <= static_cast<std::size_t>(t))
      task_grads_.resize(t + 1);
    if (task_grads_[t].values.empty()) task_grads_[t] = make_params(spec_);
    return task_grads_[t];
  }

  TaskRingBuffer ring_;
  ParamVector g_;
  std::vector<ParamVector> task_grads_;
  std::vector<const double*> constraint_ptrs_;
  std::vector<int> first_seen_;
  int observed_count_ = 0;
  int fallback_count_ = 0;
  int projection_count_ = 0;
};

// One model per task with proportionally fewer hidden units; examples only
// ever touch their own task's model.
class IndependentLearner : public Learner {
 public:
  IndependentLearner(const LearnerConfig& cfg, const NetworkSpec& base)
      : Learner(cfg) {
    std::vector<int> hidden = base.hidden_dims();
    for (int& h : hidden) h = std::max(1, h / cfg.task_count);
    spec_ = std::make_shared<NetworkSpec>(base.input_dim(), hidden,
                                          base.output_dim());
    const std::uint64_t init0 = derive_seed(cfg.seed, seed_tag::kInit);
    models_.reserve(cfg.task_count);
    for (int t = 0; t < cfg.task_count; ++t)
      models_.push_back(
          init_params(spec_, t == 0 ? init0 : derive_seed(init0, t)));
    ws_ = std::make_unique<Workspace>(spec_);
  }

  void step(const Example& ex) override {
    if (ex.task_id < 0 || ex.task_id >= cfg_.task_count)
      throw std::invalid_argument("IndependentLearner: unknown task_id");
    if (cfg_.independent_clone && ex.task_id != last_task_ &&
        last_task_ != -1 && !stepped_[ex.task_id])
      models_[ex.task_id].values = models_[last_task_].values;
    last_task_ = ex.task_id;
    stepped_[ex.task_id] = true;
    sgd_train_step(models_[ex.task_id], ex, 0, cfg_.alpha, *ws_);
  }

  const ParamVector& params() const override { return models_[0]; }
  const ParamVector& task_params(int t) const { return models_[t]; }

  void eval_logits(const Example& ex, std::span<double> out) const override {
    auto logits = ws_->forward<float>(models_[ex.task_id], ex.x, 0);
    std::copy(logits.begin(), logits.end(), out.begin());
  }

 private:
  SpecPtr spec_;
  std::vector<ParamVector> models_;
  mutable std::unique_ptr<Workspace> ws_;
  int last_task_ = -1;
  std::vector<bool> stepped_ = std::vector<bool>(cfg_.task_count, false);
};

// Shared trunk with one dedicated input layer per task.
class TaskInputLearner : public Learner {
 public:
  TaskInputLearner(const LearnerConfig& cfg, const NetworkSpec& base)
      : Learner(cfg) {
    spec_ = std::make_shared<NetworkSpec>(base.input_dim(), base.hidden_dims(),
                                          base.output_dim(), cfg.task_count,
                                          HeadSide::kInput);
    params_ = init_params(spec_, derive_seed(cfg.seed, seed_tag::kInit));
    ws_ = std::make_unique<Workspace>(spec_);
  }

  void step(const Example& ex) override {
    sgd_train_step(params_, ex, ex.task_id, cfg_.alpha, *ws_);
  }

  const ParamVector& params() const override { return params_; }

  void eval_logits(const Example& ex, std::span<double> out) const override {
    auto logits = ws_->forward<float>(params_, ex.x, ex.task_id);
    std::copy(logits.begin(), logits.end(), out.begin());
  }

 private:
  SpecPtr spec_;
  ParamVector params_;
  mutable std::unique_ptr<Workspace> ws_;
};

inline std::unique_ptr<Learner> make_learner(const LearnerConfig& cfg,
                                             const NetworkSpec& base) {
  auto spec = std::make_shared<NetworkSpec>(base);
  switch (cfg.algorithm) {
    case Algorithm::kOnline:
      return std::make_unique<OnlineLearner>(cfg, spec);
    case Algorithm::kIndependent:
      return std::make_unique<IndependentLearner>(cfg, base);
    case Algorithm::kTaskInput:
      return std::make_unique<TaskInputLearner>(cfg, base);
    case Algorithm::kEwc:
      return std::make_unique<EwcLearner>(cfg, spec);
    case Algorithm::kGem:
      return std::make_unique<GemLearner>(cfg, spec);
    case Algorithm::kErReservoir:
      return std::make_unique<ErReservoirLearner>(cfg, spec);
    case Algorithm::kErTasks:
      return std::make_unique<ErTasksLearner>(cfg, spec);
    case Algorithm::kMerA1:
      return std::make_unique<MerA1Learner>(cfg, spec);
    case Algorithm::kMerObb:
      return std::make_unique<MerObbLearner>(cfg, spec);
    case Algorithm::kMerCel:
      return std::make_unique<MerCelLearner>(cfg, spec);
  }
  throw std::invalid_argument("make_learner: unknown algorithm");
}

// Reptile on a stationary dataset: repeat { draw s batches of k, run
// sequential mini-batch SGD, interpolate back at rate beta } until the
// mini-batch step budget is exhausted.
inline ParamVector reptile_offline(const std::vector<Example>& dataset,
                                   const LearnerConfig& cfg,
                                   int total_batch_steps) {
  cfg.validate();
  if (dataset.empty())
    throw std::invalid_argument("reptile_offline: empty dataset");
  SpecPtr spec;
  {
    // architecture inferred from the data: dim -> 100 -> classes
    int classes = 0;
    for (const auto& ex : dataset) classes = std::max(classes, ex.label + 1);
    spec = std::make_shared<NetworkSpec>(
        static_cast<int>(dataset[0].x.size()), std::vector<int>{100}, classes);
  }
  ParamVector params = init_params(spec, derive_seed(cfg.seed, seed_tag::kInit));
  Rng rng(derive_seed(cfg.seed, seed_tag::kBuffer));
  Workspace ws(spec);
  ParamVector theta0 = make_params(spec);
  ParamVector acc = make_params(spec);

  int done = 0;
  std::vector<std::size_t> idx;
  while (done < total_batch_steps) {
    theta0.values = params.values;
    for (int i = 0; i < cfg.s && done < total_batch_steps; ++i, ++done) {
      std::fill(acc.values.begin(), acc.values.end(), 0.0);
      if (dataset.size() >= static_cast<std::size_t>(cfg.k)) {
        detail::sample_distinct(dataset.size(), cfg.k, rng, idx);
      } else {
        idx.clear();
        for (int j = 0; j < cfg.k; ++j) idx.push_back(rng.below(dataset.size()));
      }
      for (std::size_t j : idx) {
        loss_and_grad_ws(params, dataset[j], 0, ws);
        ws.accumulate(acc, 1.0);
      }
      const double inv = 1.0 / static_cast<double>(cfg.k);
      for (double& v : acc.values) v *= inv;
      axpy(params.data(), -cfg.alpha, acc.data(), params.size());
    }
    interpolate_inplace(params, theta0, cfg.beta);
  }
  return params;
}

}  // namespace merlab
