#pragma once

// Evaluation-matrix bookkeeping, the scalar metrics derived from it, and
// the gradient-alignment probe.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "merlab/learners.hpp"
#include "merlab/nn.hpp"
#include "merlab/streams.hpp"

namespace merlab {

// R[i][j] = accuracy on task j's test set after finishing training on task
// i, plus the vector b of random-init accuracies used by forward transfer.
class EvalMatrix {
 public:
  explicit EvalMatrix(int task_count)
      : t_(task_count),
        r_(static_cast<std::size_t>(task_count) * task_count, 0.0),
        filled_(static_cast<std::size_t>(task_count) * task_count, 0),
        b_(task_count, 0.0),
        b_filled_(task_count, 0) {
    if (task_count < 1)
      throw std::invalid_argument("EvalMatrix: task_count must be >= 1");
  }

  int task_count() const { return t_; }

  void set(int i, int j, double acc) {
    if (acc < 0.0 || acc > 1.0)
      throw std::invalid_argument("EvalMatrix: accuracy outside [0,1]");
    r_[idx(i, j)] = acc;
    filled_[idx(i, j)] = 1;
  }

  double at(int i, int j) const {
    if (!filled_[idx(i, j)])
      throw std::logic_error("EvalMatrix: entry not populated");
    return r_[idx(i, j)];
  }

  bool populated(int i, int j) const { return filled_[idx(i, j)] != 0; }

  void set_baseline(int j, double acc) {
    b_[j] = acc;
    b_filled_[j] = 1;
  }
  double baseline(int j) const {
    if (!b_filled_[j])
      throw std::logic_error("EvalMatrix: baseline not populated");
    return b_[j];
  }
  bool baseline_populated(int j) const { return b_filled_[j] != 0; }

 private:
  std::size_t idx(int i, int j) const {
    if (i < 0 || i >= t_ || j < 0 || j >= t_)
      throw std::invalid_argument("EvalMatrix: index out of range");
    return static_cast<std::size_t>(i) * t_ + j;
  }

  int t_;
  std::vector<double> r_;
  std::vector<std::uint8_t> filled_;
  std::vector<double> b_;
  std::vector<std::uint8_t> b_filled_;
};

// Mean accuracy over all tasks after the final task.
inline double retained_accuracy(const EvalMatrix& m) {
  const int t = m.task_count();
  double sum = 0.0;
  for (int j = 0; j < t; ++j) sum += m.at(t - 1, j);
  return sum / t;
}

// Mean accuracy of each task measured right after it was learned.
inline double learning_accuracy(const EvalMatrix& m) {
  const int t = m.task_count();
  double sum = 0.0;
  for (int i = 0; i < t; ++i) sum += m.at(i, i);
  return sum / t;
}

// Mean change from when a task was learned to the end of training.
inline double backward_transfer(const EvalMatrix& m) {
  const int t = m.task_count();
  double sum = 0.0;
  for (int j = 0; j < t; ++j) sum += m.at(t - 1, j) - m.at(j, j);
  return sum / t;
}

// Mean gain on unseen tasks relative to random initialization.
inline double forward_transfer(const EvalMatrix& m) {
  const int t = m.task_count();
  if (t < 2)
    throw std::invalid_argument("forward_transfer: needs at least 2 tasks");
  double sum = 0.0;
  for (int j = 1; j < t; ++j) sum += m.at(j - 1, j) - m.baseline(j);
  return sum / (t - 1);
}

// Ties broken toward the lowest class index.
inline int argmax_class(std::span<const double> logits) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

// Accuracy on one task's test set. max_per_task = 0 evaluates everything;
// a positive value caps the evaluated prefix (used for very long streams).
inline double evaluate_task(const Learner& learner, const TaskStream& stream,
                            int task, int max_per_task = 0) {
  const int total = stream.test_count(task);
  const int n = max_per_task > 0 ? std::min(max_per_task, total) : total;
  if (n == 0) throw std::invalid_argument("evaluate_task: empty test set");
  Example scratch;
  std::vector<double> logits(stream.class_count());
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    stream.test_example(task, i, scratch);
    learner.eval_logits(scratch, logits);
    correct += argmax_class(logits) == scratch.label;
  }
  return static_cast<double>(correct) / n;
}

// Plain single-headed evaluation of a parameter vector on every task.
inline std::vector<double> evaluate(const ParamVector& params,
                                    const TaskStream& stream,
                                    int max_per_task = 0) {
  Workspace ws(params.spec);
  Example scratch;
  std::vector<double> out;
  for (int t = 0; t < stream.task_count(); ++t) {
    const int total = stream.test_count(t);
    const int n = max_per_task > 0 ? std::min(max_per_task, total) : total;
    if (n == 0) throw std::invalid_argument("evaluate: empty test set");
    int correct = 0;
    for (int i = 0; i < n; ++i) {
      stream.test_example(t, i, scratch);
      auto logits = ws.forward<float>(params, scratch.x, 0);
      correct += argmax_class(logits) == scratch.label;
    }
    out.push_back(static_cast<double>(correct) / n);
  }
  return out;
}

// ---- gradient-alignment probe ---------------------------------------------

struct AlignmentTrace {
  std::vector<std::pair<int, double>> samples;  // (step index, mean of 5 dots)
  double mean = 0.0;
  double stddev = 0.0;
};

// Keeps a full history of incoming examples, separate from any replay
// buffer. At each incoming example with at least 5 predecessors it records
// the mean dot product between the incoming gradient and 5 randomly drawn
// past-example gradients, all at the current (pre-update) parameters.
class AlignmentProbe {
 public:
  AlignmentProbe(SpecPtr spec, std::uint64_t probe_seed)
      : ws_(spec),
        gcur_(make_params(spec)),
        gpast_(make_params(spec)),
        rng_(probe_seed) {}

  void before_step(const ParamVector& params, const Example& incoming) {
    if (history_.size() >= 5) {
      loss_and_grad_ws(params, incoming, 0, ws_);
      ws_.densify(gcur_);
      detail::sample_distinct(history_.size(), 5, rng_, draw_);
      double acc = 0.0;
      for (std::size_t i : draw_) {
        loss_and_grad_ws(params, history_[i], 0, ws_);
        ws_.densify(gpast_);
        acc += dot(gcur_.data(), gpast_.data(), gcur_.size());
      }
      samples_.emplace_back(step_, acc / 5.0);
    }
    ++step_;
  }

  void after_step(const Example& incoming) { history_.push_back(incoming); }

  AlignmentTrace trace() const {
    AlignmentTrace t;
    t.samples = samples_;
    if (samples_.empty()) return t;
    double sum = 0.0;
    for (const auto& [step, v] : samples_) sum += v;
    t.mean = sum / samples_.size();
    if (samples_.size() > 1) {
      double ss = 0.0;
      for (const auto& [step, v] : samples_) ss += (v - t.mean) * (v - t.mean);
      t.stddev = std::sqrt(ss / (samples_.size() - 1));
    }
    return t;
  }

  std::size_t history_size() const { return history_.size(); }

 private:
  std::vector<Example> history_;
  mutable Workspace ws_;
  ParamVector gcur_, gpast_;
  Rng rng_;
  std::vector<std::size_t> draw_;
  std::vector<std::pair<int, double>> samples_;
  int step_ = 0;
};

// Trains the learner over the whole stream with the probe attached.
inline AlignmentTrace run_alignment_probe(Learner& learner,
                                          const TaskStream& stream,
                                          std::uint64_t probe_seed) {
  AlignmentProbe probe(std::make_shared<NetworkSpec>(
                           *learner.params().spec),
                       probe_seed);
  for (int t = 0; t < stream.task_count(); ++t) {
    for (const Example& ex : stream.train(t)) {
      probe.before_step(learner.params(), ex);
      learner.step(ex);
      probe.after_step(ex);
    }
  }
  return probe.trace();
}

}  // namespace merlab
