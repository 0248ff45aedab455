#pragma once

// DQN on Catcher-lite with either plain experience replay or nested
// Reptile meta-updates (MER) on the replay batches. The Q-network is a
// dense net over the 4-float state features; loss is Huber with delta 1.

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "merlab/catcher.hpp"
#include "merlab/nn.hpp"
#include "merlab/replay.hpp"
#include "merlab/rng.hpp"

namespace merlab {

struct Transition {
  std::array<float, 4> s{};
  int a = 0;
  double r = 0.0;
  std::array<float, 4> s_next{};
  bool done = false;
};

inline void snapshot_write(std::string& out, const Transition& t) {
  for (float v : t.s) detail::put_pod<float>(out, v);
  detail::put_pod<std::int32_t>(out, t.a);
  detail::put_pod<double>(out, t.r);
  for (float v : t.s_next) detail::put_pod<float>(out, v);
  detail::put_pod<std::uint8_t>(out, t.done ? 1 : 0);
}

inline void snapshot_read(const char*& p, const char* end, Transition& t) {
  for (float& v : t.s) v = detail::get_pod<float>(p, end);
  t.a = detail::get_pod<std::int32_t>(p, end);
  t.r = detail::get_pod<double>(p, end);
  for (float& v : t.s_next) v = detail::get_pod<float>(p, end);
  t.done = detail::get_pod<std::uint8_t>(p, end) != 0;
}

struct DqnConfig {
  double alpha = 0.012;      // inner learning rate
  double beta = 1.0;         // within-batch meta rate (MER)
  double gamma_meta = 0.3;   // across-batch meta rate (MER)
  int k = 17;                // batch size, current transition included
  int steps = 1;             // batch count s
  std::size_t buffer_capacity = 50000;
  double discount = 0.9;
  double eps_start = 1.0;
  double eps_end = 0.1;
  int eps_decay_frames = 12000;
  int target_sync_episodes = 2;
  int episode_max_steps = 500;

  int task_count = 6;
  int frames_per_task = 10000;
  int eval_every_frames = 2000;
  int eval_episodes = 10;
  int eval_max_steps = 500;

  std::vector<int> hidden = {32, 32};
  std::uint64_t seed = 0;

  void validate() const {
    if (discount < 0.0 || discount >= 1.0)
      throw std::invalid_argument("DqnConfig: discount must be in [0,1)");
    if (eps_start < 0.0 || eps_start > 1.0 || eps_end < 0.0 || eps_end > 1.0)
      throw std::invalid_argument("DqnConfig: epsilon must be in [0,1]");
    if (k < 1 || steps < 1)
      throw std::invalid_argument("DqnConfig: k and steps must be >= 1");
  }
};

enum class DqnVariant { kEr, kMer };

// y = r for terminal transitions, else r + discount * max_a Qhat(s', a).
inline double dqn_target(const Transition& t, const ParamVector& target_params,
                         double discount, Workspace& ws) {
  if (t.done) return t.r;
  auto q = ws.forward<float>(target_params, t.s_next, 0);
  double best = q[0];
  for (std::size_t i = 1; i < q.size(); ++i) best = std::max(best, q[i]);
  return t.r + discount * best;
}

inline double huber(double err) {
  const double a = std::abs(err);
  return a <= 1.0 ? 0.5 * err * err : a - 0.5;
}

class DqnAgent {
 public:
  DqnAgent(const DqnConfig& cfg, DqnVariant variant)
      : cfg_(cfg),
        variant_(variant),
        spec_(std::make_shared<NetworkSpec>(4, cfg.hidden, 3)),
        params_(init_params(spec_, derive_seed(cfg.seed, seed_tag::kInit))),
        target_(params_),
        ws_(spec_),
        acc_(make_params(spec_)),
        theta_a0_(make_params(spec_)),
        theta_w0_(make_params(spec_)),
        buffer_(cfg.buffer_capacity),
        buffer_rng_(derive_seed(cfg.seed, seed_tag::kBuffer)),
        policy_rng_(derive_seed(cfg.seed, seed_tag::kPolicy)) {
    cfg_.validate();
  }

  int act(const std::array<float, 4>& s, double epsilon) {
    if (policy_rng_.uniform01() < epsilon)
      return static_cast<int>(policy_rng_.below(3));
    return greedy_action(s);
  }

  int greedy_action(const std::array<float, 4>& s) const {
    auto q = ws_.forward<float>(params_, std::span<const float>(s), 0);
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (q[i] > q[best]) best = i;
    return best;
  }

  void observe(const Transition& t) { buffer_.update(t, buffer_rng_); }

  // One frame's worth of training on batches containing the current
  // transition. Returns the last mini-batch (or inner-step) loss.
  double update(const Transition& current) {
    auto batches =
        sample_mer_batches(buffer_, current, cfg_.steps, cfg_.k, buffer_rng_);
    double loss;
    if (variant_ == DqnVariant::kMer) {
      loss = apply_mer_batches(batches);
    } else {
      loss = apply_er_batch(batches[0]);
    }
    if (!std::isfinite(loss))
      throw std::runtime_error("dqn: non-finite loss; aborting run");
    return loss;
  }

  // Nested within/across Reptile loops over single-transition SGD steps.
  double apply_mer_batches(
      const std::vector<std::vector<const Transition*>>& batches) {
    double loss = 0.0;
    theta_a0_.values = params_.values;
    for (const auto& batch : batches) {
      theta_w0_.values = params_.values;
      for (const Transition* t : batch) loss = td_sgd_step(*t, cfg_.alpha);
      interpolate_inplace(params_, theta_w0_, cfg_.beta);
    }
    interpolate_inplace(params_, theta_a0_, cfg_.gamma_meta);
    return loss;
  }

  // One mini-batch SGD step on the mean Huber loss of the batch.
  double apply_er_batch(const std::vector<const Transition*>& batch) {
    targets_.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      targets_[i] = dqn_target(*batch[i], target_, cfg_.discount, ws_);
    std::fill(acc_.values.begin(), acc_.values.end(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      loss += td_grad(*batch[i], targets_[i]);
      ws_.accumulate(acc_, 1.0);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& v : acc_.values) v *= inv;
    axpy(params_.data(), -cfg_.alpha, acc_.data(), params_.size());
    return loss * inv;
  }

  // Single-transition fused Huber SGD step at rate lr.
  double td_sgd_step(const Transition& t, double lr) {
    const double y = dqn_target(t, target_, cfg_.discount, ws_);
    const double loss = td_grad(t, y);
    ws_.apply(params_, lr);
    return loss;
  }

  void sync_target() { target_.values = params_.values; }

  const ParamVector& params() const { return params_; }
  ParamVector& mutable_params() { return params_; }
  const ParamVector& target() const { return target_; }
  ReservoirBuffer<Transition>& buffer() { return buffer_; }
  const SpecPtr& spec() const { return spec_; }
  Rng& policy_rng() { return policy_rng_; }

 private:
  // Fills the workspace gradient with dHuber(Q(s,a) - y)/dparams.
  double td_grad(const Transition& t, double y) {
    auto q = ws_.forward<float>(params_, std::span<const float>(t.s), 0);
    const double err = q[t.a] - y;
    auto d = ws_.logit_delta();
    std::fill(d.begin(), d.end(), 0.0);
    d[t.a] = err <= -1.0 ? -1.0 : (err >= 1.0 ? 1.0 : err);
    ws_.backward<float>(params_, std::span<const float>(t.s), 0);
    return huber(err);
  }

  DqnConfig cfg_;
  DqnVariant variant_;
  SpecPtr spec_;
  ParamVector params_;
  ParamVector target_;
  mutable Workspace ws_;
  ParamVector acc_, theta_a0_, theta_w0_;
  std::vector<double> targets_;
  ReservoirBuffer<Transition> buffer_;
  Rng buffer_rng_;
  Rng policy_rng_;
};

struct ScoreRecord {
  int frame = 0;
  int task = 0;
  double mean_score = 0.0;
};

struct DqnRunResult {
  ParamVector params;
  std::vector<ScoreRecord> scores;
  int frames = 0;
};

// Mean catches over eval_episodes greedy episodes on one task setting.
inline double greedy_score(const DqnAgent& agent, const CatcherConfig& env_cfg,
                           const DqnConfig& cfg, int task,
                           std::uint64_t eval_seed) {
  double total = 0.0;
  for (int e = 0; e < cfg.eval_episodes; ++e) {
    CatcherEnv env(env_cfg, task_velocity(env_cfg, task),
                   derive_seed(eval_seed, e));
    double score = 0.0;
    for (int step = 0; step < cfg.eval_max_steps; ++step) {
      const auto r = env.step(agent.greedy_action(env.features()));
      if (r.reward > 0.0) score += 1.0;
      if (r.done) break;
    }
    total += score;
  }
  return total / cfg.eval_episodes;
}

// Trains one agent over the scheduled non-stationary environment.
// Every transition is stored by reservoir update before the frame's
// training; the target network resets to the online network every
// target_sync_episodes episodes; the pellet velocity steps up on the
// frame schedule. Evaluation covers every task seen so far.
inline DqnRunResult train_dqn(const CatcherConfig& env_cfg,
                              const DqnConfig& cfg, DqnVariant variant) {
  cfg.validate();
  DqnAgent agent(cfg, variant);
  CatcherEnv env(env_cfg, task_velocity(env_cfg, 0),
                 derive_seed(cfg.seed, seed_tag::kEnv));
  DqnRunResult result;

  const int total_frames = cfg.task_count * cfg.frames_per_task;
  int episodes = 0;
  int episode_steps = 0;
  int current_task = 0;

  for (int frame = 0; frame < total_frames; ++frame) {
    const int task = frame / cfg.frames_per_task;
    if (task != current_task) {
      current_task = task;
      env.set_velocity(task_velocity(env_cfg, task));
    }

    const double frac =
        std::min(1.0, static_cast<double>(frame) / cfg.eps_decay_frames);
    const double eps = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);

    Transition t;
    t.s = env.features();
    t.a = agent.act(t.s, eps);
    const auto sr = env.step(t.a);
    t.r = sr.reward;
    t.s_next = env.features();
    t.done = sr.done;

    agent.observe(t);
    agent.update(t);

    ++episode_steps;
    if (sr.done || episode_steps >= cfg.episode_max_steps) {
      env.reset();
      episode_steps = 0;
      ++episodes;
      if (episodes % cfg.target_sync_episodes == 0) agent.sync_target();
    }

    if ((frame + 1) % cfg.eval_every_frames == 0 || frame + 1 == total_frames) {
      for (int te = 0; te <= current_task; ++te) {
        const std::uint64_t es =
            derive_seed(cfg.seed, seed_tag::kEval + 64ULL * (frame + 1) + te);
        result.scores.push_back(
            {frame + 1, te, greedy_score(agent, env_cfg, cfg, te, es)});
      }
    }
  }
  result.params = agent.params();
  result.frames = total_frames;
  return result;
}

}  // namespace merlab
