#pragma once

// Catcher-lite: a deterministic unit-screen catching game. The paddle
// slides along the bottom; one pellet falls at a task-dependent velocity.
// Catch it for +1, miss it for -1 and a lost life.

#include <array>
#include <cstdint>
#include <stdexcept>

#include "merlab/rng.hpp"

namespace merlab {

struct CatcherConfig {
  double paddle_speed = 0.1;
  double catch_radius = 0.1;
  double base_velocity = 0.085;     // task 0 descent per step, ~12-step drops
  double velocity_delta = 0.3;      // task t falls at base * (1 + t*delta)
  int lives = 3;
};

struct CatcherState {
  double paddle_x = 0.5;
  double pellet_x = 0.5;
  double pellet_y = 0.0;
  double pellet_velocity = 0.0;
  int lives = 0;
};

enum CatcherAction { kLeft = 0, kStay = 1, kRight = 2 };

class CatcherEnv {
 public:
  CatcherEnv(const CatcherConfig& cfg, double velocity, std::uint64_t seed)
      : cfg_(cfg), rng_(seed) {
    state_.pellet_velocity = velocity;
    reset();
  }

  void reset() {
    state_.paddle_x = 0.5;
    state_.lives = cfg_.lives;
    respawn();
  }

  void set_velocity(double v) { state_.pellet_velocity = v; }
  const CatcherState& state() const { return state_; }

  std::array<float, 4> features() const {
    return {static_cast<float>(state_.paddle_x),
            static_cast<float>(state_.pellet_x),
            static_cast<float>(state_.pellet_y),
            static_cast<float>(state_.pellet_velocity)};
  }

  struct StepResult {
    double reward = 0.0;
    bool done = false;
  };

  StepResult step(int action) {
    if (action < 0 || action > 2)
      throw std::invalid_argument("CatcherEnv: invalid action");
    state_.paddle_x += (action - 1) * cfg_.paddle_speed;
    if (state_.paddle_x < 0.0) state_.paddle_x = 0.0;
    if (state_.paddle_x > 1.0) state_.paddle_x = 1.0;

    state_.pellet_y += state_.pellet_velocity;
    StepResult r;
    if (state_.pellet_y >= 1.0) {
      const bool caught =
          std::abs(state_.paddle_x - state_.pellet_x) <= cfg_.catch_radius;
      if (caught) {
        r.reward = 1.0;
      } else {
        r.reward = -1.0;
        state_.lives -= 1;
      }
      respawn();
      r.done = state_.lives <= 0;
    }
    return r;
  }

 private:
  void respawn() {
    state_.pellet_x = rng_.uniform01();
    state_.pellet_y = 0.0;
  }

  CatcherConfig cfg_;
  CatcherState state_;
  Rng rng_;
};

inline double task_velocity(const CatcherConfig& cfg, int task) {
  return cfg.base_velocity * (1.0 + task * cfg.velocity_delta);
}

}  // namespace merlab
