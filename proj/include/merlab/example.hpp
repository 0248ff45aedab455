#pragma once

#include <vector>

namespace merlab {

// One labeled observation in a task stream. Pixel values live in [0, 1].
// Learners that must stay task-agnostic simply ignore task_id.
struct Example {
  std::vector<float> x;
  int label = 0;
  int task_id = 0;
};

}  // namespace merlab
