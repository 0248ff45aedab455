#pragma once

// Locally-i.i.d. non-stationary example streams: the MNIST-derived
// rotation/permutation benchmarks plus a fast synthetic stream. Training
// sets are materialized and shuffled; MNIST test sets are transformed
// lazily from the shared base split so 100-task streams stay cheap.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "merlab/example.hpp"
#include "merlab/idx.hpp"
#include "merlab/rng.hpp"

namespace merlab {

enum class StreamKind { kRotations, kPermutations, kManyPermutations, kSynthetic };

struct StreamSpec {
  StreamKind kind = StreamKind::kSynthetic;
  int task_count = 0;      // 0 = benchmark default
  int train_per_task = 0;  // 0 = benchmark default
  std::uint64_t seed = 0;

  // synthetic-stream knobs
  int synth_dim = 10;
  int synth_test_per_task = 200;
  double synth_sep_sigmas = 3.0;   // class-mean separation in units of sigma
  double synth_noise_sigma = 0.05;

  StreamSpec with_defaults() const {
    StreamSpec s = *this;
    switch (s.kind) {
      case StreamKind::kRotations:
      case StreamKind::kPermutations:
        if (s.task_count == 0) s.task_count = 20;
        if (s.train_per_task == 0) s.train_per_task = 1000;
        break;
      case StreamKind::kManyPermutations:
        if (s.task_count == 0) s.task_count = 100;
        if (s.train_per_task == 0) s.train_per_task = 200;
        break;
      case StreamKind::kSynthetic:
        if (s.task_count == 0) s.task_count = 5;
        if (s.train_per_task == 0) s.train_per_task = 200;
        break;
    }
    return s;
  }

  void validate() const {
    if (task_count < 1)
      throw std::invalid_argument("StreamSpec: task_count must be >= 1");
    if (kind == StreamKind::kRotations && task_count < 2)
      throw std::invalid_argument("StreamSpec: rotations need task_count >= 2");
    if (train_per_task < 1)
      throw std::invalid_argument("StreamSpec: train_per_task must be >= 1");
  }
};

struct MnistData {
  IdxImages train_images;
  IdxLabels train_labels;
  IdxImages test_images;
  IdxLabels test_labels;
};

inline std::shared_ptr<const MnistData> load_mnist(const std::string& dir) {
  auto data = std::make_shared<MnistData>();
  data->train_images = load_idx_images(dir + "/train-images-idx3-ubyte");
  data->train_labels = load_idx_labels(dir + "/train-labels-idx1-ubyte");
  data->test_images = load_idx_images(dir + "/t10k-images-idx3-ubyte");
  data->test_labels = load_idx_labels(dir + "/t10k-labels-idx1-ubyte");
  if (data->train_images.count != data->train_labels.count)
    throw std::runtime_error("mnist: train image count " +
                             std::to_string(data->train_images.count) +
                             " does not match label count " +
                             std::to_string(data->train_labels.count));
  if (data->test_images.count != data->test_labels.count)
    throw std::runtime_error("mnist: test image count " +
                             std::to_string(data->test_images.count) +
                             " does not match label count " +
                             std::to_string(data->test_labels.count));
  return data;
}

// Rotation about the image center with bilinear interpolation;
// out-of-bounds samples are zero. Output scaled into [0, 1].
inline void rotate_bilinear(const std::uint8_t* src, int rows, int cols,
                            double angle_deg, float* out) {
  const double rad = angle_deg * (3.14159265358979323846 / 180.0);
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (rows - 1) / 2.0, cx = (cols - 1) / 2.0;
  for (int r = 0; r < rows; ++r) {
    for (int col = 0; col < cols; ++col) {
      const double y = r - cy, x = col - cx;
      const double sx = c * x + s * y + cx;
      const double sy = -s * x + c * y + cy;
      const int c0 = static_cast<int>(std::floor(sx));
      const int r0 = static_cast<int>(std::floor(sy));
      const double fx = sx - c0, fy = sy - r0;
      auto at = [&](int rr, int cc) -> double {
        if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) return 0.0;
        return static_cast<double>(src[rr * cols + cc]);
      };
      const double v = (1 - fy) * ((1 - fx) * at(r0, c0) + fx * at(r0, c0 + 1)) +
                       fy * ((1 - fx) * at(r0 + 1, c0) + fx * at(r0 + 1, c0 + 1));
      out[r * cols + col] = static_cast<float>(v / 255.0);
    }
  }
}

// out[j] = x[perm[j]]
inline void apply_permutation(const std::vector<int>& perm, const float* x,
                              float* out) {
  for (std::size_t j = 0; j < perm.size(); ++j) out[j] = x[perm[j]];
}

inline std::vector<int> invert_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t j = 0; j < perm.size(); ++j) inv[perm[j]] = static_cast<int>(j);
  return inv;
}

class TaskStream {
 public:
  int task_count() const { return static_cast<int>(train_.size()); }
  int input_dim() const { return input_dim_; }
  int class_count() const { return class_count_; }
  const StreamSpec& spec() const { return spec_; }

  const std::vector<Example>& train(int t) const { return train_[t]; }
  const std::vector<int>& train_source_indices(int t) const {
    return train_src_[t];
  }

  int test_count(int t) const {
    if (base_) return base_->test_images.count;
    return static_cast<int>(test_[t].size());
  }

  // Fills `out` with test example i of task t. Reuses out.x storage.
  void test_example(int t, int i, Example& out) const {
    if (!base_) {
      out = test_[t][i];
      return;
    }
    out.x.resize(input_dim_);
    const std::uint8_t* src = base_->test_images.image(i);
    if (!angles_.empty()) {
      rotate_bilinear(src, base_->test_images.rows, base_->test_images.cols,
                      angles_[t], out.x.data());
    } else {
      const auto& perm = perms_[t];
      for (int j = 0; j < input_dim_; ++j)
        out.x[j] = static_cast<float>(src[perm[j]]) * (1.0f / 255.0f);
    }
    out.label = base_->test_labels.labels[i];
    out.task_id = t;
  }

  double task_angle(int t) const { return angles_.at(t); }
  const std::vector<int>& task_permutation(int t) const { return perms_.at(t); }

  friend TaskStream make_rotations(std::shared_ptr<const MnistData> base,
                                   const StreamSpec& spec);
  friend TaskStream make_permutations(std::shared_ptr<const MnistData> base,
                                      const StreamSpec& spec);
  friend TaskStream make_permutations_with(
      std::shared_ptr<const MnistData> base, const StreamSpec& spec,
      std::vector<std::vector<int>> perms);
  friend TaskStream make_synthetic(const StreamSpec& spec);

 private:
  StreamSpec spec_;
  int input_dim_ = 0;
  int class_count_ = 0;
  std::vector<std::vector<Example>> train_;
  std::vector<std::vector<int>> train_src_;
  std::shared_ptr<const MnistData> base_;          // null for synthetic
  std::vector<double> angles_;                     // rotations
  std::vector<std::vector<int>> perms_;            // permutations
  std::vector<std::vector<Example>> test_;         // synthetic only

  // Samples `n` distinct indices from [0, pool) in uniform random order.
  static std::vector<int> sample_without_replacement(int pool, int n,
                                                     Rng& rng) {
    std::vector<int> idx(pool);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<int> out(n);
    for (int i = 0; i < n; ++i) {
      const int j = i + static_cast<int>(rng.below(pool - i));
      std::swap(idx[i], idx[j]);
      out[i] = idx[i];
    }
    return out;
  }
};

inline TaskStream make_rotations(std::shared_ptr<const MnistData> base,
                                 const StreamSpec& spec_in) {
  StreamSpec spec = spec_in.with_defaults();
  spec.validate();
  if (spec.kind != StreamKind::kRotations)
    throw std::invalid_argument("make_rotations: spec.kind mismatch");

  TaskStream s;
  s.spec_ = spec;
  s.base_ = std::move(base);
  const int rows = s.base_->train_images.rows;
  const int cols = s.base_->train_images.cols;
  s.input_dim_ = rows * cols;
  s.class_count_ = 10;

  const int T = spec.task_count;
  for (int t = 0; t < T; ++t) {
    const double angle = 180.0 * t / (T - 1);
    s.angles_.push_back(angle);
    Rng rng(derive_seed(spec.seed, 0x100 + t));
    auto src = TaskStream::sample_without_replacement(
        s.base_->train_images.count, spec.train_per_task, rng);
    std::vector<Example> task(spec.train_per_task);
    for (int i = 0; i < spec.train_per_task; ++i) {
      task[i].x.resize(s.input_dim_);
      rotate_bilinear(s.base_->train_images.image(src[i]), rows, cols, angle,
                      task[i].x.data());
      task[i].label = s.base_->train_labels.labels[src[i]];
      task[i].task_id = t;
    }
    s.train_.push_back(std::move(task));
    s.train_src_.push_back(std::move(src));
  }
  return s;
}

inline TaskStream make_permutations_with(std::shared_ptr<const MnistData> base,
                                         const StreamSpec& spec_in,
                                         std::vector<std::vector<int>> perms) {
  StreamSpec spec = spec_in.with_defaults();
  spec.validate();
  TaskStream s;
  s.spec_ = spec;
  s.base_ = std::move(base);
  s.input_dim_ = s.base_->train_images.rows * s.base_->train_images.cols;
  s.class_count_ = 10;
  s.perms_ = std::move(perms);
  if (static_cast<int>(s.perms_.size()) != spec.task_count)
    throw std::invalid_argument("make_permutations: one permutation per task");

  for (int t = 0; t < spec.task_count; ++t) {
    Rng rng(derive_seed(spec.seed, 0x100 + t));
    auto src = TaskStream::sample_without_replacement(
        s.base_->train_images.count, spec.train_per_task, rng);
    const auto& perm = s.perms_[t];
    std::vector<Example> task(spec.train_per_task);
    for (int i = 0; i < spec.train_per_task; ++i) {
      task[i].x.resize(s.input_dim_);
      const std::uint8_t* px = s.base_->train_images.image(src[i]);
      for (int j = 0; j < s.input_dim_; ++j)
        task[i].x[j] = static_cast<float>(px[perm[j]]) * (1.0f / 255.0f);
      task[i].label = s.base_->train_labels.labels[src[i]];
      task[i].task_id = t;
    }
    s.train_.push_back(std::move(task));
    s.train_src_.push_back(std::move(src));
  }
  return s;
}

// Every task, including task 0, draws its own uniform-random pixel
// permutation from the seeded generator.
inline TaskStream make_permutations(std::shared_ptr<const MnistData> base,
                                    const StreamSpec& spec_in) {
  StreamSpec spec = spec_in.with_defaults();
  spec.validate();
  if (spec.kind != StreamKind::kPermutations &&
      spec.kind != StreamKind::kManyPermutations)
    throw std::invalid_argument("make_permutations: spec.kind mismatch");
  const int dim = base->train_images.rows * base->train_images.cols;
  std::vector<std::vector<int>> perms(spec.task_count);
  for (int t = 0; t < spec.task_count; ++t) {
    Rng rng(derive_seed(spec.seed, 0x200 + t));
    std::vector<int> perm(dim);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = dim - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.below(i + 1));
      std::swap(perm[i], perm[j]);
    }
    perms[t] = std::move(perm);
  }
  return make_permutations_with(std::move(base), spec, std::move(perms));
}

// 2-class Gaussian blobs in [0,1]^dim; each task picks a fresh random
// direction for the class-mean axis. Fast fixture, not a benchmark.
inline TaskStream make_synthetic(const StreamSpec& spec_in) {
  StreamSpec spec = spec_in.with_defaults();
  spec.validate();
  if (spec.kind != StreamKind::kSynthetic)
    throw std::invalid_argument("make_synthetic: spec.kind mismatch");

  TaskStream s;
  s.spec_ = spec;
  s.input_dim_ = spec.synth_dim;
  s.class_count_ = 2;

  const double sigma = spec.synth_noise_sigma;
  const double half_gap = 0.5 * spec.synth_sep_sigmas * sigma;
  for (int t = 0; t < spec.task_count; ++t) {
    Rng rng(derive_seed(spec.seed, 0x300 + t));
    std::vector<double> dir(spec.synth_dim);
    double norm = 0.0;
    for (auto& v : dir) {
      v = rng.gaussian();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;

    auto draw = [&](int label) {
      Example ex;
      ex.x.resize(spec.synth_dim);
      const double sign = label == 0 ? -1.0 : 1.0;
      for (int j = 0; j < spec.synth_dim; ++j) {
        const double v = 0.5 + sign * half_gap * dir[j] + sigma * rng.gaussian();
        ex.x[j] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
      }
      ex.label = label;
      ex.task_id = t;
      return ex;
    };

    std::vector<Example> train(spec.train_per_task);
    std::vector<int> src(spec.train_per_task);
    for (int i = 0; i < spec.train_per_task; ++i) {
      train[i] = draw(static_cast<int>(rng.below(2)));
      src[i] = i;
    }
    std::vector<Example> test(spec.synth_test_per_task);
    for (int i = 0; i < spec.synth_test_per_task; ++i)
      test[i] = draw(static_cast<int>(rng.below(2)));

    s.train_.push_back(std::move(train));
    s.train_src_.push_back(std::move(src));
    s.test_.push_back(std::move(test));
  }
  return s;
}

// Dispatch on spec.kind; MNIST-derived kinds need base data.
inline TaskStream make_stream(const StreamSpec& spec,
                              std::shared_ptr<const MnistData> base = nullptr) {
  switch (spec.kind) {
    case StreamKind::kRotations:
      if (!base) throw std::invalid_argument("make_stream: rotations need data");
      return make_rotations(std::move(base), spec);
    case StreamKind::kPermutations:
    case StreamKind::kManyPermutations:
      if (!base)
        throw std::invalid_argument("make_stream: permutations need data");
      return make_permutations(std::move(base), spec);
    case StreamKind::kSynthetic:
      return make_synthetic(spec);
  }
  throw std::invalid_argument("make_stream: unknown kind");
}

}  // namespace merlab
