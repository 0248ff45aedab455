#pragma once

// Bounded replay memories and the batch-sampling policies used by
// ER / MER / GEM. Buffers are single-owner mutable state; samplers are
// deterministic given the caller's generator.

#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "merlab/example.hpp"
#include "merlab/rng.hpp"

namespace merlab {

// Algorithm-R reservoir: after N presented records each is resident with
// probability min(M, N) / N.
template <typename T>
class ReservoirBuffer {
 public:
  explicit ReservoirBuffer(std::size_t capacity) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  std::uint64_t age() const { return age_; }
  bool empty() const { return items_.empty(); }
  const T& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<T>& items() const { return items_; }

  void update(const T& record, Rng& rng) {
    if (age_ < capacity_) {
      items_.push_back(record);
      ++age_;
      return;
    }
    // j inclusive of age: j >= capacity leaves the buffer unchanged
    const std::uint64_t j = rng.below(age_ + 1);
    apply_update(record, j);
  }

  // Exposed replacement branch; j must come from uniform{0..age}.
  void apply_update(const T& record, std::uint64_t j) {
    if (j < capacity_) items_[static_cast<std::size_t>(j)] = record;
    ++age_;
  }

  void restore(std::vector<T> items, std::uint64_t age) {
    items_ = std::move(items);
    age_ = age;
  }

 private:
  std::vector<T> items_;
  std::size_t capacity_;
  std::uint64_t age_ = 0;
};

namespace detail {

// k distinct indices from [0, n) via Floyd's algorithm, then shuffled.
inline void sample_distinct(std::size_t n, std::size_t k, Rng& rng,
                            std::vector<std::size_t>& out) {
  out.clear();
  for (std::size_t i = n - k; i < n; ++i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
    bool seen = false;
    for (std::size_t v : out) seen |= v == j;
    out.push_back(seen ? i : j);
  }
  for (std::size_t i = out.size(); i > 1; --i)
    std::swap(out[i - 1], out[rng.below(i)]);
}

// m buffer draws appended to `batch`; without replacement when the buffer
// is large enough, with replacement otherwise (constant batch shapes keep
// the meta-update arithmetic uniform during cold start).
template <typename T>
void draw_from_buffer(const ReservoirBuffer<T>& buffer, std::size_t m, Rng& rng,
                      std::vector<const T*>& batch) {
  const std::size_t n = buffer.size();
  if (n >= m) {
    static thread_local std::vector<std::size_t> idx;
    sample_distinct(n, m, rng, idx);
    for (std::size_t i : idx) batch.push_back(&buffer[i]);
  } else {
    for (std::size_t i = 0; i < m; ++i)
      batch.push_back(&buffer[rng.below(n)]);
  }
}

}  // namespace detail

// s batches of k records; each holds the current record at a uniform slot
// and k-1 buffer draws. Empty buffer: k copies of the current record.
template <typename T>
std::vector<std::vector<const T*>> sample_mer_batches(
    const ReservoirBuffer<T>& buffer, const T& current, int s, int k,
    Rng& rng) {
  if (s < 1 || k < 1)
    throw std::invalid_argument("sample_mer_batches: s and k must be >= 1");
  std::vector<std::vector<const T*>> batches(s);
  for (auto& batch : batches) {
    batch.reserve(k);
    if (buffer.empty()) {
      batch.assign(k, &current);
      continue;
    }
    detail::draw_from_buffer(buffer, k - 1, rng, batch);
    const std::size_t pos = static_cast<std::size_t>(rng.below(k));
    batch.insert(batch.begin() + pos, &current);
  }
  return batches;
}

// One batch of s*k records: s*k - s buffer draws followed by s consecutive
// copies of the current record at the end.
template <typename T>
std::vector<const T*> sample_big_batch(const ReservoirBuffer<T>& buffer,
                                       const T& current, int s, int k,
                                       Rng& rng) {
  if (s < 1 || k < 1)
    throw std::invalid_argument("sample_big_batch: s and k must be >= 1");
  std::vector<const T*> batch;
  const std::size_t total = static_cast<std::size_t>(s) * k;
  batch.reserve(total);
  if (!buffer.empty()) detail::draw_from_buffer(buffer, total - s, rng, batch);
  batch.resize(total, &current);
  return batch;
}

// k-1 buffer draws with the current record inserted at a uniform slot;
// returns the batch and the current record's index.
template <typename T>
std::pair<std::vector<const T*>, int> sample_random_position_batch(
    const ReservoirBuffer<T>& buffer, int k, const T& current, Rng& rng) {
  if (k < 1)
    throw std::invalid_argument("sample_random_position_batch: k must be >= 1");
  std::vector<const T*> batch;
  batch.reserve(k);
  const int pos = static_cast<int>(rng.below(k));
  if (buffer.empty()) {
    batch.assign(k, &current);
    return {std::move(batch), pos};
  }
  detail::draw_from_buffer(buffer, k - 1, rng, batch);
  batch.insert(batch.begin() + pos, &current);
  return {std::move(batch), pos};
}

// Per-task FIFO segments of equal capacity floor(M / T); the storage
// policy behind GEM.
class TaskRingBuffer {
 public:
  TaskRingBuffer(std::size_t capacity, int task_count)
      : segment_capacity_(capacity / static_cast<std::size_t>(task_count)),
        segments_(task_count) {
    if (task_count < 1)
      throw std::invalid_argument("TaskRingBuffer: task_count must be >= 1");
  }

  std::size_t segment_capacity() const { return segment_capacity_; }
  int task_count() const { return static_cast<int>(segments_.size()); }

  void update(const Example& ex) {
    if (ex.task_id < 0 || ex.task_id >= task_count())
      throw std::invalid_argument("TaskRingBuffer: unknown task_id " +
                                  std::to_string(ex.task_id));
    if (segment_capacity_ == 0) return;
    auto& seg = segments_[ex.task_id];
    seg.push_back(ex);
    if (seg.size() > segment_capacity_) seg.pop_front();
  }

  const std::deque<Example>& segment(int task) const { return segments_[task]; }

 private:
  std::size_t segment_capacity_;
  std::vector<std::deque<Example>> segments_;
};

// ---- binary snapshot (little-endian, length-prefixed records) -------------

namespace detail {

template <typename P>
void put_pod(std::string& out, const P& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(P));
}

template <typename P>
P get_pod(const char*& p, const char* end) {
  if (p + sizeof(P) > end)
    throw std::runtime_error("snapshot: truncated record");
  P v;
  std::memcpy(&v, p, sizeof(P));
  p += sizeof(P);
  return v;
}

}  // namespace detail

// Snapshot record codecs; further record types add overloads found by ADL.
inline void snapshot_write(std::string& out, const Example& ex) {
  detail::put_pod<std::int32_t>(out, ex.label);
  detail::put_pod<std::int32_t>(out, ex.task_id);
  detail::put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ex.x.size()));
  for (float v : ex.x) detail::put_pod<float>(out, v);
}

inline void snapshot_read(const char*& p, const char* end, Example& ex) {
  ex.label = detail::get_pod<std::int32_t>(p, end);
  ex.task_id = detail::get_pod<std::int32_t>(p, end);
  const auto n = detail::get_pod<std::uint32_t>(p, end);
  ex.x.resize(n);
  for (auto& v : ex.x) v = detail::get_pod<float>(p, end);
}

template <typename T>
void save_snapshot(const ReservoirBuffer<T>& buffer, const std::string& path) {
  std::string out;
  detail::put_pod<std::uint64_t>(out, buffer.age());
  detail::put_pod<std::uint64_t>(out, buffer.capacity());
  detail::put_pod<std::uint64_t>(out, buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    std::string rec;
    snapshot_write(rec, buffer[i]);
    detail::put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(rec.size()));
    out += rec;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("snapshot: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

template <typename T>
ReservoirBuffer<T> load_snapshot(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("snapshot: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  const char* p = data.data();
  const char* end = p + data.size();
  const auto age = detail::get_pod<std::uint64_t>(p, end);
  const auto capacity = detail::get_pod<std::uint64_t>(p, end);
  const auto count = detail::get_pod<std::uint64_t>(p, end);
  ReservoirBuffer<T> buffer(static_cast<std::size_t>(capacity));
  std::vector<T> items(static_cast<std::size_t>(count));
  for (auto& item : items) {
    const auto len = detail::get_pod<std::uint32_t>(p, end);
    const char* rec_end = p + len;
    if (rec_end > end) throw std::runtime_error("snapshot: truncated record");
    snapshot_read(p, rec_end, item);
  }
  buffer.restore(std::move(items), age);
  return buffer;
}

}  // namespace merlab
