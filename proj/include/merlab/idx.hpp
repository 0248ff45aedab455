#pragma once

// Loader for the IDX binary format MNIST is distributed in: big-endian
// magic + dimension header, then raw unsigned bytes.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "merlab/example.hpp"

namespace merlab {

struct IdxImages {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols

  const std::uint8_t* image(int i) const {
    return pixels.data() + static_cast<std::size_t>(i) * rows * cols;
  }
};

struct IdxLabels {
  int count = 0;
  std::vector<std::uint8_t> labels;
};

namespace detail {

inline std::uint32_t read_be32(std::ifstream& f, const std::string& path,
                               const char* field) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("idx: truncated " + std::string(field) + " in " +
                             path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

inline IdxImages load_idx_images(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("idx: cannot open image file " + path);
  const std::uint32_t magic = detail::read_be32(f, path, "magic");
  if (magic != 0x00000803u)
    throw std::runtime_error("idx: bad magic in image file " + path +
                             " (got " + std::to_string(magic) + ")");
  IdxImages out;
  out.count = static_cast<int>(detail::read_be32(f, path, "image count"));
  out.rows = static_cast<int>(detail::read_be32(f, path, "row count"));
  out.cols = static_cast<int>(detail::read_be32(f, path, "column count"));
  const std::size_t n =
      static_cast<std::size_t>(out.count) * out.rows * out.cols;
  out.pixels.resize(n);
  if (!f.read(reinterpret_cast<char*>(out.pixels.data()),
              static_cast<std::streamsize>(n)))
    throw std::runtime_error("idx: truncated pixel data in " + path);
  return out;
}

inline IdxLabels load_idx_labels(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("idx: cannot open label file " + path);
  const std::uint32_t magic = detail::read_be32(f, path, "magic");
  if (magic != 0x00000801u)
    throw std::runtime_error("idx: bad magic in label file " + path +
                             " (got " + std::to_string(magic) + ")");
  IdxLabels out;
  out.count = static_cast<int>(detail::read_be32(f, path, "label count"));
  out.labels.resize(out.count);
  if (!f.read(reinterpret_cast<char*>(out.labels.data()), out.count))
    throw std::runtime_error("idx: truncated label data in " + path);
  return out;
}

// Paired image/label load with pixels scaled into [0, 1].
inline std::pair<std::vector<Example>, int> load_idx(
    const std::string& images_path, const std::string& labels_path) {
  IdxImages images = load_idx_images(images_path);
  IdxLabels labels = load_idx_labels(labels_path);
  if (images.count != labels.count)
    throw std::runtime_error(
        "idx: image count " + std::to_string(images.count) +
        " does not match label count " + std::to_string(labels.count));
  const int dim = images.rows * images.cols;
  std::vector<Example> out(images.count);
  for (int i = 0; i < images.count; ++i) {
    out[i].x.resize(dim);
    const std::uint8_t* px = images.image(i);
    for (int j = 0; j < dim; ++j)
      out[i].x[j] = static_cast<float>(px[j]) * (1.0f / 255.0f);
    out[i].label = labels.labels[i];
    out[i].task_id = 0;
  }
  return {std::move(out), images.count};
}

}  // namespace merlab
