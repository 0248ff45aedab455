#include "merlab/streams.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "merlab/nn.hpp"

using namespace merlab;

namespace {

void write_be32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_idx_images(const std::string& path, int count, int rows, int cols,
                      const std::vector<std::uint8_t>& pixels,
                      std::uint32_t magic = 0x00000803u) {
  std::ofstream f(path, std::ios::binary);
  write_be32(f, magic);
  write_be32(f, count);
  write_be32(f, rows);
  write_be32(f, cols);
  f.write(reinterpret_cast<const char*>(pixels.data()),
          static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels,
                      std::uint32_t magic = 0x00000801u) {
  std::ofstream f(path, std::ios::binary);
  write_be32(f, magic);
  write_be32(f, static_cast<std::uint32_t>(labels.size()));
  f.write(reinterpret_cast<const char*>(labels.data()),
          static_cast<std::streamsize>(labels.size()));
}

// Small fake MNIST-shaped dataset for stream tests.
std::shared_ptr<MnistData> fake_mnist(int train_n = 60, int test_n = 30) {
  auto d = std::make_shared<MnistData>();
  Rng rng(4242);
  auto fill = [&](IdxImages& im, IdxLabels& lb, int n) {
    im.count = n;
    im.rows = 28;
    im.cols = 28;
    im.pixels.assign(static_cast<std::size_t>(n) * 784, 0);
    lb.count = n;
    lb.labels.resize(n);
    for (int i = 0; i < n; ++i) {
      lb.labels[i] = static_cast<std::uint8_t>(i % 10);
      // blob of bright pixels in the interior
      for (int k = 0; k < 40; ++k) {
        const int r = 8 + static_cast<int>(rng.below(12));
        const int c = 8 + static_cast<int>(rng.below(12));
        im.pixels[static_cast<std::size_t>(i) * 784 + r * 28 + c] =
            static_cast<std::uint8_t>(100 + rng.below(156));
      }
    }
  };
  fill(d->train_images, d->train_labels, train_n);
  fill(d->test_images, d->test_labels, test_n);
  return d;
}

// Independent per-pixel inverse-map rotation used as the oracle.
std::vector<float> rotate_oracle(const std::uint8_t* src, double deg) {
  std::vector<float> out(784, 0.0f);
  const double th = deg * 3.14159265358979323846 / 180.0;
  for (int r = 0; r < 28; ++r) {
    for (int c = 0; c < 28; ++c) {
      const double dy = r - 13.5, dx = c - 13.5;
      const double sx = std::cos(th) * dx + std::sin(th) * dy + 13.5;
      const double sy = -std::sin(th) * dx + std::cos(th) * dy + 13.5;
      double acc = 0.0;
      const int r0 = static_cast<int>(std::floor(sy));
      const int c0 = static_cast<int>(std::floor(sx));
      for (int rr = r0; rr <= r0 + 1; ++rr) {
        for (int cc = c0; cc <= c0 + 1; ++cc) {
          if (rr < 0 || rr > 27 || cc < 0 || cc > 27) continue;
          const double w = (1.0 - std::abs(sy - rr)) * (1.0 - std::abs(sx - cc));
          acc += w * src[rr * 28 + cc];
        }
      }
      out[r * 28 + c] = static_cast<float>(acc / 255.0);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("idx: hand-built fixture round trips") {
  const std::string ip = temp_path("merlab_idx_images");
  const std::string lp = temp_path("merlab_idx_labels");
  std::vector<std::uint8_t> pixels(4 * 2 * 3);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<std::uint8_t>(i * 7 + 3);
  write_idx_images(ip, 4, 2, 3, pixels);
  write_idx_labels(lp, {1, 2, 3, 4});

  auto [examples, count] = load_idx(ip, lp);
  REQUIRE(count == 4);
  REQUIRE(examples.size() == 4);
  // pixel (0,0) of image 0 is the byte at offset 16 of the file
  CHECK(examples[0].x[0] == Catch::Approx(3.0 / 255.0));
  CHECK(examples[1].label == 2);
  CHECK(examples[3].x[5] == Catch::Approx(pixels[3 * 6 + 5] / 255.0));
}

TEST_CASE("idx: error paths name the offending field") {
  const std::string ip = temp_path("merlab_idx_images2");
  const std::string lp = temp_path("merlab_idx_labels2");
  std::vector<std::uint8_t> pixels(5 * 4, 9);
  write_idx_images(ip, 5, 2, 2, pixels);
  write_idx_labels(lp, {0, 1, 2, 3});  // only 4 labels
  CHECK_THROWS_WITH(load_idx(ip, lp),
                    Catch::Matchers::ContainsSubstring("count"));

  // labels file carrying the image magic
  write_idx_labels(lp, {0, 1, 2, 3, 4}, 0x00000803u);
  CHECK_THROWS_WITH(load_idx_labels(lp),
                    Catch::Matchers::ContainsSubstring("magic"));

  // truncated pixel payload
  std::vector<std::uint8_t> short_pixels(3, 1);
  write_idx_images(ip, 5, 2, 2, short_pixels);
  CHECK_THROWS_WITH(load_idx_images(ip),
                    Catch::Matchers::ContainsSubstring("truncated"));
}

TEST_CASE("rotations: endpoint angles and identity") {
  auto base = fake_mnist();
  StreamSpec spec;
  spec.kind = StreamKind::kRotations;
  spec.task_count = 20;
  spec.train_per_task = 5;
  spec.seed = 3;
  TaskStream s = make_rotations(base, spec);
  CHECK(s.task_angle(0) == 0.0);
  CHECK(s.task_angle(19) == 180.0);

  // angle 0 keeps pixels identical to the source
  const auto& src_idx = s.train_source_indices(0);
  for (std::size_t i = 0; i < src_idx.size(); ++i) {
    const std::uint8_t* raw = base->train_images.image(src_idx[i]);
    for (int j = 0; j < 784; ++j)
      REQUIRE(s.train(0)[i].x[j] ==
              Catch::Approx(raw[j] / 255.0).margin(1e-12));
  }

  StreamSpec bad = spec;
  bad.task_count = 1;
  CHECK_THROWS_AS(make_rotations(base, bad), std::invalid_argument);
}

TEST_CASE("rotations: 180 degrees maps a pixel through the center") {
  std::vector<std::uint8_t> img(784, 0);
  img[10 * 28 + 7] = 255;
  std::vector<float> out(784);
  rotate_bilinear(img.data(), 28, 28, 180.0, out.data());
  // (10, 7) -> (17, 20) under center symmetry
  CHECK(out[17 * 28 + 20] == Catch::Approx(1.0).margin(1e-9));
  float mass = 0.0f;
  for (float v : out) mass += v;
  CHECK(mass == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("rotations: matches the brute-force inverse-map oracle") {
  auto base = fake_mnist(4, 2);
  for (double deg : {0.0, 30.0, 77.5, 120.0, 180.0}) {
    std::vector<float> got(784);
    rotate_bilinear(base->train_images.image(1), 28, 28, deg, got.data());
    auto want = rotate_oracle(base->train_images.image(1), deg);
    for (int j = 0; j < 784; ++j)
      REQUIRE(got[j] == Catch::Approx(want[j]).margin(1e-9));
  }
}

TEST_CASE("rotations: pixel mass is conserved for interior digits") {
  auto base = fake_mnist();  // blobs live in rows/cols 8..19
  const std::uint8_t* img = base->train_images.image(0);
  double src_mass = 0.0;
  for (int j = 0; j < 784; ++j) src_mass += img[j] / 255.0;
  for (double deg : {45.0, 90.0, 135.0}) {
    std::vector<float> out(784);
    rotate_bilinear(img, 28, 28, deg, out.data());
    double mass = 0.0;
    for (float v : out) mass += v;
    CHECK(mass / src_mass == Catch::Approx(1.0).margin(0.02));
  }
}

TEST_CASE("permutations: identity hook and inverse property") {
  auto base = fake_mnist();
  StreamSpec spec;
  spec.kind = StreamKind::kPermutations;
  spec.task_count = 3;
  spec.train_per_task = 6;
  spec.seed = 5;

  std::vector<int> identity(784);
  std::iota(identity.begin(), identity.end(), 0);
  TaskStream s = make_permutations_with(base, spec, {identity, identity, identity});
  const auto& src_idx = s.train_source_indices(1);
  for (std::size_t i = 0; i < src_idx.size(); ++i) {
    const std::uint8_t* raw = base->train_images.image(src_idx[i]);
    for (int j = 0; j < 784; ++j)
      REQUIRE(s.train(1)[i].x[j] == Catch::Approx(raw[j] / 255.0).margin(0.0));
  }

  TaskStream r = make_permutations(base, spec);
  const auto& perm = r.task_permutation(2);
  auto inv = invert_permutation(perm);
  std::vector<float> x(784), y(784), back(784);
  for (int j = 0; j < 784; ++j) x[j] = static_cast<float>(j) / 784.0f;
  apply_permutation(perm, x.data(), y.data());
  apply_permutation(inv, y.data(), back.data());
  CHECK(back == x);

  // distinct random permutations per task, including task 0
  CHECK(r.task_permutation(0) != identity);
  CHECK(r.task_permutation(0) != r.task_permutation(1));
}

TEST_CASE("many permutations preset dimensions") {
  StreamSpec spec;
  spec.kind = StreamKind::kManyPermutations;
  spec = spec.with_defaults();
  CHECK(spec.task_count == 100);
  CHECK(spec.train_per_task == 200);
}

TEST_CASE("streams are deterministic and byte-identical given the spec") {
  auto base = fake_mnist();
  StreamSpec spec;
  spec.kind = StreamKind::kPermutations;
  spec.task_count = 4;
  spec.train_per_task = 8;
  spec.seed = 11;
  TaskStream a = make_permutations(base, spec);
  TaskStream b = make_permutations(base, spec);
  for (int t = 0; t < 4; ++t) {
    REQUIRE(a.train_source_indices(t) == b.train_source_indices(t));
    for (int i = 0; i < 8; ++i) {
      REQUIRE(a.train(t)[i].x == b.train(t)[i].x);
      REQUIRE(a.train(t)[i].label == b.train(t)[i].label);
      REQUIRE(a.train(t)[i].task_id == t);
    }
  }

  StreamSpec synth;
  synth.kind = StreamKind::kSynthetic;
  synth.seed = 9;
  TaskStream sa = make_synthetic(synth);
  TaskStream sb = make_synthetic(synth);
  for (int t = 0; t < sa.task_count(); ++t)
    for (std::size_t i = 0; i < sa.train(t).size(); ++i)
      REQUIRE(sa.train(t)[i].x == sb.train(t)[i].x);
}

TEST_CASE("train and test draw from disjoint source pools") {
  auto base = fake_mnist(40, 20);
  StreamSpec spec;
  spec.kind = StreamKind::kRotations;
  spec.task_count = 2;
  spec.train_per_task = 10;
  spec.seed = 1;
  TaskStream s = make_rotations(base, spec);
  // training sources index the train split; tests come from the test split
  for (int t = 0; t < 2; ++t) {
    CHECK(s.test_count(t) == 20);
    for (int idx : s.train_source_indices(t)) {
      CHECK(idx >= 0);
      CHECK(idx < 40);
    }
    // sources within a task are distinct
    auto sorted = s.train_source_indices(t);
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  }
}

TEST_CASE("synthetic: values in unit cube and task ids are consistent") {
  StreamSpec spec;
  spec.kind = StreamKind::kSynthetic;
  spec.task_count = 3;
  spec.train_per_task = 50;
  spec.seed = 21;
  TaskStream s = make_synthetic(spec);
  Example scratch;
  for (int t = 0; t < 3; ++t) {
    for (const auto& ex : s.train(t))
      for (float v : ex.x) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
      }
    for (int i = 0; i < s.test_count(t); ++i) {
      s.test_example(t, i, scratch);
      REQUIRE(scratch.task_id == t);
    }
  }
}

TEST_CASE("synthetic: T=1 is plain stationary classification and is learnable") {
  StreamSpec spec;
  spec.kind = StreamKind::kSynthetic;
  spec.task_count = 1;
  spec.train_per_task = 300;
  spec.synth_sep_sigmas = 10.0;
  spec.seed = 33;
  TaskStream s = make_synthetic(spec);

  auto net = std::make_shared<NetworkSpec>(10, std::vector<int>{16}, 2);
  ParamVector p = init_params(net, 7);
  Workspace ws(net);
  for (int epoch = 0; epoch < 15; ++epoch)
    for (const auto& ex : s.train(0)) sgd_train_step(p, ex, 0, 0.1, ws);

  int correct = 0;
  Example scratch;
  for (int i = 0; i < s.test_count(0); ++i) {
    s.test_example(0, i, scratch);
    auto logits = ws.forward<float>(p, scratch.x, 0);
    const int pred = logits[1] > logits[0] ? 1 : 0;
    correct += pred == scratch.label;
  }
  const double acc = static_cast<double>(correct) / s.test_count(0);
  INFO("accuracy " << acc);
  CHECK(acc > 0.99);
}
