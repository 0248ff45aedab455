#pragma once

// Built-in hyperparameter defaults per (benchmark, algorithm, buffer),
// the best grid values for each setting. Preset names follow
// "<benchmark>-<buffer>-<algorithm>", e.g. "rot-5120-mer_a1".

#include <cstdint>
#include <stdexcept>
#include <string>

#include "merlab/learners.hpp"
#include "merlab/streams.hpp"

namespace merlab {

enum class Benchmark { kRotations, kPermutations, kManyPermutations, kSynthetic };

inline const char* benchmark_name(Benchmark b) {
  switch (b) {
    case Benchmark::kRotations: return "rotations";
    case Benchmark::kPermutations: return "permutations";
    case Benchmark::kManyPermutations: return "many_permutations";
    case Benchmark::kSynthetic: return "synthetic";
  }
  return "?";
}

inline Benchmark benchmark_from_name(const std::string& name) {
  if (name == "rotations" || name == "rot") return Benchmark::kRotations;
  if (name == "permutations" || name == "perm") return Benchmark::kPermutations;
  if (name == "many_permutations" || name == "many")
    return Benchmark::kManyPermutations;
  if (name == "synthetic" || name == "synth") return Benchmark::kSynthetic;
  throw std::invalid_argument("unknown benchmark: " + name);
}

inline Algorithm algorithm_from_name(const std::string& name) {
  for (Algorithm a :
       {Algorithm::kOnline, Algorithm::kIndependent, Algorithm::kTaskInput,
        Algorithm::kEwc, Algorithm::kGem, Algorithm::kErReservoir,
        Algorithm::kErTasks, Algorithm::kMerA1, Algorithm::kMerObb,
        Algorithm::kMerCel})
    if (name == algorithm_name(a)) return a;
  throw std::invalid_argument("unknown algorithm: " + name);
}

inline StreamKind stream_kind_of(Benchmark b) {
  switch (b) {
    case Benchmark::kRotations: return StreamKind::kRotations;
    case Benchmark::kPermutations: return StreamKind::kPermutations;
    case Benchmark::kManyPermutations: return StreamKind::kManyPermutations;
    case Benchmark::kSynthetic: return StreamKind::kSynthetic;
  }
  return StreamKind::kSynthetic;
}

namespace detail {

enum BufferBin { kB5120, kB500, kB200 };

inline BufferBin buffer_bin(std::size_t buffer) {
  if (buffer >= 2000) return kB5120;
  if (buffer >= 350) return kB500;
  return kB200;
}

}  // namespace detail

// Fills rates and batch shapes for one (benchmark, buffer, algorithm)
// cell. Values outside the searched grid fall back to the nearest cell.
inline LearnerConfig preset_config(Benchmark bench, Algorithm algo,
                                   std::size_t buffer) {
  using detail::BufferBin;
  const BufferBin bin = detail::buffer_bin(buffer);
  LearnerConfig c;
  c.algorithm = algo;
  c.buffer_capacity = buffer;
  const bool rot = bench == Benchmark::kRotations;
  const bool perm = bench == Benchmark::kPermutations;
  const bool many = bench == Benchmark::kManyPermutations;

  switch (algo) {
    case Algorithm::kOnline:
      c.alpha = rot ? 0.0003 : 0.003;
      break;
    case Algorithm::kIndependent:
      c.alpha = 0.01;
      break;
    case Algorithm::kTaskInput:
      c.alpha = 0.01;
      break;
    case Algorithm::kEwc:
      c.alpha = rot ? 0.001 : (perm ? 0.01 : 0.003);
      c.ewc_lambda = rot ? 100.0 : (perm ? 10.0 : 1.0);
      break;
    case Algorithm::kGem:
      c.alpha = many && bin != detail::kB5120 ? 0.003 : 0.01;
      if (rot)
        c.gem_memory_strength = bin == detail::kB5120 ? 1.0 : 0.0;
      else if (perm)
        c.gem_memory_strength = bin == detail::kB200 ? 0.0 : 1.0;
      else
        c.gem_memory_strength = bin == detail::kB5120 ? 0.0 : 0.1;
      break;
    case Algorithm::kErReservoir:
      c.alpha = 0.1;
      if (rot)
        c.k = 1 + (bin == detail::kB5120 ? 25 : bin == detail::kB500 ? 5 : 10);
      else if (perm)
        c.k = 1 + (bin == detail::kB5120 ? 25 : 10);
      else
        c.k = 1 + 25;
      break;
    case Algorithm::kErTasks:
      if (rot) {
        c.alpha = bin == detail::kB5120 ? 0.03 : 0.01;
        c.k = 1 + (bin == detail::kB200 ? 50 : 100);
      } else if (perm) {
        c.alpha = 0.01;
        c.k = 1 + (bin == detail::kB200 ? 10 : 25);
      } else {
        c.alpha = bin == detail::kB5120 ? 0.003 : 0.01;
        c.k = 1 + (bin == detail::kB5120 ? 10 : 5);
      }
      break;
    case Algorithm::kMerA1:
      c.gamma = 1.0;
      if (rot) {
        c.alpha = bin == detail::kB5120 ? 0.03 : 0.1;
        c.beta = bin == detail::kB5120 ? 0.03 : 0.01;
        c.k = 1 + (bin == detail::kB5120 ? 100 : 10);
        c.s = bin == detail::kB200 ? 5 : 10;
      } else if (perm) {
        c.alpha = 0.03;
        c.beta = 0.03;
        c.k = 1 + (bin == detail::kB5120 ? 100 : bin == detail::kB500 ? 25 : 10);
        c.s = 10;
      } else {
        c.alpha = 0.03;
        c.beta = bin == detail::kB5120 ? 0.01 : 0.03;
        c.k = 1 + 5;
        c.s = 10;
      }
      break;
    case Algorithm::kMerObb:
      c.s = 1;
      if (rot) {
        c.alpha = bin == detail::kB5120 ? 0.03 : 0.1;
        c.gamma = bin == detail::kB5120 ? 0.1 : 0.03;
        c.k = bin == detail::kB5120 ? 101 : bin == detail::kB500 ? 11 : 26;
      } else if (perm) {
        c.alpha = bin == detail::kB200 ? 0.1 : 0.03;
        c.gamma = bin == detail::kB5120 ? 0.1 : bin == detail::kB500 ? 0.3 : 0.03;
        c.k = bin == detail::kB5120 ? 51 : bin == detail::kB500 ? 11 : 6;
      } else {
        c.alpha = bin == detail::kB5120 ? 0.03 : 0.1;
        c.gamma = bin == detail::kB5120 ? 0.1 : 0.03;
        c.k = bin == detail::kB5120 ? 26 : 6;
      }
      break;
    case Algorithm::kMerCel:
      if (rot) {
        c.alpha = 0.03;
        c.gamma = 0.03;
        c.k = 1 + (bin == detail::kB5120 ? 100 : 50);
        c.s = 5;
      } else if (perm) {
        c.alpha = bin == detail::kB200 ? 0.03 : 0.01;
        c.gamma = 0.1;
        c.k = 1 + (bin == detail::kB5120 ? 100 : bin == detail::kB500 ? 25 : 5);
        c.s = bin == detail::kB200 ? 2 : 10;
      } else {
        c.alpha = 0.03;
        c.gamma = 0.03;
        c.k = 1 + (bin == detail::kB5120 ? 50 : 5);
        c.s = 10;
      }
      break;
  }
  return c;
}

// "rot-5120-mer_a1" and friends.
inline LearnerConfig parse_preset(const std::string& name) {
  const auto d1 = name.find('-');
  const auto d2 = name.find('-', d1 + 1);
  if (d1 == std::string::npos || d2 == std::string::npos)
    throw std::invalid_argument("preset must be <benchmark>-<buffer>-<algorithm>: " +
                                name);
  const Benchmark bench = benchmark_from_name(name.substr(0, d1));
  const std::size_t buffer = std::stoul(name.substr(d1 + 1, d2 - d1 - 1));
  const Algorithm algo = algorithm_from_name(name.substr(d2 + 1));
  return preset_config(bench, algo, buffer);
}

}  // namespace merlab
