#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "slotalign/numkernel/graph.hpp"

namespace slotalign::nk {

// The one generator type used for every random draw in the library.
using Rng = std::mt19937_64;

// Independent stream for item `index` of a run seeded with `seed`.
inline Rng child_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

// Weight matrix [fan_in x fan_out], uniform in +-1/sqrt(fan_in).
template <typename T>
Param<T> uniform_weight(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto t = Tensor<T>::matrix(fan_in, fan_out);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return Param<T>(std::move(name), std::move(t));
}

template <typename T>
Param<T> constant_param(std::string name, std::vector<std::size_t> shape, T value) {
  return Param<T>(std::move(name), Tensor<T>(std::move(shape), value));
}

// Embedding table [rows x width], N(0, 1/sqrt(width)).
template <typename T>
Param<T> normal_table(std::string name, std::size_t rows, std::size_t width, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(width)));
  auto t = Tensor<T>::matrix(rows, width);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return Param<T>(std::move(name), std::move(t));
}

// Position table initialised with the standard sinusoid pattern times
// `amplitude`; the values are trained like any other table.
template <typename T>
Param<T> sinusoid_table(std::string name, std::size_t rows, std::size_t width, double amplitude = 1.0) {
  auto t = Tensor<T>::matrix(rows, width);
  const std::size_t half = width / 2;
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
      t(p, 2 * i) = static_cast<T>(amplitude * std::sin(static_cast<double>(p) * freq));
      if (2 * i + 1 < width) t(p, 2 * i + 1) = static_cast<T>(amplitude * std::cos(static_cast<double>(p) * freq));
    }
  }
  return Param<T>(std::move(name), std::move(t));
}

}  // namespace slotalign::nk
