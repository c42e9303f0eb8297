#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "slotalign/numkernel.hpp"

namespace testing_support {

inline slotalign::nk::Tensor<double> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng,
                                                   double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  auto t = slotalign::nk::Tensor<double>::matrix(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

inline slotalign::nk::Tensor<float> random_frames(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  auto t = slotalign::nk::Tensor<float>::matrix(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(SLOTALIGN_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
