#pragma once

// Helpers shared by the test executables.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "scalemix/rng.hpp"
#include "scalemix/types.hpp"

namespace testing {

inline scalemix::Matrix random_spd(int dim, scalemix::Rng& rng, double ridge = 0.5) {
  scalemix::Matrix a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) a(i, j) = rng.normal();
  scalemix::Matrix m = a * a.transpose() / dim;
  m.diagonal().array() += ridge;
  return m;
}

inline scalemix::Vector random_vector(int dim, scalemix::Rng& rng, double scale = 1.0) {
  scalemix::Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = scale * rng.normal();
  return v;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("scalemix_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
