#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pipn/errors.hpp"

namespace pipn::dataset {

struct DatasetSplit {
  std::vector<std::string> train, validation, test;

  bool operator==(const DatasetSplit&) const = default;
};

/// Seeded shuffle, then 60/20/20 with validation = test = floor(n / 5) and
/// the remainder in train.
inline DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed) {
  if (ids.size() < 5) throw ConfigurationError("split_dataset needs at least 5 cases");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::size_t n = ids.size();
  const std::size_t k = n / 5;
  DatasetSplit s;
  s.train.assign(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(2 * k));
  s.validation.assign(ids.end() - static_cast<std::ptrdiff_t>(2 * k), ids.end() - static_cast<std::ptrdiff_t>(k));
  s.test.assign(ids.end() - static_cast<std::ptrdiff_t>(k), ids.end());
  return s;
}

}  // namespace pipn::dataset
