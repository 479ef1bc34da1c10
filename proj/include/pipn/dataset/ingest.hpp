#pragma once

// Fixed-size subsampling of externally produced cases and observation-point
// selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "pipn/dataset/point_cloud.hpp"
#include "pipn/errors.hpp"
#include "pipn/geometry/sampling.hpp"

namespace pipn::dataset {

inline PointCloudCase select_rows(const PointCloudCase& c, const std::vector<int>& rows) {
  PointCloudCase out;
  out.dim = c.dim;
  out.meta = c.meta;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.coords.resize(n, c.dim);
  out.chi.resize(n);
  out.sdf.resize(n);
  out.onehot.resize(n, kBoundaryTypes);
  out.D.resize(n);
  out.F.resize(n);
  if (c.reference) out.reference = FlowField{Eigen::MatrixXd(n, c.dim), Eigen::VectorXd(n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const int i = rows[static_cast<std::size_t>(j)];
    out.coords.row(j) = c.coords.row(i);
    out.chi(j) = c.chi(i);
    out.sdf(j) = c.sdf(i);
    out.onehot.row(j) = c.onehot.row(i);
    out.D(j) = c.D(i);
    out.F(j) = c.F(i);
    if (c.reference) {
      out.reference->u.row(j) = c.reference->u.row(i);
      out.reference->p(j) = c.reference->p(i);
    }
  }
  return out;
}

namespace detail {

template <class Rng>
std::vector<int> draw_without_replacement(std::vector<int> pool, std::size_t k, Rng& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(k, pool.size()));
  return pool;
}

}  // namespace detail

/// Seeded subsample to fixed interior/boundary counts. Interior points are
/// stratified by distance to the interface: `near_weight` of them come from
/// the band |sdf| <= 2 sigma, sigma = near_std_fraction x cross extent (the
/// coordinate extent along meta.wall_normal_axis). Boundary points keep the
/// per-tag proportions of the source case. Shortfalls in one stratum are
/// filled from the rest; observations are dropped.
inline PointCloudCase subsample_case(const PointCloudCase& c, geometry::SampleCounts counts, std::uint64_t seed,
                                     const geometry::SamplerOptions& opt = {}) {
  c.validate();
  std::vector<int> interior, near, far;
  std::vector<std::vector<int>> by_tag(kBoundaryTypes);
  for (int i = 0; i < c.size(); ++i) {
    if (c.is_boundary(i)) {
      for (int t = 0; t < kBoundaryTypes; ++t) {
        if (c.onehot(i, t) == 1.0) by_tag[static_cast<std::size_t>(t)].push_back(i);
      }
    } else {
      interior.push_back(i);
    }
  }
  int n_boundary = 0;
  for (const auto& v : by_tag) n_boundary += static_cast<int>(v.size());
  if (counts.interior <= 0 || counts.boundary <= 0) throw ConfigurationError("subsample counts must be positive");
  if (counts.interior > static_cast<int>(interior.size()) || counts.boundary > n_boundary) {
    throw ConfigurationError("case has fewer points than the requested subsample");
  }
  const int axis = std::clamp(c.meta.wall_normal_axis, 0, c.dim - 1);
  const double extent = c.coords.col(axis).maxCoeff() - c.coords.col(axis).minCoeff();
  const double band = 2.0 * opt.near_std_fraction * extent;
  for (int i : interior) (std::abs(c.sdf(i)) <= band ? near : far).push_back(i);

  std::mt19937_64 rng(seed);
  const auto want_near = static_cast<std::size_t>(std::llround(opt.near_weight * counts.interior));
  std::vector<int> picked = detail::draw_without_replacement(near, want_near, rng);
  std::vector<int> rest;
  for (int i : interior) {
    if (std::find(picked.begin(), picked.end(), i) == picked.end()) rest.push_back(i);
  }
  auto more = detail::draw_without_replacement(rest, static_cast<std::size_t>(counts.interior) - picked.size(), rng);
  picked.insert(picked.end(), more.begin(), more.end());
  std::sort(picked.begin(), picked.end());

  std::vector<double> sizes;
  for (const auto& v : by_tag) sizes.push_back(static_cast<double>(v.size()));
  const auto quota = geometry::largest_remainder(sizes, counts.boundary);
  std::vector<int> bpicked;
  for (int t = 0; t < kBoundaryTypes; ++t) {
    auto got = detail::draw_without_replacement(by_tag[static_cast<std::size_t>(t)],
                                                static_cast<std::size_t>(quota[static_cast<std::size_t>(t)]), rng);
    std::sort(got.begin(), got.end());
    bpicked.insert(bpicked.end(), got.begin(), got.end());
  }
  picked.insert(picked.end(), bpicked.begin(), bpicked.end());
  return select_rows(c, picked);
}

/// Uniform-random observation points (sorted indices), recorded with the seed.
inline void select_observations(PointCloudCase& c, int count, std::uint64_t seed) {
  if (count < 0 || count > c.size()) throw ConfigurationError("observation count out of range");
  if (count > 0 && !c.reference) throw ConfigurationError("observations need reference fields");
  std::vector<int> all(static_cast<std::size_t>(c.size()));
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(seed);
  auto picked = detail::draw_without_replacement(std::move(all), static_cast<std::size_t>(count), rng);
  std::sort(picked.begin(), picked.end());
  c.observations = std::move(picked);
  c.observation_seed = seed;
}

}  // namespace pipn::dataset
