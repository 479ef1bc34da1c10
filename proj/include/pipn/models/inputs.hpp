#pragma once

// Network inputs built from cases: point clouds ordered with collocation
// points first, and boundary-condition records for the operator branch.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "pipn/dataset/normalization.hpp"
#include "pipn/dataset/point_cloud.hpp"
#include "pipn/errors.hpp"
#include "pipn/geometry/sampling.hpp"
#include "pipn/models/pipn.hpp"

namespace pipn::models {

/// Residual points: everything off the outer boundary (interior fluid,
/// porous interior and the fluid-porous interface).
inline bool is_collocation(const PointCloudCase& c, int i) {
  return !c.is_boundary(i) || c.has_tag(i, BoundaryTag::interface);
}

/// A cloud plus the case row of each cloud row.
struct OrderedCloud {
  CloudInput<double> input;
  std::vector<int> order;  // cloud row -> case row
};

/// Collocation points first (their derivatives are computed), then the
/// remaining boundary points. `c` should already be normalized.
inline OrderedCloud make_cloud(const PointCloudCase& c, bool with_derivatives = true) {
  OrderedCloud out;
  for (int i = 0; i < c.size(); ++i) {
    if (is_collocation(c, i)) out.order.push_back(i);
  }
  const int n_colloc = static_cast<int>(out.order.size());
  for (int i = 0; i < c.size(); ++i) {
    if (!is_collocation(c, i)) out.order.push_back(i);
  }
  const int n = c.size();
  out.input.coords.resize(n, c.dim);
  out.input.features.resize(n, kPointFeatures);
  for (int j = 0; j < n; ++j) {
    const int i = out.order[static_cast<std::size_t>(j)];
    out.input.coords.row(j) = c.coords.row(i);
    out.input.features(j, 0) = c.sdf(i);
    out.input.features.block(j, 1, 1, kBoundaryTypes) = c.onehot.row(i);
  }
  out.input.n_deriv = with_derivatives ? n_colloc : 0;
  return out;
}

/// Undo the cloud ordering on an n x k prediction.
inline Eigen::MatrixXd to_case_order(const Eigen::MatrixXd& pred, const std::vector<int>& order) {
  Eigen::MatrixXd out(pred.rows(), pred.cols());
  for (std::size_t j = 0; j < order.size(); ++j) out.row(order[j]) = pred.row(static_cast<Eigen::Index>(j));
  return out;
}

/// M boundary records: position, boundary velocity, D, F, velocity flag,
/// porous flag. Unavailable entries are exactly zero with a zero flag.
struct BranchInput {
  int dim = 2;
  Eigen::MatrixXd records;       // M x (2 dim + 4)
  std::vector<int> rows;         // case row of each record
  std::vector<int> quota;        // records per boundary type
  bool normalized = false;

  int size() const { return static_cast<int>(records.rows()); }
  int velocity_flag_col() const { return 2 * dim + 2; }
  int porous_flag_col() const { return 2 * dim + 3; }
};

/// Per-type counts proportional to the boundary sizes, summing to M, with
/// every present type kept (at least one record each).
inline std::vector<int> branch_quotas(const std::vector<int>& sizes, int m) {
  std::vector<double> w(sizes.begin(), sizes.end());
  std::vector<int> q = geometry::largest_remainder(w, m);
  for (std::size_t t = 0; t < q.size(); ++t) {
    if (sizes[t] > 0 && q[t] == 0) {
      std::size_t donor = 0;
      for (std::size_t s = 0; s < q.size(); ++s) {
        if (q[s] > q[donor]) donor = s;
      }
      if (q[donor] <= 1) throw ConfigurationError("branch point count too small for the boundary types present");
      --q[donor];
      q[t] = 1;
    }
  }
  return q;
}

/// Seeded selection of M boundary points in physical units. The inlet
/// velocity comes from the reference field when present, otherwise from the
/// case inlet speed and angle.
inline BranchInput select_branch_points(const PointCloudCase& c, int m, std::uint64_t seed) {
  if (m <= 0) throw ConfigurationError("branch point count must be positive");
  std::vector<std::vector<int>> by_tag(kBoundaryTypes);
  std::vector<int> sizes(kBoundaryTypes);
  int total = 0;
  for (int t = 0; t < kBoundaryTypes; ++t) {
    by_tag[static_cast<std::size_t>(t)] = c.indices_with_tag(static_cast<BoundaryTag>(t));
    sizes[static_cast<std::size_t>(t)] = static_cast<int>(by_tag[static_cast<std::size_t>(t)].size());
    total += sizes[static_cast<std::size_t>(t)];
    if (sizes[static_cast<std::size_t>(t)] == 0) {
      throw ConfigurationError(std::string("case has no ") + to_string(static_cast<BoundaryTag>(t)) + " points");
    }
  }
  if (m > total) {
    throw ConfigurationError("branch point count " + std::to_string(m) + " exceeds the " + std::to_string(total) +
                             " boundary points of the case");
  }
  BranchInput b;
  b.dim = c.dim;
  b.quota = branch_quotas(sizes, m);
  std::mt19937_64 rng(seed);
  for (int t = 0; t < kBoundaryTypes; ++t) {
    auto pool = by_tag[static_cast<std::size_t>(t)];
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(b.quota[static_cast<std::size_t>(t)]));
    std::sort(pool.begin(), pool.end());
    b.rows.insert(b.rows.end(), pool.begin(), pool.end());
  }
  const int d = c.dim;
  b.records = Eigen::MatrixXd::Zero(m, 2 * d + 4);
  for (int j = 0; j < m; ++j) {
    const int i = b.rows[static_cast<std::size_t>(j)];
    b.records.block(j, 0, 1, d) = c.coords.row(i);
    if (c.has_tag(i, BoundaryTag::inlet)) {
      if (c.reference) {
        b.records.block(j, d, 1, d) = c.reference->u.row(i);
      } else {
        b.records(j, d) = c.meta.inlet_speed * std::cos(c.meta.inlet_angle);
        b.records(j, d + 1) = c.meta.inlet_speed * std::sin(c.meta.inlet_angle);
      }
      b.records(j, b.velocity_flag_col()) = 1.0;
    } else if (c.has_tag(i, BoundaryTag::interface)) {
      b.records(j, 2 * d) = c.D(i);
      b.records(j, 2 * d + 1) = c.F(i);
      b.records(j, b.porous_flag_col()) = 1.0;
    }
  }
  return b;
}

/// Positions and available values mapped with the dataset statistics;
/// unavailable entries stay zero.
inline BranchInput normalize_branch(const BranchInput& b, const dataset::NormalizationStats& st) {
  if (b.normalized) throw ConfigurationError("branch input is already normalized");
  if (st.dim != b.dim) throw ConfigurationError("normalization statistics have the wrong dimension");
  BranchInput out = b;
  const int d = b.dim;
  for (int j = 0; j < b.size(); ++j) {
    for (int k = 0; k < d; ++k) out.records(j, k) = st.coords[static_cast<std::size_t>(k)].forward(b.records(j, k));
    if (b.records(j, b.velocity_flag_col()) == 1.0) {
      for (int k = 0; k < d; ++k) {
        out.records(j, d + k) = st.velocity[static_cast<std::size_t>(k)].forward(b.records(j, d + k));
      }
    }
    if (b.records(j, b.porous_flag_col()) == 1.0) {
      out.records(j, 2 * d) = st.D.forward(b.records(j, 2 * d));
      out.records(j, 2 * d + 1) = st.F.forward(b.records(j, 2 * d + 1));
    }
  }
  out.normalized = true;
  return out;
}

}  // namespace pipn::models
