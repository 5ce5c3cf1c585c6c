#pragma once

// Data-parallel hot loops. Every kernel has a serial reference and an OpenMP
// version; both produce bit-identical results because work is split into
// fixed blocks whose partial results are combined in block order.

#include "driftsphere/metric.hpp"
#include "driftsphere/types.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace driftsphere::kernels {

enum class Exec { serial, parallel };

// Samples per Monte-Carlo block. Block b draws from Rng(mix_seed(seed, b)).
inline constexpr std::size_t kMcBlock = 4096;

struct McEstimate {
  double integral;   // |S^{d-1}| · mean f
  double std_error;  // standard error of `integral`
  std::size_t samples;
};

using SphereIntegrand = std::function<double(const UnitVector&)>;

// Monte-Carlo integral of f over S^{d-1} with `samples` uniform points.
McEstimate mc_sphere_integral(int d, std::size_t samples, std::uint64_t seed, const SphereIntegrand& f,
                              Exec exec = Exec::parallel);

struct Neighbor {
  double dot;
  Eigen::Index index;
};

// For each query row, the k-th nearest bank row by dot product (k is 1-based).
// Equal dots rank by bank order, lower index first.
std::vector<Neighbor> knn_kth(const Matrix& bank, const Matrix& queries, int k, Exec exec = Exec::parallel);

// (i, j) = thp_metric(b_j, a_i).
Matrix thp_similarity(const Matrix& a, const Matrix& b, const MetricConfig& cfg, Exec exec = Exec::parallel);

}  // namespace driftsphere::kernels
