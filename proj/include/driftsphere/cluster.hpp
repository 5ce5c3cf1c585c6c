#pragma once

#include "driftsphere/numerics.hpp"
#include "driftsphere/types.hpp"

#include <vector>

namespace driftsphere {

struct SphericalKMeansResult {
  Matrix centers;                 // k x d, unit rows
  std::vector<int> assignment;    // cluster per input row
  double objective;               // mean cosine to the assigned center
};

// Cosine-objective k-means on unit rows. Seeding picks the first center
// uniformly and the rest with probability ∝ (1 - max cosine) (k-means++ on
// the sphere). An emptied cluster is re-seeded at the worst-fit point.
SphericalKMeansResult spherical_kmeans(const Matrix& rows, int k, int iterations, Rng& rng);

}  // namespace driftsphere
