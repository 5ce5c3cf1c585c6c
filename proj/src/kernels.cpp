#include "driftsphere/kernels.hpp"

#include "driftsphere/errors.hpp"
#include "driftsphere/numerics.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

namespace driftsphere::kernels {

namespace {

struct BlockSum {
  double sum = 0.0;
  double sum_sq = 0.0;
};

BlockSum mc_block(int d, std::size_t begin, std::size_t end, std::uint64_t seed, std::size_t block,
                  const SphereIntegrand& f) {
  Rng rng(mix_seed(seed, block));
  BlockSum out;
  for (std::size_t i = begin; i < end; ++i) {
    const double v = f(sample_uniform_sphere(d, rng));
    out.sum += v;
    out.sum_sq += v * v;
  }
  return out;
}

// Runs body(i) for i in [0, n); rethrows the first exception after the loop.
template <typename Body>
void for_each_index(std::size_t n, Exec exec, Body&& body) {
  if (exec == Exec::serial) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr error;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(driftsphere_kernel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

McEstimate mc_sphere_integral(int d, std::size_t samples, std::uint64_t seed, const SphereIntegrand& f,
                              Exec exec) {
  if (d < 2) throw DomainError("mc_sphere_integral requires d >= 2");
  if (samples == 0) throw PreconditionError("mc_sphere_integral requires samples > 0");
  const std::size_t blocks = (samples + kMcBlock - 1) / kMcBlock;
  std::vector<BlockSum> partial(blocks);
  for_each_index(blocks, exec, [&](std::size_t b) {
    const std::size_t begin = b * kMcBlock;
    const std::size_t end = std::min(samples, begin + kMcBlock);
    partial[b] = mc_block(d, begin, end, seed, b, f);
  });
  BlockSum total;
  for (const auto& p : partial) {
    total.sum += p.sum;
    total.sum_sq += p.sum_sq;
  }
  const double n = static_cast<double>(samples);
  const double mean = total.sum / n;
  const double var = std::max(0.0, total.sum_sq / n - mean * mean);
  const double area = std::exp(log_sphere_area(d));
  return McEstimate{area * mean, area * std::sqrt(var / n), samples};
}

std::vector<Neighbor> knn_kth(const Matrix& bank, const Matrix& queries, int k, Exec exec) {
  if (bank.rows() == 0) throw PreconditionError("knn_kth: empty bank");
  if (k < 1 || k > bank.rows()) throw PreconditionError("knn_kth: k out of range");
  if (queries.rows() > 0 && queries.cols() != bank.cols()) throw ShapeError("knn_kth: dimension mismatch");
  std::vector<Neighbor> out(static_cast<std::size_t>(queries.rows()));
  const auto kth = static_cast<std::size_t>(k - 1);
  for_each_index(out.size(), exec, [&](std::size_t q) {
    const Vector dots = bank * queries.row(static_cast<Eigen::Index>(q)).transpose();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(bank.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto before = [&](Eigen::Index a, Eigen::Index b) {
      if (dots[a] != dots[b]) return dots[a] > dots[b];
      return a < b;
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kth), order.end(), before);
    const Eigen::Index idx = order[kth];
    out[q] = Neighbor{dots[idx], idx};
  });
  return out;
}

Matrix thp_similarity(const Matrix& a, const Matrix& b, const MetricConfig& cfg, Exec exec) {
  if (a.cols() != b.cols()) throw ShapeError("thp_similarity: dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for_each_index(static_cast<std::size_t>(a.rows()), exec, [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      out(row, j) = thp_metric_from_dot(a.row(row).dot(b.row(j)), cfg);
    }
  });
  return out;
}

}  // namespace driftsphere::kernels
