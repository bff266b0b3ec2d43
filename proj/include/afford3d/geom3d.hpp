#pragma once

// Geometric kernels over point clouds: normalization, sampling, grouping,
// rotation, occlusion-based partial views and inverse-distance interpolation.
// Everything here is a pure function of its arguments.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "afford3d/autograd.hpp"

namespace afford3d::geom {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using ad::IndexMat;
using ad::Mat;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PointCloud {
  Points xyz;

  Eigen::Index size() const { return xyz.rows(); }
  bool all_finite() const { return xyz.allFinite(); }
};

struct Rotation {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();

  // R = Rz(gamma) * Ry(beta) * Rx(alpha).
  static Rotation from_euler(double alpha, double beta, double gamma);
  Rotation inverse() const { return Rotation{matrix.transpose()}; }
  // Orthogonality and det(R) = 1 within tol.
  bool is_valid(double tol = 1e-9) const;
};

struct Viewpoint {
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  int grid_resolution = 32;
  double depth_tolerance = 0.02;
};

// Centers at the origin and scales the farthest point to norm 1.
PointCloud normalize_unit_sphere(const PointCloud& pc);

// Farthest point sampling; the start index is drawn from `seed`.
std::vector<int> farthest_point_sample(const PointCloud& pc, int m, uint64_t seed);
// Same, with an explicit start index. Ties pick the lowest index.
std::vector<int> farthest_point_sample_from(const PointCloud& pc, int m, int start);

// Start index that depends only on the multiset of coordinates, so sampling
// seeded through it is invariant to point order.
int coordinate_hash_start(const PointCloud& pc, uint64_t salt = 0);
uint64_t coordinate_hash(const PointCloud& pc);

// (|centers|, k) neighbor indices. Each row holds the in-radius points in
// order of increasing distance (ties by index) and is padded by repeating
// the first entry, which is the center itself.
IndexMat ball_query(const PointCloud& pc, const std::vector<int>& centers, double radius, int k);

// Euler angles drawn uniformly on [0, 2pi) from `seed`.
Rotation random_rotation(uint64_t seed);
PointCloud apply_rotation(const PointCloud& pc, const Rotation& r);

// Orthographic z-buffer visibility. Points are projected along the view
// direction onto a resolution^2 grid spanning the projected bounding square;
// in every cell the nearest point and everything within depth_tolerance
// behind it survive. Returns sorted indices.
std::vector<int> partial_view(const PointCloud& pc, const Viewpoint& vp);

struct InterpolationWeights {
  IndexMat index;  // (N, k) into the sparse cloud
  Mat weight;      // (N, k), rows sum to 1
};

// Inverse-distance weights over the k nearest sparse points, distances
// floored at 1e-10. A dense point that coincides with a sparse point takes
// that point's feature exactly.
InterpolationWeights interpolation_weights(const PointCloud& dense, const PointCloud& sparse, int k = 3);
Mat interpolate_features(const PointCloud& dense, const PointCloud& sparse, const Mat& sparse_features,
                         int k = 3);

PointCloud gather(const PointCloud& pc, const std::vector<int>& index);

}  // namespace afford3d::geom
