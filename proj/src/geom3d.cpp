#include "afford3d/geom3d.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "afford3d/rng.hpp"

namespace afford3d::geom {

Rotation Rotation::from_euler(double alpha, double beta, double gamma) {
  const Eigen::Matrix3d rx = Eigen::AngleAxisd(alpha, Eigen::Vector3d::UnitX()).toRotationMatrix();
  const Eigen::Matrix3d ry = Eigen::AngleAxisd(beta, Eigen::Vector3d::UnitY()).toRotationMatrix();
  const Eigen::Matrix3d rz = Eigen::AngleAxisd(gamma, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return Rotation{rz * ry * rx};
}

bool Rotation::is_valid(double tol) const {
  const double ortho = (matrix.transpose() * matrix - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(matrix.determinant() - 1.0) <= tol;
}

PointCloud normalize_unit_sphere(const PointCloud& pc) {
  if (pc.size() < 1) throw GeometryError("normalize_unit_sphere: empty cloud");
  if (!pc.all_finite()) throw GeometryError("normalize_unit_sphere: non-finite coordinates");
  const Eigen::RowVector3d centroid = pc.xyz.colwise().mean();
  PointCloud out{pc.xyz.rowwise() - centroid};
  const double max_norm = out.xyz.rowwise().norm().maxCoeff();
  if (!(max_norm > 0.0)) throw GeometryError("normalize_unit_sphere: degenerate cloud (all points identical)");
  out.xyz /= max_norm;
  return out;
}

std::vector<int> farthest_point_sample(const PointCloud& pc, int m, uint64_t seed) {
  if (pc.size() < 1) throw GeometryError("farthest_point_sample: empty cloud");
  Rng rng(seed);
  return farthest_point_sample_from(pc, m, static_cast<int>(rng.below(static_cast<uint64_t>(pc.size()))));
}

std::vector<int> farthest_point_sample_from(const PointCloud& pc, int m, int start) {
  const auto n = static_cast<int>(pc.size());
  if (m < 1 || m > n) throw GeometryError("farthest_point_sample: need 1 <= m <= N");
  if (start < 0 || start >= n) throw GeometryError("farthest_point_sample: start out of range");
  std::vector<int> picked;
  picked.reserve(static_cast<std::size_t>(m));
  std::vector<double> min_d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  int current = start;
  for (int s = 0; s < m; ++s) {
    picked.push_back(current);
    taken[static_cast<std::size_t>(current)] = 1;
    const Eigen::RowVector3d c = pc.xyz.row(current);
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d = (pc.xyz.row(i) - c).squaredNorm();
      if (d < min_d2[static_cast<std::size_t>(i)]) min_d2[static_cast<std::size_t>(i)] = d;
      if (!taken[static_cast<std::size_t>(i)] && min_d2[static_cast<std::size_t>(i)] > best_d) {
        best_d = min_d2[static_cast<std::size_t>(i)];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

namespace {

uint64_t point_hash(const Eigen::RowVector3d& p) {
  uint64_t h = 0x51ed270b27a4c3f1ull;
  for (int k = 0; k < 3; ++k) {
    // +0.0 and -0.0 hash alike.
    const double v = p[k] == 0.0 ? 0.0 : p[k];
    h = mix64(h ^ std::bit_cast<uint64_t>(v));
  }
  return h;
}

}  // namespace

uint64_t coordinate_hash(const PointCloud& pc) {
  uint64_t h = 0;
  for (Eigen::Index i = 0; i < pc.size(); ++i) h += point_hash(pc.xyz.row(i));
  return mix64(h);
}

int coordinate_hash_start(const PointCloud& pc, uint64_t salt) {
  if (pc.size() < 1) throw GeometryError("coordinate_hash_start: empty cloud");
  const uint64_t seed = mix64(coordinate_hash(pc) ^ salt);
  int best = 0;
  uint64_t best_key = std::numeric_limits<uint64_t>::max();
  for (Eigen::Index i = 0; i < pc.size(); ++i) {
    const uint64_t key = mix64(point_hash(pc.xyz.row(i)) ^ seed);
    if (key < best_key) {
      best_key = key;
      best = static_cast<int>(i);
    }
  }
  return best;
}

IndexMat ball_query(const PointCloud& pc, const std::vector<int>& centers, double radius, int k) {
  if (!(radius > 0.0)) throw GeometryError("ball_query: radius must be positive");
  if (k < 1) throw GeometryError("ball_query: k must be >= 1");
  const auto n = static_cast<int>(pc.size());
  const double r2 = radius * radius;
  IndexMat out(static_cast<Eigen::Index>(centers.size()), k);
  std::vector<std::pair<double, int>> found;
  found.reserve(static_cast<std::size_t>(n));
  for (std::size_t row = 0; row < centers.size(); ++row) {
    const int center = centers[row];
    if (center < 0 || center >= n) throw GeometryError("ball_query: center index out of range");
    const Eigen::RowVector3d c = pc.xyz.row(center);
    found.clear();
    for (int i = 0; i < n; ++i) {
      const double d = (pc.xyz.row(i) - c).squaredNorm();
      if (d <= r2) found.emplace_back(i == center ? -1.0 : d, i);
    }
    const auto take = std::min<std::size_t>(found.size(), static_cast<std::size_t>(k));
    std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(take), found.end());
    const auto r = static_cast<Eigen::Index>(row);
    for (std::size_t j = 0; j < static_cast<std::size_t>(k); ++j)
      out(r, static_cast<Eigen::Index>(j)) = j < take ? found[j].second : found[0].second;
  }
  return out;
}

Rotation random_rotation(uint64_t seed) {
  Rng rng(seed);
  const double two_pi = 2.0 * std::numbers::pi;
  const double alpha = rng.uniform() * two_pi;
  const double beta = rng.uniform() * two_pi;
  const double gamma = rng.uniform() * two_pi;
  return Rotation::from_euler(alpha, beta, gamma);
}

PointCloud apply_rotation(const PointCloud& pc, const Rotation& r) {
  return PointCloud{pc.xyz * r.matrix.transpose()};
}

std::vector<int> partial_view(const PointCloud& pc, const Viewpoint& vp) {
  if (vp.grid_resolution < 4) throw GeometryError("partial_view: grid_resolution must be >= 4");
  if (vp.depth_tolerance < 0.0) throw GeometryError("partial_view: negative depth tolerance");
  if (std::abs(vp.direction.norm() - 1.0) > 1e-9) throw GeometryError("partial_view: direction must be unit");
  if (pc.size() < 1) throw GeometryError("partial_view: empty cloud");
  const Eigen::Vector3d d = vp.direction;
  // Any vector not parallel to d seeds the image-plane basis.
  const Eigen::Vector3d helper = std::abs(d.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d u = d.cross(helper).normalized();
  const Eigen::Vector3d v = d.cross(u);

  const Eigen::Index n = pc.size();
  Eigen::VectorXd pu = pc.xyz * u, pv = pc.xyz * v, depth = pc.xyz * d;
  const double umin = pu.minCoeff(), vmin = pv.minCoeff();
  const double extent = std::max(pu.maxCoeff() - umin, pv.maxCoeff() - vmin);
  const int res = vp.grid_resolution;
  const double cell = extent > 0.0 ? extent / res : 1.0;

  std::vector<int> cell_of(static_cast<std::size_t>(n));
  std::vector<double> nearest(static_cast<std::size_t>(res) * res, std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int cu = std::clamp(static_cast<int>(std::floor((pu[i] - umin) / cell)), 0, res - 1);
    const int cv = std::clamp(static_cast<int>(std::floor((pv[i] - vmin) / cell)), 0, res - 1);
    const int c = cv * res + cu;
    cell_of[static_cast<std::size_t>(i)] = c;
    nearest[static_cast<std::size_t>(c)] = std::min(nearest[static_cast<std::size_t>(c)], depth[i]);
  }
  std::vector<int> visible;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double limit = nearest[static_cast<std::size_t>(cell_of[static_cast<std::size_t>(i)])] + vp.depth_tolerance;
    if (depth[i] <= limit) visible.push_back(static_cast<int>(i));
  }
  return visible;
}

InterpolationWeights interpolation_weights(const PointCloud& dense, const PointCloud& sparse, int k) {
  const auto m = static_cast<int>(sparse.size());
  if (k < 1 || k > m) throw GeometryError("interpolation_weights: need 1 <= k <= M");
  constexpr double kFloor = 1e-10;
  InterpolationWeights w{IndexMat(dense.size(), k), Mat(dense.size(), k)};
  std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(m));
  for (Eigen::Index r = 0; r < dense.size(); ++r) {
    for (int j = 0; j < m; ++j)
      dist[static_cast<std::size_t>(j)] = {(sparse.xyz.row(j) - dense.xyz.row(r)).norm(), j};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    if (dist[0].first <= kFloor) {
      for (int j = 0; j < k; ++j) {
        w.index(r, j) = dist[static_cast<std::size_t>(j)].second;
        w.weight(r, j) = j == 0 ? 1.0 : 0.0;
      }
      continue;
    }
    double total = 0.0;
    for (int j = 0; j < k; ++j) total += 1.0 / std::max(dist[static_cast<std::size_t>(j)].first, kFloor);
    for (int j = 0; j < k; ++j) {
      w.index(r, j) = dist[static_cast<std::size_t>(j)].second;
      w.weight(r, j) = (1.0 / std::max(dist[static_cast<std::size_t>(j)].first, kFloor)) / total;
    }
  }
  return w;
}

Mat interpolate_features(const PointCloud& dense, const PointCloud& sparse, const Mat& sparse_features, int k) {
  if (sparse_features.rows() != sparse.size())
    throw GeometryError("interpolate_features: feature rows must match sparse cloud");
  const InterpolationWeights w = interpolation_weights(dense, sparse, k);
  Mat out = Mat::Zero(dense.size(), sparse_features.cols());
  for (Eigen::Index r = 0; r < dense.size(); ++r)
    for (int j = 0; j < k; ++j) out.row(r) += w.weight(r, j) * sparse_features.row(w.index(r, j));
  return out;
}

PointCloud gather(const PointCloud& pc, const std::vector<int>& index) {
  PointCloud out{Points(static_cast<Eigen::Index>(index.size()), 3)};
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= pc.size()) throw GeometryError("gather: index out of range");
    out.xyz.row(static_cast<Eigen::Index>(i)) = pc.xyz.row(index[i]);
  }
  return out;
}

}  // namespace afford3d::geom
