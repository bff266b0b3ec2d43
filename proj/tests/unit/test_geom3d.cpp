#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "afford3d/geom3d.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace afford3d;
using namespace afford3d::geom;
using testutil::cloud_of;
using testutil::random_cloud;

namespace {

double max_norm(const PointCloud& pc) { return pc.xyz.rowwise().norm().maxCoeff(); }

double min_pairwise(const PointCloud& pc, const std::vector<int>& idx) {
  double best = INFINITY;
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j)
      best = std::min(best, (pc.xyz.row(idx[i]) - pc.xyz.row(idx[j])).norm());
  return best;
}

}  // namespace

TEST_CASE("normalize_unit_sphere") {
  SUBCASE("two points map to +-1 on x") {
    const PointCloud out = normalize_unit_sphere(cloud_of({{0, 0, 0}, {2, 0, 0}}));
    CHECK(out.xyz(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(out.xyz(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.xyz.col(1).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("random cloud: centroid and max norm recomputed") {
    const PointCloud out = normalize_unit_sphere(random_cloud(100, 3, 5.0));
    Eigen::RowVector3d c = Eigen::RowVector3d::Zero();
    for (Eigen::Index i = 0; i < out.size(); ++i) c += out.xyz.row(i);
    c /= static_cast<double>(out.size());
    CHECK(c.norm() < 1e-6);
    CHECK(std::abs(max_norm(out) - 1.0) < 1e-6);
  }
  SUBCASE("idempotent") {
    const PointCloud a = normalize_unit_sphere(random_cloud(200, 4, 3.0));
    const PointCloud b = normalize_unit_sphere(a);
    CHECK((a.xyz - b.xyz).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("degenerate input rejected") {
    CHECK_THROWS_AS(normalize_unit_sphere(cloud_of({{1, 2, 3}, {1, 2, 3}})), GeometryError);
    CHECK_THROWS_AS(normalize_unit_sphere(PointCloud{}), GeometryError);
  }
  SUBCASE("non-finite input rejected") {
    PointCloud pc = random_cloud(10, 1);
    pc.xyz(3, 1) = NAN;
    CHECK_THROWS_AS(normalize_unit_sphere(pc), GeometryError);
  }
}

TEST_CASE("farthest_point_sample") {
  const PointCloud pc = random_cloud(64, 11);
  SUBCASE("m = N is a permutation") {
    std::vector<int> idx = farthest_point_sample(pc, 64, 5);
    std::sort(idx.begin(), idx.end());
    for (int i = 0; i < 64; ++i) CHECK(idx[static_cast<std::size_t>(i)] == i);
  }
  SUBCASE("m = 1 returns the start") {
    CHECK(farthest_point_sample_from(pc, 1, 17) == std::vector<int>{17});
    const std::vector<int> a = farthest_point_sample(pc, 1, 99);
    CHECK(a.size() == 1);
    CHECK(farthest_point_sample(pc, 5, 99).front() == a.front());
  }
  SUBCASE("cube corners: opposite corner second") {
    PointCloud cube;
    cube.xyz.resize(8, 3);
    int r = 0;
    for (int x : {-1, 1})
      for (int y : {-1, 1})
        for (int z : {-1, 1}) cube.xyz.row(r++) << x, y, z;
    const std::vector<int> idx = farthest_point_sample_from(cube, 2, 0);
    // Brute force: the candidate maximizing distance to corner 0.
    int best = -1;
    double far = -1;
    for (int j = 0; j < 8; ++j) {
      const double d = (cube.xyz.row(j) - cube.xyz.row(0)).norm();
      if (d > far) far = d, best = j;
    }
    CHECK(idx[1] == best);
    CHECK(cube.xyz.row(idx[1]) == Eigen::RowVector3d(1, 1, 1));
  }
  SUBCASE("each pick maximizes the min distance to the chosen set") {
    const std::vector<int> idx = farthest_point_sample_from(pc, 12, 3);
    for (std::size_t s = 1; s < idx.size(); ++s) {
      auto dmin = [&](int j) {
        double d = INFINITY;
        for (std::size_t t = 0; t < s; ++t) d = std::min(d, (pc.xyz.row(j) - pc.xyz.row(idx[t])).norm());
        return d;
      };
      double best = -1;
      for (int j = 0; j < 64; ++j) best = std::max(best, dmin(j));
      CHECK(dmin(idx[s]) == best);
    }
  }
  SUBCASE("deterministic, no duplicates") {
    const std::vector<int> a = farthest_point_sample(pc, 20, 42), b = farthest_point_sample(pc, 20, 42);
    CHECK(a == b);
    CHECK(std::set<int>(a.begin(), a.end()).size() == a.size());
  }
  SUBCASE("spread beats random subsets") {
    Rng rng(8);
    int wins = 0;
    const int trials = 50;
    for (int t = 0; t < trials; ++t) {
      const PointCloud cloud = random_cloud(200, 100 + static_cast<uint64_t>(t));
      const std::vector<int> f = farthest_point_sample(cloud, 16, static_cast<uint64_t>(t));
      std::vector<int> all(200);
      for (int i = 0; i < 200; ++i) all[static_cast<std::size_t>(i)] = i;
      rng.shuffle(all.begin(), all.end());
      const std::vector<int> rand_pick(all.begin(), all.begin() + 16);
      wins += min_pairwise(cloud, f) >= min_pairwise(cloud, rand_pick);
    }
    CHECK(wins >= trials * 9 / 10);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(farthest_point_sample(pc, 65, 0), GeometryError);
    CHECK_THROWS_AS(farthest_point_sample(pc, 0, 0), GeometryError);
  }
}

TEST_CASE("coordinate_hash_start is order independent") {
  PointCloud pc = random_cloud(50, 21);
  const int s = coordinate_hash_start(pc, 1);
  const Eigen::RowVector3d chosen = pc.xyz.row(s);
  std::vector<int> perm(50);
  for (int i = 0; i < 50; ++i) perm[static_cast<std::size_t>(i)] = 49 - i;
  const PointCloud q = gather(pc, perm);
  CHECK(q.xyz.row(coordinate_hash_start(q, 1)) == chosen);
  CHECK(coordinate_hash(q) == coordinate_hash(pc));
}

TEST_CASE("ball_query") {
  SUBCASE("tiny radius pads with the center") {
    const PointCloud pc = random_cloud(30, 2);
    const IndexMat nb = ball_query(pc, {0, 5, 9}, 1e-9, 4);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) CHECK(nb(r, c) == std::array{0, 5, 9}[static_cast<std::size_t>(r)]);
  }
  SUBCASE("huge radius with k = N returns every index") {
    const PointCloud pc = random_cloud(20, 3);
    const IndexMat nb = ball_query(pc, {4}, 100.0, 20);
    std::set<int> s;
    for (int c = 0; c < 20; ++c) s.insert(nb(0, c));
    CHECK(s.size() == 20);
    CHECK(nb(0, 0) == 4);
  }
  SUBCASE("collinear points spaced 0.1") {
    const PointCloud pc = cloud_of({{0, 0, 0}, {0.1, 0, 0}, {0.2, 0, 0}, {0.3, 0, 0}, {0.4, 0, 0}});
    const IndexMat nb = ball_query(pc, {2}, 0.15, 3);
    std::set<int> got{nb(0, 0), nb(0, 1), nb(0, 2)};
    std::set<int> want;
    for (int j = 0; j < 5; ++j)
      if ((pc.xyz.row(j) - pc.xyz.row(2)).norm() <= 0.15) want.insert(j);
    CHECK(got == want);
    CHECK(got == std::set<int>{1, 2, 3});
  }
  SUBCASE("rows hold only in-radius points") {
    const PointCloud pc = random_cloud(100, 4);
    const std::vector<int> centers{0, 10, 20, 30};
    const IndexMat nb = ball_query(pc, centers, 0.4, 8);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 8; ++c)
        CHECK((pc.xyz.row(nb(r, c)) - pc.xyz.row(centers[static_cast<std::size_t>(r)])).norm() <= 0.4);
  }
}

TEST_CASE("rotations") {
  SUBCASE("zero angles give identity") {
    CHECK((Rotation::from_euler(0, 0, 0).matrix - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("pi about x is diag(1,-1,-1)") {
    const Eigen::Matrix3d r = Rotation::from_euler(std::numbers::pi, 0, 0).matrix;
    CHECK((r - Eigen::Vector3d(1, -1, -1).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("random rotations are proper and orthogonal") {
    for (uint64_t s = 0; s < 200; ++s) {
      const Eigen::Matrix3d r = random_rotation(s).matrix;
      Eigen::Matrix3d rtr = Eigen::Matrix3d::Zero();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          for (int k = 0; k < 3; ++k) rtr(i, j) += r(k, i) * r(k, j);
      const double det = r(0, 0) * (r(1, 1) * r(2, 2) - r(1, 2) * r(2, 1)) -
                         r(0, 1) * (r(1, 0) * r(2, 2) - r(1, 2) * r(2, 0)) +
                         r(0, 2) * (r(1, 0) * r(2, 1) - r(1, 1) * r(2, 0));
      CHECK((rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(std::abs(det - 1.0) < 1e-9);
    }
  }
  SUBCASE("x axis under Rz(pi/2)") {
    const PointCloud out = apply_rotation(cloud_of({{1, 0, 0}}), Rotation::from_euler(0, 0, std::numbers::pi / 2));
    CHECK((out.xyz.row(0) - Eigen::RowVector3d(0, 1, 0)).norm() < 1e-9);
  }
  SUBCASE("distances preserved and inverse restores") {
    const PointCloud pc = random_cloud(60, 9);
    const Rotation r = random_rotation(77);
    const PointCloud q = apply_rotation(pc, r);
    CHECK((oracle::distance_matrix(pc) - oracle::distance_matrix(q)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((apply_rotation(q, r.inverse()).xyz - pc.xyz).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((apply_rotation(pc, Rotation{}).xyz - pc.xyz).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("partial_view") {
  SUBCASE("stacked points keep the nearer") {
    const PointCloud pc = cloud_of({{0, 0, 0.5}, {0, 0, -0.5}, {1, 1, 0}, {-1, -1, 0}});
    Viewpoint vp;
    vp.direction = Eigen::Vector3d::UnitZ();
    vp.grid_resolution = 4;
    vp.depth_tolerance = 0.0;
    const std::vector<int> vis = partial_view(pc, vp);
    CHECK(std::find(vis.begin(), vis.end(), 1) != vis.end());
    CHECK(std::find(vis.begin(), vis.end(), 0) == vis.end());
  }
  SUBCASE("plane seen face-on keeps everything") {
    PointCloud pc;
    pc.xyz.resize(64, 3);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) pc.xyz.row(i * 8 + j) << i / 7.0, j / 7.0, 0.0;
    Viewpoint vp;
    vp.grid_resolution = 8;
    CHECK(partial_view(pc, vp).size() == 64);
  }
  SUBCASE("matches the brute-force z-buffer on random scenes") {
    for (uint64_t s = 0; s < 20; ++s) {
      const PointCloud pc = random_cloud(300, 500 + s);
      Rng rng(s);
      Viewpoint vp;
      vp.direction = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
      vp.grid_resolution = 8;
      vp.depth_tolerance = 0.05;
      const std::vector<int> got = partial_view(pc, vp);
      CHECK(got == oracle::zbuffer_visible(pc, vp.direction, 8, 0.05));
      CHECK(!got.empty());
      CHECK(got == partial_view(pc, vp));
    }
  }
  SUBCASE("sphere keeps roughly the facing hemisphere") {
    Rng rng(4);
    PointCloud pc;
    pc.xyz.resize(2048, 3);
    for (int i = 0; i < 2048; ++i)
      pc.xyz.row(i) = Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
    Viewpoint vp;
    const std::vector<int> vis = partial_view(pc, vp);
    // Cells without a front point let back points through at this density.
    int facing = 0;
    double mean_z = 0;
    for (int i : vis) {
      facing += pc.xyz(i, 2) < 0.0;
      mean_z += pc.xyz(i, 2) / static_cast<double>(vis.size());
    }
    CHECK(vis.size() < 2048 * 0.6);
    CHECK(vis.size() > 2048 * 0.3);
    CHECK(facing >= static_cast<int>(vis.size() * 0.7));
    CHECK(mean_z < -0.2);
  }
  SUBCASE("bad viewpoints rejected") {
    Viewpoint vp;
    vp.grid_resolution = 3;
    CHECK_THROWS_AS(partial_view(random_cloud(10, 1), vp), GeometryError);
    vp.grid_resolution = 8;
    vp.direction = Eigen::Vector3d(1, 1, 0);
    CHECK_THROWS_AS(partial_view(random_cloud(10, 1), vp), GeometryError);
  }
}

TEST_CASE("interpolate_features") {
  SUBCASE("closed-form 1-D example") {
    const PointCloud sparse = cloud_of({{0, 0, 0}, {1, 0, 0}});
    const PointCloud dense = cloud_of({{0.25, 0, 0}});
    Mat f(2, 1);
    f << 0.0, 1.0;
    const Mat out = interpolate_features(dense, sparse, f, 2);
    const double w0 = 1 / 0.25, w1 = 1 / 0.75;
    CHECK(std::abs(out(0, 0) - w1 / (w0 + w1)) < 1e-12);
    CHECK(std::abs(out(0, 0) - 0.25) < 1e-12);
  }
  SUBCASE("coincident point copies its feature") {
    const PointCloud sparse = random_cloud(10, 6);
    const PointCloud dense = gather(sparse, {3, 7});
    const Mat f = Mat::Random(10, 4);
    const Mat out = interpolate_features(dense, sparse, f, 3);
    CHECK((out.row(0) - f.row(3)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((out.row(1) - f.row(7)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("constant features stay constant, outputs stay within neighbors") {
    const PointCloud sparse = random_cloud(16, 7), dense = random_cloud(100, 8);
    const Mat c = Mat::Constant(16, 2, 0.37);
    CHECK((interpolate_features(dense, sparse, c, 3).array() - 0.37).abs().maxCoeff() < 1e-14);
    const Mat f = Mat::Random(16, 3);
    const InterpolationWeights w = interpolation_weights(dense, sparse, 3);
    const Mat out = interpolate_features(dense, sparse, f, 3);
    for (Eigen::Index r = 0; r < 100; ++r) {
      CHECK(std::abs(w.weight.row(r).sum() - 1.0) < 1e-12);
      for (Eigen::Index ch = 0; ch < 3; ++ch) {
        double lo = INFINITY, hi = -INFINITY;
        for (int j = 0; j < 3; ++j) {
          lo = std::min(lo, f(w.index(r, j), ch));
          hi = std::max(hi, f(w.index(r, j), ch));
        }
        CHECK(out(r, ch) >= lo - 1e-12);
        CHECK(out(r, ch) <= hi + 1e-12);
      }
    }
  }
}
