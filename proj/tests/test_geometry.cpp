#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "mmdesign/errors.hpp"
#include "mmdesign/kernels.hpp"

using namespace mmdesign;

TEST_CASE("random rigid transforms are proper rotations") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto T = RigidTransform::random(rng);
    const Mat3 rrt = matmul(T.rotation, transpose(T.rotation));
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(rrt[i][j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    }
    CHECK(determinant(T.rotation) == doctest::Approx(1.0));
    const Vec3 x{1.5, -2.0, 0.25};
    const Vec3 back = T.inverse().apply(T.apply(x));
    for (int a = 0; a < 3; ++a) CHECK(back[a] == doctest::Approx(x[a]).epsilon(1e-12));
  }
}

TEST_CASE("local frame is orthonormal, right-handed and co-rotates") {
  Rng rng(2);
  const Vec3 n{0.3, 1.4, -0.2}, ca{0, 0, 0}, c{1.5, 0.1, 0.05};
  const auto f = local_frame(n, ca, c);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(dot(f.axes[i], f.axes[j]) == doctest::Approx(i == j ? 1.0 : 0.0));
  }
  CHECK(determinant(f.axes) == doctest::Approx(1.0));
  // e1 along C - CA
  const Vec3 e1 = unit_or_zero(c - ca);
  for (int a = 0; a < 3; ++a) CHECK(f.axes[0][a] == doctest::Approx(e1[a]));
  // components of a free vector do not change under rotation
  const auto T = RigidTransform::random(rng);
  const auto g = local_frame(T.apply(n), T.apply(ca), T.apply(c));
  const Vec3 v{0.7, -0.1, 2.0};
  const Vec3 a1 = f.to_local(v), a2 = g.to_local(matvec(T.rotation, v));
  for (int a = 0; a < 3; ++a) CHECK(a2[a] == doctest::Approx(a1[a]).epsilon(1e-12));
}

TEST_CASE("collinear or coincident atoms are rejected") {
  CHECK_THROWS_AS(local_frame({2, 0, 0}, {0, 0, 0}, {1, 0, 0}), GeometryError);
  CHECK_THROWS_AS(local_frame({0, 0, 0}, {0, 0, 0}, {1, 0, 0}), GeometryError);
}

TEST_CASE("dihedral matches hand-placed configurations") {
  const Vec3 p0{1, 0, 0}, p1{0, 0, 0}, p2{0, 1, 0};
  CHECK(dihedral(p0, p1, p2, {1, 1, 0}) == doctest::Approx(0.0));
  CHECK(std::abs(dihedral(p0, p1, p2, {-1, 1, 0})) == doctest::Approx(fixtures::kPi));
  // +90 degrees in the standard (IUPAC) sign convention
  CHECK(dihedral(p0, p1, p2, {0, 1, -1}) == doctest::Approx(fixtures::kPi / 2));
  CHECK(dihedral(p0, p1, p2, {0, 1, 1}) == doctest::Approx(-fixtures::kPi / 2));
}

TEST_CASE("synthetic helix backbones have the torsions they were built with") {
  Rng rng(3);
  const auto x = fixtures::random_coords(30, rng);
  for (int i = 1; i + 1 < 30; ++i) {
    const double omega = dihedral(x[i][kCA], x[i][kC], x[i + 1][kN], x[i + 1][kCA]);
    CHECK(std::abs(omega) == doctest::Approx(fixtures::kPi).epsilon(1e-9));
    CHECK(norm(x[i][kCA] - x[i][kN]) == doctest::Approx(1.458));
  }
}

TEST_CASE("gaussian rbf") {
  CHECK(gaussian_rbf(3.0, 3.0, 1.25) == 1.0);
  CHECK(gaussian_rbf(4.25, 3.0, 1.25) == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("knn graph agrees with a brute-force oracle, serial and parallel") {
  Rng rng(4);
  auto rec = fixtures::random_record("r", 60, rng);
  rec.mask[7] = 0;
  for (int k : {1, 5, 30, 100}) {
    const auto g = build_knn_graph(rec, k);
    std::vector<std::vector<int>> expected(60);
    for (int i = 0; i < 60; ++i) {
      if (!rec.mask[i]) continue;
      std::vector<std::pair<double, int>> d;
      for (int j = 0; j < 60; ++j) {
        if (j == i || !rec.mask[j]) continue;
        const Vec3 diff = rec.coords[j][kCA] - rec.coords[i][kCA];
        // distances equal to within 1e-9 A^2 count as ties, broken by index
        d.push_back({std::round(dot(diff, diff) * 1e9), j});
      }
      std::sort(d.begin(), d.end());
      for (int t = 0; t < std::min<int>(k, static_cast<int>(d.size())); ++t) expected[i].push_back(d[t].second);
    }
    std::vector<std::vector<int>> got(60);
    for (std::size_t e = 0; e < g.size(); ++e) got[g.dst[e]].push_back(g.src[e]);
    CHECK(got == expected);

    std::vector<double> pts;
    for (const auto& r : rec.coords) pts.insert(pts.end(), r[kCA].begin(), r[kCA].end());
    std::vector<int> s1, d1, s2, d2;
    kernels::knn(kernels::Backend::Serial, 60, pts.data(), rec.mask.data(), k, s1, d1);
    kernels::knn(kernels::Backend::Parallel, 60, pts.data(), rec.mask.data(), k, s2, d2);
    CHECK(s1 == s2);
    CHECK(d1 == d2);
  }
}

TEST_CASE("too few usable residues for a graph") {
  Rng rng(5);
  auto rec = fixtures::random_record("r", 3, rng);
  rec.mask = {1, 0, 0};
  CHECK_THROWS_AS(build_knn_graph(rec, 2), GeometryError);
}

TEST_CASE("features: scalars invariant, vectors rotate with the structure") {
  Rng rng(6);
  auto rec = fixtures::random_record("r", 40, rng);
  rec.mask[10] = 0;
  const auto T = RigidTransform::random(rng);
  const auto g1 = featurize(rec, {});
  const auto g2 = featurize(transform_record(rec, T), {});
  REQUIRE(g1.edges.src == g2.edges.src);
  REQUIRE(g1.edges.dst == g2.edges.dst);
  for (std::size_t i = 0; i < g1.node_scalars.size(); ++i) CHECK(g2.node_scalars[i] == doctest::Approx(g1.node_scalars[i]).epsilon(1e-9));
  for (std::size_t i = 0; i < g1.edge_scalars.size(); ++i) CHECK(g2.edge_scalars[i] == doctest::Approx(g1.edge_scalars[i]).epsilon(1e-9));
  const int C = FeatureDims::kNodeVectors;
  for (int n = 0; n < g1.num_nodes; ++n) {
    for (int c = 0; c < C; ++c) {
      Vec3 v, w;
      for (int a = 0; a < 3; ++a) {
        v[a] = g1.node_vectors[(3 * n + a) * C + c];
        w[a] = g2.node_vectors[(3 * n + a) * C + c];
      }
      const Vec3 rv = matvec(T.rotation, v);
      for (int a = 0; a < 3; ++a) CHECK(w[a] == doctest::Approx(rv[a]).epsilon(1e-9));
    }
  }
  // the masked residue has zero features and no edges
  for (int s = 0; s < FeatureDims::kNodeScalars; ++s) CHECK(g1.node_scalars[10 * FeatureDims::kNodeScalars + s] == 0.0);
  for (std::size_t e = 0; e < g1.edges.size(); ++e) {
    CHECK(g1.edges.src[e] != 10);
    CHECK(g1.edges.dst[e] != 10);
  }
}

TEST_CASE("feature widths and dihedral encoding") {
  Rng rng(7);
  const auto rec = fixtures::random_record("r", 8, rng);
  FeaturizerOptions o;
  o.k = 4;
  const auto g = featurize(rec, o);
  CHECK(g.node_scalars.size() == 8u * FeatureDims::kNodeScalars);
  CHECK(g.edge_scalars.size() == g.edges.size() * FeatureDims::kEdgeScalars);
  CHECK(g.edges.size() == 8u * 4u);
  // residue 3: phi from C(2), N, CA, C
  const auto& x = rec.coords;
  const double phi = dihedral(x[2][kC], x[3][kN], x[3][kCA], x[3][kC]);
  const double* s = &g.node_scalars[3 * FeatureDims::kNodeScalars];
  CHECK(s[0] == doctest::Approx(std::cos(phi)));
  CHECK(s[1] == doctest::Approx(std::sin(phi)));
  CHECK(s[2] == 1.0);
  // first residue has no phi
  CHECK(g.node_scalars[2] == 0.0);
  // disabled blocks are zero-filled without changing widths
  o.blocks.dihedrals = false;
  const auto h = featurize(rec, o);
  CHECK(h.node_scalars.size() == g.node_scalars.size());
  CHECK(h.node_scalars[3 * FeatureDims::kNodeScalars] == 0.0);
}
