#include "mmdesign/geometry.hpp"

#include <cmath>
#include <numbers>

#include "mmdesign/errors.hpp"
#include "mmdesign/kernels.hpp"

namespace mmdesign {

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 unit_or_zero(const Vec3& a) {
  const double n = norm(a);
  if (n < 1e-12) return {0, 0, 0};
  return (1.0 / n) * a;
}

Vec3 matvec(const Mat3& m, const Vec3& v) { return {dot(m[0], v), dot(m[1], v), dot(m[2], v)}; }

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    }
  }
  return out;
}

Mat3 transpose(const Mat3& m) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  }
  return t;
}

double determinant(const Mat3& m) { return dot(m[0], cross(m[1], m[2])); }

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = transpose(rotation);
  const Vec3 rt = matvec(inv.rotation, translation);
  inv.translation = {-rt[0], -rt[1], -rt[2]};
  return inv;
}

RigidTransform RigidTransform::random(Rng& rng, double translation_scale) {
  // Shoemake's uniform unit quaternion.
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  const double two_pi = 2.0 * std::numbers::pi;
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double w = a * std::sin(two_pi * u2), x = a * std::cos(two_pi * u2);
  const double y = b * std::sin(two_pi * u3), z = b * std::cos(two_pi * u3);
  RigidTransform t;
  t.rotation = {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
                 {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
                 {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
  for (auto& c : t.translation) c = rng.uniform(-translation_scale, translation_scale);
  return t;
}

BackboneRecord transform_record(const BackboneRecord& record, const RigidTransform& t) {
  BackboneRecord out = record;
  for (int i = 0; i < out.size(); ++i) {
    if (!out.mask[i]) continue;
    for (auto& atom : out.coords[i]) atom = t.apply(atom);
  }
  return out;
}

LocalFrame local_frame(const Vec3& n, const Vec3& ca, const Vec3& c) {
  const Vec3 to_c = c - ca;
  const Vec3 to_n = n - ca;
  const double len_c = norm(to_c);
  const double len_n = norm(to_n);
  if (len_c < 1e-8 || len_n < 1e-8) throw GeometryError("coincident backbone atoms");
  const Vec3 e1 = (1.0 / len_c) * to_c;
  const Vec3 u = to_n - dot(e1, to_n) * e1;
  const double len_u = norm(u);
  if (len_u < 1e-6 * len_n) throw GeometryError("collinear backbone atoms");
  const Vec3 e2 = (1.0 / len_u) * u;
  LocalFrame f;
  f.origin = ca;
  f.axes = {e1, e2, cross(e1, e2)};
  return f;
}

double dihedral(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3) {
  const Vec3 b0 = p0 - p1;
  const Vec3 b1 = p2 - p1;
  const Vec3 b2 = p3 - p2;
  const Vec3 b1u = unit_or_zero(b1);
  const Vec3 v = b0 - dot(b0, b1u) * b1u;
  const Vec3 w = b2 - dot(b2, b1u) * b1u;
  const double x = dot(v, w);
  const double y = dot(cross(b1u, v), w);
  return std::atan2(y, x);
}

double gaussian_rbf(double distance, double center, double width) {
  const double z = (distance - center) / width;
  return std::exp(-z * z);
}

EdgeIndex build_knn_graph(const BackboneRecord& record, int k) {
  const int n = record.size();
  if (record.num_valid() < 2) throw GeometryError("record '" + record.name + "' has fewer than 2 usable residues");
  std::vector<double> ca(3 * static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    if (!record.mask[i]) continue;
    for (int d = 0; d < 3; ++d) ca[3 * i + d] = record.coords[i][kCA][d];
  }
  EdgeIndex edges;
  kernels::knn(kernels::Backend::Parallel, n, ca.data(), record.mask.data(), k, edges.src, edges.dst);
  return edges;
}

ProteinGraph featurize(const BackboneRecord& record, const FeaturizerOptions& options) {
  using D = FeatureDims;
  const int n = record.size();
  ProteinGraph g;
  g.num_nodes = n;
  g.mask = record.mask;
  g.frames.assign(n, LocalFrame{});

  // Residues whose frame is degenerate are masked out like missing ones.
  for (int i = 0; i < n; ++i) {
    if (!g.mask[i]) continue;
    try {
      g.frames[i] = local_frame(record.coords[i][kN], record.coords[i][kCA], record.coords[i][kC]);
    } catch (const GeometryError&) {
      g.mask[i] = 0;
    }
  }

  BackboneRecord masked_view;
  const BackboneRecord* source = &record;
  if (g.mask != record.mask) {
    masked_view = record;
    masked_view.mask = g.mask;
    source = &masked_view;
  }
  if (source->num_valid() >= 2) {
    g.edges = build_knn_graph(*source, options.k);
  }

  const auto& x = record.coords;
  auto ok = [&](int i) { return i >= 0 && i < n && g.mask[i]; };

  g.node_scalars.assign(static_cast<std::size_t>(n) * D::kNodeScalars, 0.0);
  g.node_vectors.assign(static_cast<std::size_t>(3) * n * D::kNodeVectors, 0.0);
  for (int i = 0; i < n; ++i) {
    if (!g.mask[i]) continue;
    double* s = &g.node_scalars[static_cast<std::size_t>(i) * D::kNodeScalars];
    if (options.blocks.dihedrals) {
      auto put = [&](int slot, bool valid, auto angle_fn) {
        if (!valid) return;
        const double angle = angle_fn();
        s[3 * slot] = std::cos(angle);
        s[3 * slot + 1] = std::sin(angle);
        s[3 * slot + 2] = 1.0;
      };
      put(0, ok(i - 1), [&] { return dihedral(x[i - 1][kC], x[i][kN], x[i][kCA], x[i][kC]); });
      put(1, ok(i + 1), [&] { return dihedral(x[i][kN], x[i][kCA], x[i][kC], x[i + 1][kN]); });
      put(2, ok(i + 1), [&] { return dihedral(x[i][kCA], x[i][kC], x[i + 1][kN], x[i + 1][kCA]); });
    }
    if (options.blocks.orientations) {
      std::array<Vec3, D::kNodeVectors> vecs{};
      if (ok(i + 1)) vecs[0] = unit_or_zero(x[i + 1][kCA] - x[i][kCA]);
      if (ok(i - 1)) vecs[1] = unit_or_zero(x[i - 1][kCA] - x[i][kCA]);
      vecs[2] = unit_or_zero(x[i][kN] - x[i][kCA]);
      vecs[3] = unit_or_zero(x[i][kC] - x[i][kCA]);
      for (int c = 0; c < D::kNodeVectors; ++c) {
        for (int a = 0; a < 3; ++a) {
          g.node_vectors[(static_cast<std::size_t>(3) * i + a) * D::kNodeVectors + c] = vecs[c][a];
        }
        if (options.blocks.frame_copies) {
          const Vec3 local = g.frames[i].to_local(vecs[c]);
          for (int a = 0; a < 3; ++a) s[9 + 3 * c + a] = local[a];
        }
      }
    }
  }

  const std::size_t e_count = g.edges.size();
  g.edge_scalars.assign(e_count * D::kEdgeScalars, 0.0);
  g.edge_vectors.assign(3 * e_count * D::kEdgeVectors, 0.0);
  const double width = D::kRbfMax / D::kRbfCount;
  for (std::size_t e = 0; e < e_count; ++e) {
    const int j = g.edges.src[e];
    const int i = g.edges.dst[e];
    const Vec3 disp = x[j][kCA] - x[i][kCA];
    double* s = &g.edge_scalars[e * D::kEdgeScalars];
    if (options.blocks.distances) {
      const double dist = norm(disp);
      for (int r = 0; r < D::kRbfCount; ++r) {
        const double center = D::kRbfMax * r / (D::kRbfCount - 1);
        s[r] = gaussian_rbf(dist, center, width);
      }
    }
    if (options.blocks.offsets) {
      const double offset = static_cast<double>(j - i);
      for (int f = 0; f < D::kOffsetDims / 2; ++f) {
        const double freq = std::exp(-std::log(10000.0) * (2.0 * f) / D::kOffsetDims);
        s[D::kRbfCount + 2 * f] = std::cos(offset * freq);
        s[D::kRbfCount + 2 * f + 1] = std::sin(offset * freq);
      }
    }
    if (options.blocks.orientations) {
      const Vec3 u = unit_or_zero(disp);
      for (int a = 0; a < 3; ++a) g.edge_vectors[(3 * e + a) * D::kEdgeVectors] = u[a];
      if (options.blocks.frame_copies) {
        const Vec3 local = g.frames[i].to_local(u);
        for (int a = 0; a < 3; ++a) s[D::kRbfCount + D::kOffsetDims + a] = local[a];
      }
    }
  }
  return g;
}

}  // namespace mmdesign
