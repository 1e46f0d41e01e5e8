#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mmdesign/data.hpp"
#include "mmdesign/rng.hpp"

namespace mmdesign {

using Mat3 = std::array<Vec3, 3>;  // row-major

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a);
/// Unit vector, or zero for a (near) zero input.
Vec3 unit_or_zero(const Vec3& a);
Vec3 matvec(const Mat3& m, const Vec3& v);
Mat3 matmul(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& m);
double determinant(const Mat3& m);

/// Proper rigid motion x -> R x + t.
struct RigidTransform {
  Mat3 rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 translation{0, 0, 0};

  Vec3 apply(const Vec3& x) const { return matvec(rotation, x) + translation; }
  RigidTransform inverse() const;
  /// Uniformly random rotation (unit quaternion) and a translation in [-scale, scale]^3.
  static RigidTransform random(Rng& rng, double translation_scale = 10.0);
};

BackboneRecord transform_record(const BackboneRecord& record, const RigidTransform& t);

/// Per-residue orthonormal basis; axes are the rows.
struct LocalFrame {
  Vec3 origin{0, 0, 0};
  Mat3 axes{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

  /// Components of a free vector in this frame.
  Vec3 to_local(const Vec3& v) const { return matvec(axes, v); }
};

/**
 * Gram-Schmidt frame at CA: e1 along C - CA, e2 the part of N - CA orthogonal
 * to e1, e3 = e1 x e2. Throws GeometryError for collinear atoms.
 */
LocalFrame local_frame(const Vec3& n, const Vec3& ca, const Vec3& c);

/// Signed dihedral angle in radians, in (-pi, pi].
double dihedral(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3);

/// exp(-((d - center) / width)^2)
double gaussian_rbf(double distance, double center, double width);

struct EdgeIndex {
  std::vector<int> src;  // neighbor j
  std::vector<int> dst;  // receiving node i
  std::size_t size() const { return src.size(); }
};

/**
 * k nearest CA neighbors for each unmasked residue (self excluded, ties broken
 * by index). Edges are grouped by receiving node. Throws GeometryError when
 * fewer than two residues are usable.
 */
EdgeIndex build_knn_graph(const BackboneRecord& record, int k = 30);

/// Blocks of the input featurization; disabled blocks are zero-filled so widths never change.
struct FeatureBlocks {
  bool dihedrals = true;
  bool orientations = true;
  bool distances = true;
  bool offsets = true;
  bool frame_copies = true;
};

struct FeaturizerOptions {
  int k = 30;
  FeatureBlocks blocks;
};

/// Input feature widths produced by featurize().
struct FeatureDims {
  static constexpr int kRbfCount = 16;
  static constexpr double kRbfMax = 20.0;
  static constexpr int kOffsetDims = 16;
  static constexpr int kNodeVectors = 4;  // forward, backward, CA->N, CA->C
  static constexpr int kNodeScalars = 9 + 3 * kNodeVectors;
  static constexpr int kEdgeVectors = 1;
  static constexpr int kEdgeScalars = kRbfCount + kOffsetDims + 3 * kEdgeVectors;
};

/**
 * Residue graph with scalar and vector channels.
 *
 * Vector channels use a [rows * 3, channels] layout: component a of channel c
 * for row i is at (3 * i + a) * channels + c.
 */
struct ProteinGraph {
  int num_nodes = 0;
  std::vector<double> node_scalars;  // [n, kNodeScalars]
  std::vector<double> node_vectors;  // [3n, kNodeVectors]
  EdgeIndex edges;
  std::vector<double> edge_scalars;  // [E, kEdgeScalars]
  std::vector<double> edge_vectors;  // [3E, kEdgeVectors]
  std::vector<LocalFrame> frames;    // identity for masked residues
  std::vector<std::uint8_t> mask;
};

/**
 * Node scalars: (cos, sin, valid) for phi, psi, omega followed by the node
 * vectors expressed in the residue frame. Node vectors: unit CA(i+1) - CA(i),
 * CA(i-1) - CA(i), N - CA, C - CA. Edge scalars: 16 Gaussian RBFs of the CA
 * distance on [0, 20] A, sinusoidal encoding of j - i, and the edge vector in
 * the receiving frame. Edge vector: unit CA(j) - CA(i).
 */
ProteinGraph featurize(const BackboneRecord& record, const FeaturizerOptions& options = {});

}  // namespace mmdesign
