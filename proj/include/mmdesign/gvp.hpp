#pragma once

#include <string>
#include <vector>

#include "mmdesign/geometry.hpp"
#include "mmdesign/nn.hpp"

namespace mmdesign::gvp {

using ag::Tensor;

/// Paired invariant scalars [n, ds] and equivariant vectors [3n, dv].
template <typename T>
struct ScalarVector {
  Tensor<T> s;
  Tensor<T> v;
  int rows() const { return s.rows(); }
};

struct GvpDims {
  int scalars_in = 0;
  int vectors_in = 0;
  int scalars_out = 0;
  int vectors_out = 0;
  int hidden_vectors = 0;  // 0 -> max(vectors_in, vectors_out)
};

struct GvpActivation {
  bool scalar_relu = true;
  bool vector_gate = true;
};

/**
 * Geometric vector perceptron.
 *
 *   Vh = V Wh^T                      (channel mixing, no bias)
 *   s' = relu(Ws [s ; |Vh|] + bs)
 *   V' = sigmoid(Wg s'_pre + bg) * (Vh Wv^T)
 *
 * The vector path is linear in V apart from the invariant gate, so V' rotates
 * with V.
 */
template <typename T>
class GvpLayer {
 public:
  GvpLayer() = default;
  GvpLayer(nn::ParamStore<T>& store, const std::string& prefix, GvpDims dims, GvpActivation act, Rng& rng);

  ScalarVector<T> operator()(const ScalarVector<T>& x) const;
  const GvpDims& dims() const { return dims_; }
  const GvpActivation& activation() const { return act_; }

  Tensor<T> wh, ws, bs, wv, wg, bg;

 private:
  GvpDims dims_;
  GvpActivation act_;
};

struct GvpConvConfig {
  int layers = 4;
  double dropout = 0.1;
  int node_scalars = 1024;
  int node_vectors = 256;
  int edge_scalars = 32;
  int edge_vectors = 1;
  int out_dim = 512;
};

/// Featurized graphs packed into one disjoint graph of constant tensors.
template <typename T>
struct GraphInput {
  int num_nodes = 0;
  Tensor<T> node_s;  // [N, kNodeScalars]
  Tensor<T> node_v;  // [3N, kNodeVectors]
  Tensor<T> edge_s;  // [E, kEdgeScalars]
  Tensor<T> edge_v;  // [3E, kEdgeVectors]
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<T> frames;  // [N, 9]
  std::vector<std::uint8_t> mask;
};

/**
 * Packs graphs so graph g occupies node slots [g * slots, g * slots + n_g);
 * unused slots are isolated zero nodes. slots = 0 packs densely.
 */
template <typename T>
GraphInput<T> pack_graphs(const std::vector<ProteinGraph>& graphs, int slots = 0);

/**
 * The structural module: input embedding GVPs, `layers` rounds of message
 * passing, and an invariant readout.
 *
 * Per round: message = GVP(GVP([node_i ; edge_ij ; node_j])) for each in-edge
 * j -> i, averaged over in-edges, added back with dropout and normalized
 * (LayerNorm on scalars, RMS over vector channels), then a two-GVP
 * feed-forward block with the same residual pattern. The readout expresses
 * the vector channels in each residue's local frame and maps
 * [scalars ; frame components] to out_dim.
 */
template <typename T>
class GvpConvEncoder {
 public:
  struct Round {
    GvpLayer<T> message_in, message_out, ff_in, ff_out;
    nn::LayerNorm<T> norm1, norm2;
  };

  GvpConvEncoder() = default;
  GvpConvEncoder(nn::ParamStore<T>& store, const std::string& prefix, const GvpConvConfig& config, Rng& rng);

  /**
   * Z_struc [N, out_dim]. With train set, dropout draws from rng. When
   * vector_trace is given every intermediate vector tensor (before frame
   * projection) is appended to it.
   */
  Tensor<T> encode(const GraphInput<T>& graph, bool train, Rng* rng,
                   std::vector<Tensor<T>>* vector_trace = nullptr) const;

  /// Runs one round; exposed for tests.
  ScalarVector<T> round(const Round& r, const ScalarVector<T>& h, const ScalarVector<T>& edges,
                        const GraphInput<T>& graph, bool train, Rng* rng,
                        std::vector<Tensor<T>>* vector_trace = nullptr) const;

  const GvpConvConfig& config() const { return config_; }

  GvpLayer<T> node_in, edge_in;
  std::vector<Round> rounds;
  nn::Linear<T> readout;

 private:
  GvpConvConfig config_;
};

/// Vector-channel normalization: V / sqrt(mean_c |v_c|^2 + eps).
template <typename T>
Tensor<T> vector_norm(const Tensor<T>& v, T eps = T(1e-5));

}  // namespace mmdesign::gvp
