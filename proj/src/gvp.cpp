#include "mmdesign/gvp.hpp"

#include <algorithm>

#include "mmdesign/errors.hpp"

namespace mmdesign::gvp {

using nn::Init;

template <typename T>
GvpLayer<T>::GvpLayer(nn::ParamStore<T>& store, const std::string& prefix, GvpDims dims, GvpActivation act, Rng& rng)
    : dims_(dims), act_(act) {
  if (dims_.hidden_vectors == 0) dims_.hidden_vectors = std::max(dims_.vectors_in, dims_.vectors_out);
  const int h = dims_.hidden_vectors;
  wh = store.add(prefix + ".wh", h, dims_.vectors_in, Init::Orthogonal, rng);
  ws = store.add(prefix + ".ws", dims_.scalars_out, dims_.scalars_in + h, Init::FanInUniform, rng);
  bs = store.add(prefix + ".bs", 1, dims_.scalars_out, Init::Zeros, rng);
  wv = store.add(prefix + ".wv", dims_.vectors_out, h, Init::Orthogonal, rng);
  if (act_.vector_gate) {
    wg = store.add(prefix + ".wg", dims_.vectors_out, dims_.scalars_out, Init::FanInUniform, rng);
    bg = store.add(prefix + ".bg", 1, dims_.vectors_out, Init::Zeros, rng);
  }
}

template <typename T>
ScalarVector<T> GvpLayer<T>::operator()(const ScalarVector<T>& x) const {
  if (x.s.cols() != dims_.scalars_in || x.v.cols() != dims_.vectors_in || x.v.rows() != 3 * x.s.rows()) {
    throw ShapeError("gvp layer: input shape does not match weights");
  }
  const Tensor<T> vh = ag::linear(x.v, wh, Tensor<T>{});
  const Tensor<T> vn = ag::sqrt(ag::add_scalar(ag::vec_sqnorm(vh), T(1e-8)));
  const Tensor<T> s_pre = ag::linear(ag::concat_cols<T>({x.s, vn}), ws, bs);
  Tensor<T> v_out = ag::linear(vh, wv, Tensor<T>{});
  if (act_.vector_gate) {
    const Tensor<T> gate = ag::sigmoid(ag::linear(s_pre, wg, bg));
    v_out = ag::mul(v_out, ag::repeat_rows(gate, 3));
  }
  return {act_.scalar_relu ? ag::relu(s_pre) : s_pre, v_out};
}

template <typename T>
Tensor<T> vector_norm(const Tensor<T>& v, T eps) {
  const Tensor<T> mean_sq = ag::row_mean(ag::vec_sqnorm(v));
  const Tensor<T> inv = ag::rsqrt(ag::add_scalar(mean_sq, eps));
  return ag::mul_col(v, ag::repeat_rows(inv, 3));
}

template <typename T>
GraphInput<T> pack_graphs(const std::vector<ProteinGraph>& graphs, int slots) {
  using D = FeatureDims;
  GraphInput<T> g;
  std::vector<int> offset;
  for (const auto& pg : graphs) {
    if (slots > 0 && pg.num_nodes > slots) throw ShapeError("pack_graphs: graph larger than its slot count");
    offset.push_back(g.num_nodes);
    g.num_nodes += slots > 0 ? slots : pg.num_nodes;
  }
  const int n = g.num_nodes;
  std::vector<T> ns(static_cast<std::size_t>(n) * D::kNodeScalars, T(0));
  std::vector<T> nv(static_cast<std::size_t>(3) * n * D::kNodeVectors, T(0));
  std::vector<T> es, ev;
  g.frames.assign(static_cast<std::size_t>(n) * 9, T(0));
  for (int i = 0; i < n; ++i) {
    g.frames[9 * i] = g.frames[9 * i + 4] = g.frames[9 * i + 8] = T(1);
  }
  g.mask.assign(n, 0);
  for (std::size_t k = 0; k < graphs.size(); ++k) {
    const auto& pg = graphs[k];
    const int base = offset[k];
    std::transform(pg.node_scalars.begin(), pg.node_scalars.end(),
                   ns.begin() + static_cast<std::size_t>(base) * D::kNodeScalars, [](double x) { return T(x); });
    std::transform(pg.node_vectors.begin(), pg.node_vectors.end(),
                   nv.begin() + static_cast<std::size_t>(3) * base * D::kNodeVectors, [](double x) { return T(x); });
    for (const double x : pg.edge_scalars) es.push_back(T(x));
    for (const double x : pg.edge_vectors) ev.push_back(T(x));
    for (std::size_t e = 0; e < pg.edges.size(); ++e) {
      g.src.push_back(base + pg.edges.src[e]);
      g.dst.push_back(base + pg.edges.dst[e]);
    }
    for (int i = 0; i < pg.num_nodes; ++i) {
      g.mask[base + i] = pg.mask[i];
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          g.frames[static_cast<std::size_t>(base + i) * 9 + 3 * a + b] = T(pg.frames[i].axes[a][b]);
        }
      }
    }
  }
  const int edges = static_cast<int>(g.src.size());
  g.node_s = Tensor<T>(n, D::kNodeScalars, std::move(ns));
  g.node_v = Tensor<T>(3 * n, D::kNodeVectors, std::move(nv));
  g.edge_s = Tensor<T>(edges, D::kEdgeScalars, std::move(es));
  g.edge_v = Tensor<T>(3 * edges, D::kEdgeVectors, std::move(ev));
  return g;
}

template <typename T>
GvpConvEncoder<T>::GvpConvEncoder(nn::ParamStore<T>& store, const std::string& prefix, const GvpConvConfig& config,
                                  Rng& rng)
    : config_(config) {
  using D = FeatureDims;
  const int hs = config.node_scalars, hv = config.node_vectors;
  const int es = config.edge_scalars, ev = config.edge_vectors;
  const GvpActivation none{false, false};
  const GvpActivation full{true, true};
  node_in = GvpLayer<T>(store, prefix + ".node_in", {D::kNodeScalars, D::kNodeVectors, hs, hv}, none, rng);
  edge_in = GvpLayer<T>(store, prefix + ".edge_in", {D::kEdgeScalars, D::kEdgeVectors, es, ev}, none, rng);
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = prefix + ".layers." + std::to_string(l);
    Round r;
    r.message_in = GvpLayer<T>(store, p + ".message_in", {2 * hs + es, 2 * hv + ev, hs, hv}, full, rng);
    r.message_out = GvpLayer<T>(store, p + ".message_out", {hs, hv, hs, hv}, none, rng);
    r.norm1 = nn::LayerNorm<T>(store, p + ".norm1", hs, rng);
    r.ff_in = GvpLayer<T>(store, p + ".ff_in", {hs, hv, 2 * hs, 2 * hv}, full, rng);
    r.ff_out = GvpLayer<T>(store, p + ".ff_out", {2 * hs, 2 * hv, hs, hv}, none, rng);
    r.norm2 = nn::LayerNorm<T>(store, p + ".norm2", hs, rng);
    rounds.push_back(std::move(r));
  }
  readout = nn::Linear<T>(store, prefix + ".readout", hs + 3 * hv, config.out_dim, true, Init::FanInUniform, rng);
}

template <typename T>
ScalarVector<T> GvpConvEncoder<T>::round(const Round& r, const ScalarVector<T>& h, const ScalarVector<T>& edges,
                                         const GraphInput<T>& graph, bool train, Rng* rng,
                                         std::vector<Tensor<T>>* trace) const {
  const bool drop = train && config_.dropout > 0.0 && rng;
  auto residual = [&](const ScalarVector<T>& base, const ScalarVector<T>& update, const nn::LayerNorm<T>& norm) {
    Tensor<T> ds = drop ? ag::dropout(update.s, config_.dropout, *rng) : update.s;
    Tensor<T> dv = drop ? ag::vector_dropout(update.v, config_.dropout, *rng) : update.v;
    return ScalarVector<T>{norm(ag::add(base.s, ds)), vector_norm(ag::add(base.v, dv))};
  };

  ScalarVector<T> aggregated;
  if (graph.src.empty()) {
    aggregated = {Tensor<T>::zeros(h.s.rows(), h.s.cols()), Tensor<T>::zeros(h.v.rows(), h.v.cols())};
  } else {
    const ScalarVector<T> msg_in{
        ag::concat_cols<T>({ag::gather_rows(h.s, graph.dst), edges.s, ag::gather_rows(h.s, graph.src)}),
        ag::concat_cols<T>({ag::gather_rows(h.v, graph.dst, 3), edges.v, ag::gather_rows(h.v, graph.src, 3)})};
    const ScalarVector<T> m1 = r.message_in(msg_in);
    const ScalarVector<T> m2 = r.message_out(m1);
    if (trace) {
      trace->push_back(m1.v);
      trace->push_back(m2.v);
    }
    aggregated = {ag::scatter_mean_rows(m2.s, graph.dst, graph.num_nodes),
                  ag::scatter_mean_rows(m2.v, graph.dst, graph.num_nodes, 3)};
  }
  const ScalarVector<T> h1 = residual(h, aggregated, r.norm1);
  const ScalarVector<T> f = r.ff_out(r.ff_in(h1));
  const ScalarVector<T> h2 = residual(h1, f, r.norm2);
  if (trace) {
    trace->push_back(h1.v);
    trace->push_back(f.v);
    trace->push_back(h2.v);
  }
  return h2;
}

template <typename T>
Tensor<T> GvpConvEncoder<T>::encode(const GraphInput<T>& graph, bool train, Rng* rng,
                                    std::vector<Tensor<T>>* trace) const {
  ScalarVector<T> h = node_in({graph.node_s, graph.node_v});
  const ScalarVector<T> e = edge_in({graph.edge_s, graph.edge_v});
  if (trace) {
    trace->push_back(h.v);
    trace->push_back(e.v);
  }
  for (const auto& r : rounds) h = round(r, h, e, graph, train, rng, trace);
  const Tensor<T> local = ag::frame_project(h.v, graph.frames);
  return readout(ag::concat_cols<T>({h.s, local}));
}

template class GvpLayer<float>;
template class GvpLayer<double>;
template class GvpConvEncoder<float>;
template class GvpConvEncoder<double>;
template GraphInput<float> pack_graphs<float>(const std::vector<ProteinGraph>&, int);
template GraphInput<double> pack_graphs<double>(const std::vector<ProteinGraph>&, int);
template Tensor<float> vector_norm(const Tensor<float>&, float);
template Tensor<double> vector_norm(const Tensor<double>&, double);

}  // namespace mmdesign::gvp
