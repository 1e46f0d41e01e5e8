// Serial reference vs OpenMP kernels at model-relevant shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "mmdesign/kernels.hpp"
#include "mmdesign/rng.hpp"

using namespace mmdesign;
using kernels::Backend;

namespace {

std::vector<float> random_floats(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

Backend backend_of(const benchmark::State& state) { return state.range(0) == 0 ? Backend::Serial : Backend::Parallel; }

// Linear layer forward: [rows, in] x [out, in]^T
void BM_GemmNT(benchmark::State& state) {
  const int m = static_cast<int>(state.range(1)), n = 512, k = 512;
  Rng rng(1);
  const auto a = random_floats(static_cast<std::size_t>(m) * k, rng), b = random_floats(static_cast<std::size_t>(n) * k, rng);
  std::vector<float> c(static_cast<std::size_t>(m) * n);
  for (auto _ : state) {
    kernels::gemm_nt(backend_of(state), m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(m) * n * k);
}
BENCHMARK(BM_GemmNT)->ArgsProduct({{0, 1}, {256, 1024}})->Unit(benchmark::kMillisecond);

// Weight gradient: [in, rows]^T-style accumulation
void BM_GemmTN(benchmark::State& state) {
  const int m = 512, n = 512, k = static_cast<int>(state.range(1));
  Rng rng(2);
  const auto a = random_floats(static_cast<std::size_t>(k) * m, rng), b = random_floats(static_cast<std::size_t>(k) * n, rng);
  std::vector<float> c(static_cast<std::size_t>(m) * n);
  for (auto _ : state) {
    kernels::gemm_tn(backend_of(state), m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_GemmTN)->ArgsProduct({{0, 1}, {256, 1024}})->Unit(benchmark::kMillisecond);

void BM_AttentionForward(benchmark::State& state) {
  kernels::AttentionShape s;
  s.batch = 5;
  s.len_q = s.len_k = static_cast<int>(state.range(1));
  s.heads = 8;
  s.width = 512;
  s.causal = true;
  Rng rng(3);
  const std::size_t rows = static_cast<std::size_t>(s.batch) * s.len_q;
  const auto q = random_floats(rows * s.width, rng), k = random_floats(rows * s.width, rng),
             v = random_floats(rows * s.width, rng);
  std::vector<std::uint8_t> mask(rows, 1);
  std::vector<float> probs(s.prob_size()), out(rows * s.width);
  for (auto _ : state) {
    kernels::attention_forward<float>(backend_of(state), s, q.data(), k.data(), v.data(), mask.data(), nullptr,
                                      probs.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_AttentionForward)->ArgsProduct({{0, 1}, {128, 256}})->Unit(benchmark::kMillisecond);

void BM_AttentionBackward(benchmark::State& state) {
  kernels::AttentionShape s;
  s.batch = 5;
  s.len_q = s.len_k = static_cast<int>(state.range(1));
  s.heads = 8;
  s.width = 512;
  Rng rng(4);
  const std::size_t rows = static_cast<std::size_t>(s.batch) * s.len_q;
  const auto q = random_floats(rows * s.width, rng), k = random_floats(rows * s.width, rng),
             v = random_floats(rows * s.width, rng), dout = random_floats(rows * s.width, rng);
  std::vector<float> probs(s.prob_size()), out(rows * s.width), dq(rows * s.width), dk(rows * s.width),
      dv(rows * s.width);
  kernels::attention_forward<float>(Backend::Serial, s, q.data(), k.data(), v.data(), nullptr, nullptr, probs.data(),
                                    out.data());
  for (auto _ : state) {
    kernels::attention_backward<float>(backend_of(state), s, q.data(), k.data(), v.data(), probs.data(), nullptr,
                                       dout.data(), dq.data(), dk.data(), dv.data());
    benchmark::DoNotOptimize(dq.data());
  }
}
BENCHMARK(BM_AttentionBackward)->ArgsProduct({{0, 1}, {128, 256}})->Unit(benchmark::kMillisecond);

// k = 30 neighbors on chains of CATH-like length
void BM_Knn(benchmark::State& state) {
  const int n = static_cast<int>(state.range(1));
  Rng rng(5);
  std::vector<double> pts(static_cast<std::size_t>(n) * 3);
  for (auto& x : pts) x = rng.uniform(-30, 30);
  std::vector<std::uint8_t> mask(n, 1);
  std::vector<int> src, dst;
  for (auto _ : state) {
    kernels::knn(backend_of(state), n, pts.data(), mask.data(), 30, src, dst);
    benchmark::DoNotOptimize(src.data());
  }
}
BENCHMARK(BM_Knn)->ArgsProduct({{0, 1}, {256, 500}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
