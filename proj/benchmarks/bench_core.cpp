// Microbenchmarks for the hot paths: polynomial evaluation, the forward
// activations, loss gradients, and a dense-layer forward pass.

#include <benchmark/benchmark.h>

#include <random>

#include "smalt/losses.hpp"
#include "smalt/nn.hpp"

using namespace smalt;

namespace {

Vec logits(int k, unsigned seed = 1) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(-4.0, 4.0);
  Vec z(k);
  for (int i = 0; i < k; ++i) z[i] = dist(rng);
  return z;
}

void BM_eval_poly(benchmark::State& state) {
  TaylorOrder order(static_cast<int>(state.range(0)));
  double z = 0.73;
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval_poly(z, order).value);
  }
}
BENCHMARK(BM_eval_poly)->Arg(2)->Arg(10)->Arg(30);

void BM_softmax(benchmark::State& state) {
  Vec z = logits(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(softmax(z));
  }
}
BENCHMARK(BM_softmax)->Arg(10)->Arg(100);

void BM_taylor_softmax(benchmark::State& state) {
  Vec z = logits(static_cast<int>(state.range(0)));
  TaylorOrder order(static_cast<int>(state.range(1)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(taylor_softmax(z, order));
  }
}
BENCHMARK(BM_taylor_softmax)->Args({10, 2})->Args({10, 10})->Args({100, 2});

void BM_loss_grad(benchmark::State& state) {
  Vec z = logits(10);
  const VariantConfig variants[] = {
      VariantConfig::softmax(), VariantConfig::taylor(TaylorOrder(2)),
      VariantConfig::sm_taylor(TaylorOrder(2), 0.6)};
  const VariantConfig& v = variants[state.range(0)];
  for (auto _ : state) {
    benchmark::DoNotOptimize(ce_loss(z, 3, v).grad);
  }
}
BENCHMARK(BM_loss_grad)->Arg(0)->Arg(1)->Arg(2);

void BM_dense_forward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  Network net({1, 1, 784}, VariantConfig::softmax());
  net.add(make_dense(784, 256));
  net.add(make_relu());
  net.add(make_dense(256, 10));
  net.init(1);
  Mat x(batch, 784);
  x.setRandom();
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.forward(x, false));
  }
}
BENCHMARK(BM_dense_forward)->Arg(1)->Arg(32)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
