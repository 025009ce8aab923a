#include <benchmark/benchmark.h>

#include "skewprune/checkpoint.hpp"
#include "skewprune/graph.hpp"
#include "skewprune/model.hpp"
#include "skewprune/ops.hpp"
#include "skewprune/rng.hpp"
#include "skewprune/skew.hpp"
#include "skewprune/windowing.hpp"

using namespace skewprune;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

ModelConfig bench_config() {
  ModelConfig cfg;  // defaults: 32x32, depths {2,2}, heads {2,4}, dim 32
  cfg.seed = 7;
  return cfg;
}

void bm_matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  Tensor a = random_tensor({n, n}, 1);
  Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    Graph g;
    g.set_grad_enabled(false);
    Var out = ops::matmul(g.leaf(a, false), g.leaf(b, false));
    benchmark::DoNotOptimize(g.value(out).data.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(128)->Arg(256);

// Fused windowed attention at the shapes the default model actually runs:
// a 4-window slab of 16 tokens each, embedding width from the argument.
void bm_window_msa(benchmark::State& state) {
  const int64_t e = state.range(0);
  const int64_t heads = e / 16;
  const int64_t w = 4, t = w * w, nw = 4;
  Tensor x = random_tensor({nw * t, e}, 1);
  Tensor wq = random_tensor({e, e}, 2), wk = random_tensor({e, e}, 3),
         wv = random_tensor({e, e}, 4);
  Tensor bq = random_tensor({e}, 5), bk = random_tensor({e}, 6), bv = random_tensor({e}, 7);
  Tensor bias = random_tensor({(2 * w - 1) * (2 * w - 1), heads}, 8);
  const std::vector<int64_t> ridx = windowing::relative_position_index(w);
  for (auto _ : state) {
    Graph g;
    g.set_grad_enabled(false);
    Var out = ops::window_msa(g.leaf(x, false), g.leaf(wq, false), g.leaf(bq, false),
                              g.leaf(wk, false), g.leaf(bk, false), g.leaf(wv, false),
                              g.leaf(bv, false), g.leaf(bias, false), ridx, t, heads);
    benchmark::DoNotOptimize(g.value(out).data.data());
  }
  state.SetItemsProcessed(state.iterations() * nw * t);
}
BENCHMARK(bm_window_msa)->Arg(32)->Arg(64)->Arg(128);

void bm_skewness(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(11);
  NormVector v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(0.0, 2.0);
  for (auto _ : state) {
    double s = skewness(v);
    benchmark::DoNotOptimize(s);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(bm_skewness)->Arg(16)->Arg(256)->Arg(4096);

void bm_model_forward(benchmark::State& state) {
  const int64_t batch = state.range(0);
  const ModelConfig cfg = bench_config();
  const Model m = Model::init(cfg);
  Tensor images({batch, 3, cfg.image_size, cfg.image_size});
  Rng rng(3);
  for (auto& v : images.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  std::vector<TabularInput> tab(static_cast<size_t>(batch));
  for (auto& ti : tab) {
    ti.sex_id = rng.uniform_int(0, cfg.sex_vocab - 1);
    ti.age_bucket_id = rng.uniform_int(0, cfg.age_vocab - 1);
    ti.localization_id = rng.uniform_int(0, cfg.loc_vocab - 1);
  }
  for (auto _ : state) {
    Tensor logits = m.forward_logits(images, tab);
    benchmark::DoNotOptimize(logits.data.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(bm_model_forward)->Arg(1)->Arg(8);

void bm_checkpoint_roundtrip(benchmark::State& state) {
  const Model m = Model::init(bench_config());
  for (auto _ : state) {
    std::vector<uint8_t> bytes = serialize_model(m);
    Model back = deserialize_model(bytes);
    benchmark::DoNotOptimize(back.count_params());
  }
  state.SetBytesProcessed(state.iterations() *
                          static_cast<int64_t>(serialize_model(m).size()));
}
BENCHMARK(bm_checkpoint_roundtrip);

}  // namespace

BENCHMARK_MAIN();
