#include <benchmark/benchmark.h>

#include "normseg/lesionforge.hpp"
#include "normseg/lunglab.hpp"
#include "normseg/morphkit.hpp"
#include "normseg/normnet.hpp"
#include "normseg/phantom.hpp"
#include "normseg/postseg.hpp"

using namespace normseg;

namespace {

Volume3 noise_volume(std::uint32_t n) {
  Rng rng(1);
  std::vector<float> v(static_cast<std::size_t>(n) * n * n);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Volume3(Dims{n, n, n}, {}, std::move(v), true);
}

Mask3 noise_mask(std::uint32_t n, double p) {
  Rng rng(2);
  Mask3 m(Dims{n, n, n});
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.bernoulli(p));
  return m;
}

const lung::ThoraxCase& phantom_case() {
  static const lung::ThoraxCase c = [] {
    const auto hc = phantom::make_healthy_case(phantom::PhantomConfig{}, 1);
    return lung::remove_erroneous_edges(hu_window(hc.raw_hu), hc.segmented);
  }();
  return c;
}

void BM_GaussianFilter(benchmark::State& state) {
  const Volume3 v = noise_volume(static_cast<std::uint32_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(morph::gaussian_filter(v, 2.0));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(v.size()));
}
BENCHMARK(BM_GaussianFilter)->Arg(32)->Arg(64);

void BM_MeanFilter(benchmark::State& state) {
  const Volume3 v = noise_volume(static_cast<std::uint32_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(morph::mean_filter(v, 9));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(v.size()));
}
BENCHMARK(BM_MeanFilter)->Arg(32)->Arg(64);

void BM_Dilate(benchmark::State& state) {
  const Mask3 m = noise_mask(64, 0.01);
  for (auto _ : state) benchmark::DoNotOptimize(morph::dilate(m, {1}, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_Dilate)->Arg(1)->Arg(3);

void BM_ConnectedComponents(benchmark::State& state) {
  const Mask3 m = noise_mask(64, 0.3);
  for (auto _ : state) benchmark::DoNotOptimize(morph::connected_components(m, morph::Connectivity::k26));
}
BENCHMARK(BM_ConnectedComponents);

net::NetConfig bench_net() {
  net::NetConfig c;
  c.levels = 3;
  c.base_channels = 8;
  c.convs_per_level = 1;
  c.patch = {24, 24, 24};
  return c;
}

void BM_NetForward(benchmark::State& state) {
  const auto n = net::TinyNet<float>::initialized(bench_net(), 1);
  const auto s = static_cast<std::uint32_t>(state.range(0));
  const auto x = net::to_tensor<float>(noise_volume(s));
  for (auto _ : state) benchmark::DoNotOptimize(net::forward(n, x));
}
BENCHMARK(BM_NetForward)->Arg(24)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_NetBackward(benchmark::State& state) {
  const auto n = net::TinyNet<float>::initialized(bench_net(), 1);
  const Volume3 v = noise_volume(24);
  const auto x = net::to_tensor<float>(v);
  std::vector<std::uint8_t> gt(v.size());
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = v[i] > 0.5f;
  for (auto _ : state) {
    auto g = n.zero_gradients();
    benchmark::DoNotOptimize(net::backward<float>(n, x, gt, {}, g));
  }
}
BENCHMARK(BM_NetBackward)->Unit(benchmark::kMillisecond);

void BM_GeneratePair(benchmark::State& state) {
  const auto& c = phantom_case();
  forge::GeneratorConfig g;
  g.ref_mask_volume = 2.0 * static_cast<double>(c.clean_lung_mask.count());
  g.small_axes = {2.0, 5.0};
  g.medium_axes = {5.0, 12.0};
  g.large_axes = {12.0, 20.0};
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(forge::generate_pair(c, g, 0.33, forge::GtMode::kTissues, seed++));
}
BENCHMARK(BM_GeneratePair)->Unit(benchmark::kMillisecond);

void BM_Postprocess(benchmark::State& state) {
  const auto& c = phantom_case();
  const Mask3 healthy = mask_and(noise_mask(64, 0.7), c.clean_lung_mask);
  for (auto _ : state) benchmark::DoNotOptimize(post::segment(c.thorax, c.clean_lung_mask, healthy, {}));
}
BENCHMARK(BM_Postprocess)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
