// Throughput comparison of the OpenMP kernels against their serial reference
// implementations. Run with --benchmark_filter=conv to narrow down.

#include <benchmark/benchmark.h>

#include "voxelsim/kernels.hpp"
#include "voxelsim/rng.hpp"

using namespace voxelsim;

namespace {

struct ConvFixture {
    kernels::ConvDims dims;
    std::vector<double> in, w, b, out;
    ConvFixture(int n, int cin, int cout) {
        dims = {n, n, n / 2, cin, cout, 3};
        Rng rng(42);
        in.resize(size_t(dims.voxels()) * cin);
        w.resize(size_t(dims.weight_count()));
        b.resize(size_t(cout));
        out.resize(size_t(dims.voxels()) * cout);
        for (auto& x : in) x = rng.normal();
        for (auto& x : w) x = rng.normal();
        for (auto& x : b) x = rng.normal();
    }
};

void bm_conv3d_omp(benchmark::State& state) {
    ConvFixture f(int(state.range(0)), int(state.range(1)), int(state.range(1)));
    for (auto _ : state) {
        kernels::conv3d_forward(f.in.data(), f.w.data(), f.b.data(), f.out.data(), f.dims);
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * f.dims.voxels());
}

void bm_conv3d_serial(benchmark::State& state) {
    ConvFixture f(int(state.range(0)), int(state.range(1)), int(state.range(1)));
    for (auto _ : state) {
        reference::conv3d_forward(f.in.data(), f.w.data(), f.b.data(), f.out.data(), f.dims);
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * f.dims.voxels());
}

void bm_resample_omp(benchmark::State& state) {
    const int n = int(state.range(0));
    const Shape3 in_s{n, n, n / 2}, out_s{2 * n, 2 * n, n};
    Rng rng(7);
    std::vector<double> in(size_t(in_s.voxels())), out(size_t(out_s.voxels()));
    for (auto& x : in) x = rng.uniform();
    for (auto _ : state) {
        kernels::resample_trilinear(in.data(), in_s, out.data(), out_s);
        benchmark::ClobberMemory();
    }
}

void bm_resample_serial(benchmark::State& state) {
    const int n = int(state.range(0));
    const Shape3 in_s{n, n, n / 2}, out_s{2 * n, 2 * n, n};
    Rng rng(7);
    std::vector<double> in(size_t(in_s.voxels())), out(size_t(out_s.voxels()));
    for (auto& x : in) x = rng.uniform();
    for (auto _ : state) {
        reference::resample_trilinear(in.data(), in_s, out.data(), out_s);
        benchmark::ClobberMemory();
    }
}

void bm_edt_omp(benchmark::State& state) {
    const int n = int(state.range(0));
    const Shape3 s{n, n, n};
    Rng rng(3);
    std::vector<uint8_t> feat(size_t(s.voxels()));
    for (auto& x : feat) x = rng.uniform() < 0.01 ? 1 : 0;
    feat[0] = 1;
    std::vector<double> d2(size_t(s.voxels()));
    const double spacing[3] = {1.0, 1.0, 2.5};
    for (auto _ : state) {
        kernels::edt_squared(feat.data(), d2.data(), s, spacing);
        benchmark::ClobberMemory();
    }
}

void bm_edt_serial(benchmark::State& state) {
    const int n = int(state.range(0));
    const Shape3 s{n, n, n};
    Rng rng(3);
    std::vector<uint8_t> feat(size_t(s.voxels()));
    for (auto& x : feat) x = rng.uniform() < 0.01 ? 1 : 0;
    feat[0] = 1;
    std::vector<double> d2(size_t(s.voxels()));
    const double spacing[3] = {1.0, 1.0, 2.5};
    for (auto _ : state) {
        reference::edt_squared(feat.data(), d2.data(), s, spacing);
        benchmark::ClobberMemory();
    }
}

}  // namespace

BENCHMARK(bm_conv3d_omp)->Args({32, 8})->Args({32, 16})->Args({64, 16})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(bm_conv3d_serial)->Args({32, 8})->Args({32, 16})->Args({64, 16})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(bm_resample_omp)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_resample_serial)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_edt_omp)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_edt_serial)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
