#include <benchmark/benchmark.h>

#include "spikelab/energy.hpp"
#include "spikelab/freq.hpp"
#include "spikelab/model.hpp"
#include "spikelab/neuron.hpp"
#include "spikelab/rng.hpp"
#include "spikelab/tensor.hpp"

namespace {

using namespace spikelab;

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
}

void BM_Conv2d(benchmark::State& state) {
    const std::size_t c = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const Tensor x = random_tensor(rng, {4, c, 16, 16});
    const Tensor w = random_tensor(rng, {c, c, 3, 3});
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv2d(x, w, 1, 1));
    }
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(32);

void BM_DepthwiseConv(benchmark::State& state) {
    Rng rng(2);
    const Tensor x = random_tensor(rng, {4, 32, 16, 16});
    const Tensor w = random_tensor(rng, {32, 3, 3});
    for (auto _ : state) {
        benchmark::DoNotOptimize(depthwise_conv2d(x, w));
    }
}
BENCHMARK(BM_DepthwiseConv);

void BM_Matmul(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(3);
    const Tensor a = random_tensor(rng, {n, n});
    const Tensor b = random_tensor(rng, {n, n});
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128);

void BM_LifRunSequence(benchmark::State& state) {
    Rng rng(4);
    NeuronParams p;
    p.beta = 0.25;
    p.v_th = 0.5;
    const Tensor currents = random_tensor(rng, {16, 4096});
    for (auto _ : state) {
        benchmark::DoNotOptimize(run_sequence(p, currents));
    }
}
BENCHMARK(BM_LifRunSequence);

void BM_Dft(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(5);
    std::vector<double> signal(n);
    for (double& v : signal) v = rng.normal();
    for (auto _ : state) {
        benchmark::DoNotOptimize(dft(signal, 1000.0));
    }
}
BENCHMARK(BM_Dft)->Arg(1000)->Arg(4000);

void BM_ThreeSine(benchmark::State& state) {
    const NeuronParams p = three_sine_default_neuron();
    std::uint64_t seed = 1;
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            three_sine_experiment(ActivationKind::LIF, p, seed++, 1000.0, 1.0));
    }
}
BENCHMARK(BM_ThreeSine);

Network toy_network() {
    ArchSpec spec;
    spec.stages = {
        {PatchEmbedVariant::Orig, TokenMixKind::DWC, 3, 1, 8},
        {PatchEmbedVariant::Max, TokenMixKind::SSA, 3, 1, 16},
    };
    spec.timesteps = 2;
    spec.num_classes = 2;
    spec.input_channels = 1;
    spec.input_height = 16;
    spec.input_width = 16;
    spec.neuron.beta = 0.25;
    spec.neuron.v_th = 0.5;
    return build(spec, 7);
}

void BM_ToyForward(benchmark::State& state) {
    Network net = toy_network();
    Rng rng(6);
    Tensor img({4, 1, 16, 16});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
    for (auto _ : state) {
        benchmark::DoNotOptimize(net.forward(img));
    }
}
BENCHMARK(BM_ToyForward);

void BM_Instrument(benchmark::State& state) {
    Network net = toy_network();
    Rng rng(7);
    Tensor img({4, 1, 16, 16});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
    for (auto _ : state) {
        benchmark::DoNotOptimize(instrument(net, img));
    }
}
BENCHMARK(BM_Instrument);

}  // namespace

int main(int argc, char** argv) {
    benchmark::Initialize(&argc, argv);
    benchmark::RunSpecifiedBenchmarks();
    return 0;
}
