#include <benchmark/benchmark.h>

#include "hetmeta/maml.hpp"
#include "hetmeta/nn.hpp"
#include "hetmeta/ops.hpp"
#include "hetmeta/tape.hpp"
#include "hetmeta/tasks.hpp"

using namespace hetmeta;

namespace {

nn::ModelDims bench_dims() {
    nn::ModelDims d;
    d.modality_count = 2;
    d.modality_dims = {16, 12};
    d.f1 = 32;
    d.f2 = 16;
    d.f3 = 8;
    d.n_way = 5;
    return d;
}

tasks::TaskInstance bench_task() {
    tasks::HTDSpec spec;
    spec.modality_count = 2;
    spec.modality_dims = {16, 12};
    spec.task_types = {{1, 0}, {0, 1}, {1, 1}};
    spec.n_way = 5;
    spec.k_shot = 1;
    spec.k_query = 12;
    Rng bank_rng(1);
    static const tasks::ClassBank bank =
        tasks::make_class_bank(2, spec.modality_dims, 40, 1.0, bank_rng);
    Rng rng(2);
    return tasks::sample_synthetic_task(spec, bank, rng, false, 0.25, 1e-1);
}

void BM_MatMul(benchmark::State& state) {
    Rng rng(3);
    const auto n = static_cast<std::size_t>(state.range(0));
    Tensor a = Tensor::uniform({n, n}, rng, -1, 1);
    Tensor b = Tensor::uniform({n, n}, rng, -1, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
}
BENCHMARK(BM_MatMul)->Arg(16)->Arg(64);

void BM_ForwardBatched(benchmark::State& state) {
    maml::HetMamlModel model(bench_dims(), 5);
    const tasks::TaskInstance task = bench_task();
    const ConfigVector c = tasks::compute_config_vector(task.support, 1e-1);
    const maml::PreparedTask prep = model.prepare(task, c);
    const ParamLookup look(model.params());
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.logits(prep, true, look));
    }
}
BENCHMARK(BM_ForwardBatched);

void BM_ForwardBackward(benchmark::State& state) {
    maml::HetMamlModel model(bench_dims(), 5);
    const tasks::TaskInstance task = bench_task();
    const ConfigVector c = tasks::compute_config_vector(task.support, 1e-1);
    const maml::PreparedTask prep = model.prepare(task, c);
    for (auto _ : state) {
        Tape tape;
        for (const auto& e : model.params().entries()) tape.watch(e.tensor);
        Tensor loss = cross_entropy_mean(model.logits(prep, true, ParamLookup(model.params())),
                                         prep.query_labels);
        benchmark::DoNotOptimize(tape.gradient(loss));
    }
}
BENCHMARK(BM_ForwardBackward);

void BM_InnerAdapt(benchmark::State& state) {
    maml::HetMamlModel model(bench_dims(), 5);
    const tasks::TaskInstance task = bench_task();
    const ConfigVector c = tasks::compute_config_vector(task.support, 1e-1);
    const maml::PreparedTask prep = model.prepare(task, c);
    maml::TrainConfig cfg;
    cfg.inner_steps = static_cast<std::size_t>(state.range(0));
    cfg.second_order = false;
    for (auto _ : state) {
        benchmark::DoNotOptimize(maml::inner_adapt(model, prep, cfg));
    }
}
BENCHMARK(BM_InnerAdapt)->Arg(1)->Arg(10);

void BM_OuterStepSecondOrder(benchmark::State& state) {
    maml::HetMamlModel model(bench_dims(), 5);
    std::vector<tasks::TaskInstance> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(bench_task());
    maml::TrainConfig cfg;
    cfg.inner_steps = 10;
    cfg.second_order = true;
    cfg.beta = 0.0; // measure the gradient computation, keep the model fixed
    for (auto _ : state) {
        benchmark::DoNotOptimize(maml::batch_gradients(model, batch, cfg, 3));
    }
}
BENCHMARK(BM_OuterStepSecondOrder);

} // namespace

BENCHMARK_MAIN();
