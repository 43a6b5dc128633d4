#include <benchmark/benchmark.h>

#include "g2d/corpus.hpp"
#include "g2d/train_eval.hpp"

using namespace g2d;

namespace {

static void BM_Conv2dForward(benchmark::State& state) {
    Rng rng(1);
    const int ci = static_cast<int>(state.range(0));
    Tensor x = Tensor::uniform({ci, 16, 16}, -1.0, 1.0, rng);
    Tensor w = Tensor::uniform({8, ci, 3, 3}, -0.3, 0.3, rng);
    Tensor b = Tensor::uniform({8}, -0.1, 0.1, rng);
    for (auto _ : state) {
        Tensor y = conv2d(x, w, b, 1, 1);
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * 8 * ci * 9 * 16 * 16);
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(48);

static void BM_Conv2dBackward(benchmark::State& state) {
    Rng rng(1);
    const int ci = static_cast<int>(state.range(0));
    Tensor x = Tensor::uniform({ci, 16, 16}, -1.0, 1.0, rng, true);
    Tensor w = Tensor::uniform({8, ci, 3, 3}, -0.3, 0.3, rng, true);
    Tensor b = Tensor::uniform({8}, -0.1, 0.1, rng, true);
    for (auto _ : state) {
        backward(sum(conv2d(x, w, b, 1, 1)));
    }
    state.SetItemsProcessed(state.iterations() * 3 * 8 * ci * 9 * 16 * 16);
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(48);

static void BM_AttentionPool(benchmark::State& state) {
    ModelConfig mc;
    Model m = Model::init(mc);
    Rng rng(2);
    Tensor img = Tensor::uniform({1, 32, 32}, 0.0, 1.0, rng);
    DenseFeatureMap feat = m.encode_image(img).features;
    for (auto _ : state) {
        auto pooled = m.attention_pool(feat);
        benchmark::DoNotOptimize(pooled.pooled.data().data());
    }
}
BENCHMARK(BM_AttentionPool);

static void BM_BuildPseudoMask(benchmark::State& state) {
    ModelConfig mc;
    Model m = Model::init(mc);
    CorpusConfig cc;
    cc.n_records = 1;
    cc.seed = 3;
    Record rec = generate_record(cc, 0);
    Tensor img = image_to_tensor(rec, 32);
    auto pooled = m.attention_pool(m.encode_image(img).features);
    MaskOptions opts;
    for (auto _ : state) {
        PseudoMask mask = build_pseudo_mask(img, pooled.attention, opts);
        benchmark::DoNotOptimize(mask.bits.data());
    }
}
BENCHMARK(BM_BuildPseudoMask);

static void BM_TrainStep(benchmark::State& state) {
    CorpusConfig cc;
    cc.n_records = 8;
    cc.seed = 4;
    auto recs = generate_corpus(cc);
    RunConfig rc;
    rc.train.batch = 8;
    Model model = Model::init(rc.model);
    AdamState opt = AdamState::init(model.params());
    Rng rng(0);
    long step = 0;
    for (auto _ : state) {
        LossBundle b = train_step(recs, model, opt, rc.train, step++ % 100, 100, rng);
        benchmark::DoNotOptimize(b.total);
    }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
