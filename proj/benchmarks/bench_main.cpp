#include <benchmark/benchmark.h>

#include <vector>

#include "oavl/caption_engine.hpp"
#include "oavl/evaluation.hpp"
#include "oavl/model.hpp"
#include "oavl/nn/graph.hpp"
#include "oavl/synth_data.hpp"
#include "oavl/training.hpp"

using namespace oavl;

namespace {

nn::Tensor<float> noise(nn::Shape s, std::uint64_t seed) {
  Rng rng(seed, 0);
  nn::Tensor<float> t(std::move(s));
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const auto x = noise({8, c, 32, 32}, 1);
  const auto k = noise({c * 2, c, 3, 3}, 2);
  for (auto _ : state) {
    nn::Graph<float> g;
    const auto xv = g.constant(x);
    const auto kv = g.leaf(k);
    const auto out = g.sum(g.conv2d(xv, kv, 1, 1));
    g.backward(out);
    benchmark::DoNotOptimize(g.grad(kv).data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

struct Batch {
  nn::Tensor<float> images;
  model::TokenBatch pos;
  model::TokenBatch neg;
};

Batch make_batch(int n) {
  Rng rng(3, 0);
  synth::SynthConfig sc;
  std::vector<synth::SynthImage> imgs;
  std::vector<const std::vector<float>*> ptrs;
  std::vector<captions::TokenSequence> pos;
  std::vector<captions::TokenSequence> neg;
  for (int i = 0; i < n; ++i) {
    const auto r = scores::sample_record(rng, "b");
    imgs.push_back(synth::render_image(r, sc, static_cast<std::uint64_t>(i)));
    pos.push_back(captions::tokenize(captions::render_caption(r, captions::TemplateKind::Location, true).text,
                                     captions::Vocabulary::grammar()));
    neg.push_back(captions::tokenize(
        captions::render_caption(scores::perturb_negative(r, rng), captions::TemplateKind::Location, true).text,
        captions::Vocabulary::grammar()));
  }
  for (const auto& im : imgs) ptrs.push_back(&im.pixels);
  return {model::image_batch<float>(ptrs, sc.height, sc.width), model::TokenBatch::from(pos),
          model::TokenBatch::from(neg)};
}

void BM_EncodeImages(benchmark::State& state) {
  model::DualEncoder<float> m(model::ModelConfig{}, 1);
  const auto b = make_batch(32);
  for (auto _ : state) benchmark::DoNotOptimize(m.embed_images(b.images, true).data.data());
}
BENCHMARK(BM_EncodeImages)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  model::DualEncoder<float> m(model::ModelConfig{}, 1);
  const auto b = make_batch(static_cast<int>(state.range(0)));
  training::TrainConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(training::train_step(m, b.images, b.pos, b.neg, cfg).total);
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Bleu4(benchmark::State& state) {
  Rng rng(4, 0);
  const auto a = scores::sample_record(rng, "a");
  const auto c = captions::split_tokens(captions::render_caption(a, captions::TemplateKind::Location, true).text);
  const auto r = captions::split_tokens(
      captions::render_caption(scores::perturb_negative(a, rng), captions::TemplateKind::Location, true).text);
  for (auto _ : state) benchmark::DoNotOptimize(eval::bleu4(c, r));
}
BENCHMARK(BM_Bleu4);

}  // namespace

BENCHMARK_MAIN();
