#include <benchmark/benchmark.h>

#include <cmath>

#include "hubert_ap/acoustic_piece.hpp"
#include "hubert_ap/ctc.hpp"
#include "hubert_ap/mfcc.hpp"
#include "hubert_ap/probe.hpp"

using namespace hubert_ap;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = rng.normal();
  }
  return m;
}

std::vector<CodeSequence> code_corpus(int utts, int len, int alphabet) {
  Rng rng(1);
  std::vector<CodeSequence> out;
  for (int u = 0; u < utts; ++u) {
    CodeSequence s{"u" + std::to_string(u), {}};
    while (static_cast<int>(s.ids.size()) < len) {
      const int c = static_cast<int>(rng.below(alphabet));
      const int run = rng.between(1, 4);
      for (int r = 0; r < run; ++r) s.ids.push_back(c);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void BM_BpeTrain(benchmark::State& state) {
  const auto corpus = code_corpus(100, 150, 100);
  ApConfig cfg;
  cfg.base_alphabet = 100;
  cfg.vocab_size = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train_bpe(corpus, cfg));
}
BENCHMARK(BM_BpeTrain)->Arg(300)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_BpeEncode(benchmark::State& state) {
  const auto corpus = code_corpus(100, 150, 100);
  ApConfig cfg;
  cfg.base_alphabet = 100;
  cfg.vocab_size = 1000;
  const PieceVocab vocab = train_bpe(corpus, cfg);
  for (auto _ : state) {
    for (const auto& s : corpus) benchmark::DoNotOptimize(encode(vocab, s));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(corpus.size()));
}
BENCHMARK(BM_BpeEncode)->Unit(benchmark::kMillisecond);

void BM_Mfcc(benchmark::State& state) {
  AudioBuffer audio;
  audio.samples.resize(kSampleRate * state.range(0));
  for (std::size_t i = 0; i < audio.samples.size(); ++i) audio.samples[i] = 0.3 * std::sin(0.05 * i);
  const MfccConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(compute_mfcc(audio, cfg));
}
BENCHMARK(BM_Mfcc)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_CtcGrad(benchmark::State& state) {
  Rng rng(2);
  const int T = static_cast<int>(state.range(0));
  const Matrix logp = log_softmax(random_matrix(T, 14, rng));
  std::vector<int> y(T / 4);
  for (int& c : y) c = rng.between(1, 13);
  for (auto _ : state) benchmark::DoNotOptimize(ctc_grad(logp, y));
}
BENCHMARK(BM_CtcGrad)->Arg(100)->Arg(400);

void BM_ProbeForward(benchmark::State& state) {
  ProbeConfig cfg;
  cfg.input_dim = 39;
  cfg.label_vocab = 100;
  const ProbeParams params = build_probe(cfg, 3);
  Rng rng(4);
  const int T = static_cast<int>(state.range(0));
  FeatureMatrix feats;
  feats.frames = random_matrix(T, 39, rng);
  const MaskSpec mask = sample_spans(T, cfg, 5);
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, feats, mask));
}
BENCHMARK(BM_ProbeForward)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
