#include <benchmark/benchmark.h>

#include "forge/grpo.h"
#include "forge/lora.h"
#include "forge/policy.h"
#include "forge/rewards.h"
#include "forge/tasks.h"

namespace {

using namespace forge;

const Vocabulary& V() { return Vocabulary::Default(); }

void BM_NextTokenLogits(benchmark::State& state) {
  const PolicyParams p = InitParams(1, PolicyDims{});
  const std::vector<TokenId> ctx = {3, 4, 5, 6, 7, 8, 9, 10};
  for (auto _ : state) benchmark::DoNotOptimize(NextTokenLogits(p, ctx));
}
BENCHMARK(BM_NextTokenLogits);

void BM_SampleCompletion(benchmark::State& state) {
  const PolicyParams p = InitParams(2, PolicyDims{});
  const TokenSeq prompt = V().Tokenize("1 2 + 3 4 * 5 =");
  DecodeOptions decode;
  decode.max_len = static_cast<int>(state.range(0));
  Rng rng(3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(SampleCompletion(p, prompt, decode, V().eos(), rng));
  }
}
BENCHMARK(BM_SampleCompletion)->Arg(32)->Arg(96);

void BM_GradWeightedLogprob(benchmark::State& state) {
  const PolicyParams p = InitParams(4, PolicyDims{});
  const TokenSeq prompt = V().Tokenize("1 2 + 3 4 =");
  const TokenSeq tokens = V().Tokenize(
      "<think> first 1 2 + 3 4 = 4 6 , check 4 6 ok </think> <answer> 4 6 </answer> <eos>");
  const std::vector<WeightedSequence> items(8, WeightedSequence{prompt, tokens, 1.0});
  for (auto _ : state) benchmark::DoNotOptimize(GradWeightedLogprob(p, items));
  state.SetItemsProcessed(state.iterations() * 8 * static_cast<long>(tokens.size()));
}
BENCHMARK(BM_GradWeightedLogprob);

void BM_AdaptedLogits(benchmark::State& state) {
  const PolicyParams p = InitParams(5, PolicyDims{});
  const std::vector<LoraAdapter> adapters = {
      InitAdapter(6, p.dims, LoraTarget::kW1, static_cast<int>(state.range(0))),
      InitAdapter(7, p.dims, LoraTarget::kW2, static_cast<int>(state.range(0)))};
  const std::vector<TokenId> ctx = {3, 4, 5, 6, 7, 8, 9, 10};
  for (auto _ : state) benchmark::DoNotOptimize(AdaptedLogits(p, adapters, ctx));
}
BENCHMARK(BM_AdaptedLogits)->Arg(2)->Arg(8);

void BM_RewardScore(benchmark::State& state) {
  const RewardScorer scorer(V(), ReflectionLexicon::Default(), RewardWeights{});
  const TokenSeq tokens = V().Tokenize(
      "<think> need x , first 3 + 4 = 8 wait 3 + 4 = 7 , check 7 ok , so x = 7 </think> "
      "<answer> 7 </answer> <eos>");
  for (auto _ : state) benchmark::DoNotOptimize(scorer.Score(tokens, "7"));
}
BENCHMARK(BM_RewardScore);

void BM_GrpoObjectiveWithGradient(benchmark::State& state) {
  const PolicyParams p = InitParams(8, PolicyDims{});
  const RewardScorer scorer(V(), ReflectionLexicon::Default(), RewardWeights{});
  const auto problems = GenDataset(9, 4, DifficultyMix{}, V());
  DecodeOptions decode;
  decode.max_len = 48;
  Rng rng(10);
  std::vector<Group> groups;
  for (const auto& pr : problems) {
    Group g = RolloutGroup(p, pr, 8, decode, scorer, 1e-4, rng);
    for (std::size_t i = 0; i < g.advantages.size(); ++i) g.advantages[i] = i % 2 ? 1.0 : -1.0;
    groups.push_back(std::move(g));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(GrpoObjectiveWithGradient(p, p, p, groups, GrpoHyper{}));
  }
}
BENCHMARK(BM_GrpoObjectiveWithGradient);

}  // namespace

BENCHMARK_MAIN();
