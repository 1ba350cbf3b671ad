#include "forge/pipeline.h"

#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "forge/errors.h"
#include "forge/jsonl.h"
#include "support/test_support.h"

namespace forge {
namespace {

namespace fs = std::filesystem;
const Vocabulary& V() { return Vocabulary::Default(); }

RunConfig TinyConfig() {
  RunConfig c;
  c.dims = PolicyDims{48, 4, 4, 8};
  c.data.sft_traces = 40;
  c.data.grpo_prompts = 20;
  c.data.eval_problems = 10;
  c.sft.epochs = 2;
  c.grpo.total_steps = 4;
  c.grpo.prompts_per_step = 2;
  c.grpo.group_size = 4;
  c.grpo.decode.max_len = 16;
  c.grpo.eval_interval = 2;
  c.eval_max_len = 16;
  return c;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(EvaluateTest, ReplayOfCorrectTracesScoresPerfectly) {
  const auto eval = GenDataset(31, 50, DifficultyMix{}, V());
  testing::ReplayPolicy replay;
  Rng rng(1);
  for (const auto& p : eval) {
    replay.Add(p.prompt_tokens, SynthTrace(p, TraceStyle::kReflective, rng, V()).tokens);
  }
  const RewardScorer scorer(V(), ReflectionLexicon::Default(), RewardWeights{});
  const EvalReport r = Evaluate(replay, eval, scorer, "replay");
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.format_rate, 1.0);
  EXPECT_GE(r.refl_mean, 0.5);
  EXPECT_EQ(r.n, 50u);
}

TEST(EvaluateTest, UntrainedPolicyIsAtChanceAndDeterministic) {
  const auto eval = GenDataset(32, 40, DifficultyMix{}, V());
  const RewardScorer scorer(V(), ReflectionLexicon::Default(), RewardWeights{});
  const PolicyParams p = InitParams(5, PolicyDims{});
  const EvalReport a = Evaluate(p, eval, scorer, 32, "base");
  const EvalReport b = Evaluate(p, eval, scorer, 32, "base");
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.accuracy, 0.0);
  EXPECT_EQ(a.format_rate, 0.0);
  EXPECT_THROW(Evaluate(p, std::vector<Problem>{}, scorer, 32, "x"), std::invalid_argument);
}

TEST(StatsTest, SpearmanKnownValues) {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(Spearman(x, std::vector<double>{2, 4, 6, 8, 10}), 1.0);
  EXPECT_DOUBLE_EQ(Spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(Spearman(x, std::vector<double>{1, 1, 1, 1, 1}), 0.0);
  // Ties get averaged ranks: y ranks are 1.5, 1.5, 3, 4, 5.
  EXPECT_NEAR(Spearman(x, std::vector<double>{0, 0, 1, 2, 3}), 0.9746794344808963, 1e-12);
}

TEST(StatsTest, SmoothingAndFinalDecile) {
  std::vector<double> s(20);
  for (int i = 0; i < 20; ++i) s[i] = i;
  const auto sm = Smooth(s);  // window 2
  EXPECT_EQ(sm[0], 0.0);
  EXPECT_EQ(sm[1], 0.5);
  EXPECT_EQ(sm[19], 18.5);
  EXPECT_EQ(FinalDecileMean(s), 18.5);
  EXPECT_EQ(FinalDecileMean(std::vector<double>{4.0}), 4.0);
  EXPECT_EQ(FinalDecileMean(std::vector<double>{}), 0.0);
}

TEST(CurvesTest, ExportCopiesValuesVerbatim) {
  const fs::path dir = testing::ScratchDir("curves");
  std::vector<StepDiagnostics> diag(3);
  for (int i = 0; i < 3; ++i) {
    diag[i].step = i;
    diag[i].refl_mean = 0.1 * i + 1e-17;
    diag[i].reward_mean = 1.0 / 3.0 + i;
    diag[i].kl = 2.5e-7 * i;
    diag[i].clip_fraction = 0.125;
  }
  std::vector<std::string> lines;
  for (const auto& d : diag) lines.push_back(DiagnosticsJson(d));
  WriteLines(dir / "grpo.jsonl", lines);
  ExportCurves(dir / "grpo.jsonl", dir / "out");
  const auto csv = ReadLines(dir / "out" / "reward_mean.csv");
  ASSERT_EQ(csv.size(), 4u);
  EXPECT_EQ(csv[0], "step,value");
  for (int i = 0; i < 3; ++i) {
    const std::string value = csv[i + 1].substr(csv[i + 1].find(',') + 1);
    EXPECT_EQ(std::stod(value), diag[i].reward_mean);
    EXPECT_EQ(ParseDiagnosticsJson(lines[i]), diag[i]);
  }
  EXPECT_EQ(ReadLines(dir / "out" / "kl.csv").size(), 4u);
  EXPECT_EQ(ReadLines(dir / "out" / "clip_fraction.csv").size(), 4u);
  EXPECT_EQ(ReadLines(dir / "out" / "refl_mean.csv").size(), 4u);
}

TEST(CurvesTest, EmptyAndMissingDiagnostics) {
  const fs::path dir = testing::ScratchDir("curves_empty");
  WriteLines(dir / "empty.jsonl", std::vector<std::string>{});
  ExportCurves(dir / "empty.jsonl", dir / "out");
  EXPECT_EQ(ReadLines(dir / "out" / "refl_mean.csv"), std::vector<std::string>{"step,value"});
  try {
    ExportCurves(dir / "missing.jsonl", dir / "out");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("missing.jsonl"), std::string::npos);
  }
}

TEST(PipelineTest, RunWritesEveryArtifactAndReportsMatchCheckpoints) {
  const fs::path out = testing::ScratchDir("pipeline_run");
  const RunConfig config = TinyConfig();
  const PipelineResult r = RunPipeline(config, out);
  ASSERT_EQ(r.reports.size(), 3u);
  EXPECT_EQ(r.reports[0].label, "base");
  EXPECT_EQ(r.reports[1].label, "sft");
  EXPECT_EQ(r.reports[2].label, "grpo");
  EXPECT_EQ(r.grpo_diagnostics.size(), 4u);
  for (const char* f : {"config.json", "data/sft_traces.jsonl", "data/grpo_prompts.jsonl",
                        "data/eval_problems.jsonl", "checkpoints/base.ckpt",
                        "checkpoints/sft.ckpt", "checkpoints/grpo.ckpt",
                        "diagnostics/sft_loss.jsonl", "diagnostics/grpo.jsonl",
                        "curves/refl_mean.csv", "report/comparison.txt",
                        "report/comparison.jsonl"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_FALSE(fs::exists(out / ".forge.lock"));
  EXPECT_NE(Slurp(out / "report" / "comparison.txt").find("synthetic-eval"), std::string::npos);
  EXPECT_EQ(ReadLines(out / "report" / "comparison.jsonl").size(), 3u);

  // Every report row is re-derivable from its persisted checkpoint.
  const Datasets data = BuildDatasets(config, V());
  const RewardScorer scorer = MakeScorer(config, V());
  const char* names[] = {"base", "sft", "grpo"};
  for (int i = 0; i < 3; ++i) {
    const Checkpoint ck = LoadCheckpoint(out / "checkpoints" / (std::string(names[i]) + ".ckpt"));
    EXPECT_EQ(Evaluate(ck.params, data.eval_problems, scorer, config.eval_max_len, names[i]),
              r.reports[i]);
  }

  // The persisted config reproduces the run byte for byte.
  const fs::path again = testing::ScratchDir("pipeline_again");
  RunPipeline(LoadRunConfig(out / "config.json"), again);
  for (const char* f : {"checkpoints/grpo.ckpt", "diagnostics/grpo.jsonl",
                        "report/comparison.jsonl", "config.json"}) {
    EXPECT_EQ(Slurp(out / f), Slurp(again / f)) << f;
  }
}

TEST(PipelineTest, SkipSftStartsGrpoFromBase) {
  const fs::path out = testing::ScratchDir("pipeline_skip");
  RunConfig config = TinyConfig();
  config.stages.skip_sft = true;
  const PipelineResult r = RunPipeline(config, out);
  ASSERT_EQ(r.reports.size(), 2u);
  EXPECT_EQ(r.reports[1].label, "grpo");
  EXPECT_FALSE(fs::exists(out / "checkpoints" / "sft.ckpt"));

  const Datasets data = BuildDatasets(config, V());
  const GrpoResult direct =
      TrainGrpo(InitParams(config.InitSeed(), config.dims), data.grpo_problems, config.grpo,
                V(), ReflectionLexicon::Default(), config.seeds.rollout);
  EXPECT_EQ(LoadCheckpoint(out / "checkpoints" / "grpo.ckpt").params, direct.params);
}

TEST(PipelineTest, LoraModeWritesAdapters) {
  const fs::path out = testing::ScratchDir("pipeline_lora");
  RunConfig config = TinyConfig();
  config.stages.use_lora = true;
  config.lora.rank = 2;
  RunPipeline(config, out);
  const Checkpoint adapters = LoadCheckpoint(out / "checkpoints" / "sft_adapters.ckpt");
  const Checkpoint base = LoadCheckpoint(out / "checkpoints" / "base.ckpt");
  EXPECT_EQ(adapters.params, base.params);
  EXPECT_EQ(adapters.adapters.size(), 2u);
  EXPECT_EQ(LoadCheckpoint(out / "checkpoints" / "sft.ckpt").params,
            Merge(adapters.params, adapters.adapters));
}

TEST(PipelineTest, SecondRunOnLockedDirectoryFails) {
  const fs::path out = testing::ScratchDir("pipeline_lock");
  OutputLock held(out);
  try {
    RunPipeline(TinyConfig(), out);
    FAIL() << "expected a stage failure";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "lock");
  }
}

TEST(PipelineTest, FailingStageKeepsEarlierArtifacts) {
  const fs::path out = testing::ScratchDir("pipeline_fail");
  RunConfig config = TinyConfig();
  // Enough SFT that sampled groups have reward variance, so the huge step
  // is actually taken.
  config.dims = PolicyDims{};
  config.data.sft_traces = 400;
  config.sft.epochs = 5;
  config.sft.batch_size = 8;
  config.sft.learning_rate = 5e-3;
  config.grpo.decode.max_len = 48;
  config.grpo.learning_rate = 1e308;  // logits overflow after the first update
  config.grpo.beta = 0.0;
  EXPECT_THROW(RunPipeline(config, out), NumericalError);
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "base.ckpt"));
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "sft.ckpt"));
  EXPECT_TRUE(fs::exists(out / "report" / "comparison.jsonl"));
  EXPECT_FALSE(fs::exists(out / "checkpoints" / "grpo.ckpt"));
  EXPECT_FALSE(fs::exists(out / ".forge.lock"));
}

TEST(AblationTest, ArmsDifferOnlyInZeroedWeights) {
  const fs::path out = testing::ScratchDir("ablation");
  const AblationReport r = RunAblation(TinyConfig(), {RewardComponent::kReflection}, out);
  EXPECT_EQ(r.control.weights.reflection, 0.5);
  EXPECT_EQ(r.ablated.weights.reflection, 0.0);
  EXPECT_EQ(r.control.weights.accuracy, r.ablated.weights.accuracy);
  EXPECT_EQ(r.control.weights.format, r.ablated.weights.format);
  EXPECT_EQ(r.control.refl_curve.size(), 4u);
  EXPECT_EQ(r.ablated.refl_curve.size(), 4u);
  // Step 0 samples from the same start with the same seeds.
  EXPECT_EQ(r.control.refl_curve[0], r.ablated.refl_curve[0]);
  const auto control_cfg = LoadRunConfig(out / "ablation" / "control" / "config.json");
  RunConfig ablated_cfg = LoadRunConfig(out / "ablation" / "ablated" / "config.json");
  ablated_cfg.grpo.weights.reflection = control_cfg.grpo.weights.reflection;
  EXPECT_EQ(SerializeRunConfig(ablated_cfg), SerializeRunConfig(control_cfg));
  EXPECT_EQ(ReadLines(out / "report" / "ablation.jsonl").size(), 3u);
  EXPECT_NE(Slurp(out / "report" / "ablation.txt").find("spearman"), std::string::npos);
}

TEST(AblationTest, ZeroingEverythingLeavesOnlyKlDrift) {
  const fs::path out = testing::ScratchDir("ablation_all");
  const AblationReport r = RunAblation(
      TinyConfig(),
      {RewardComponent::kAccuracy, RewardComponent::kFormat, RewardComponent::kReflection}, out);
  for (const auto& line : ReadLines(out / "ablation" / "ablated" / "diagnostics" / "grpo.jsonl")) {
    const StepDiagnostics d = ParseDiagnosticsJson(line);
    EXPECT_EQ(d.reward_mean, 0.0);
    EXPECT_EQ(d.reward_std, 0.0);
  }
  EXPECT_THROW(ParseRewardComponent("speed"), ConfigError);
}

TEST(ScoreTracesTest, ScoresFixtureCorpus) {
  const fs::path out = testing::ScratchDir("score") / "scores.jsonl";
  ScoreTraces(RunConfig{}, testing::FixturePath("reward_fixtures.jsonl"), out);
  const auto fixtures = testing::LoadRewardFixtures();
  const auto lines = ReadLines(out);
  ASSERT_EQ(lines.size(), fixtures.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto j = nlohmann::json::parse(lines[i]);
    EXPECT_EQ(j.at("id").get<std::string>(), fixtures[i].id);
    EXPECT_EQ(j.at("r_refl").get<double>(), fixtures[i].r_refl);
  }
}

}  // namespace
}  // namespace forge
