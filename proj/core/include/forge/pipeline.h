#ifndef FORGE_PIPELINE_H_
#define FORGE_PIPELINE_H_

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "forge/checkpoint.h"
#include "forge/config.h"
#include "forge/grpo.h"
#include "forge/rewards.h"
#include "forge/sft.h"
#include "forge/tasks.h"

namespace forge {

// Label written into every report so results are never read as comparable
// to external benchmarks.
inline constexpr const char* kEvalSetLabel = "synthetic-eval";

struct EvalReport {
  std::string label;
  double accuracy = 0.0;
  double format_rate = 0.0;
  double refl_mean = 0.0;
  std::size_t n = 0;

  bool operator==(const EvalReport&) const = default;
};

// Anything that produces one deterministic completion per prompt.
class GreedyPolicy {
 public:
  virtual ~GreedyPolicy() = default;
  virtual TokenSeq Complete(const Problem& problem) const = 0;
};

class ParamsGreedyPolicy : public GreedyPolicy {
 public:
  ParamsGreedyPolicy(const PolicyParams& params, const Vocabulary& vocab,
                     int max_len);
  TokenSeq Complete(const Problem& problem) const override;

 private:
  const PolicyParams* params_;
  TokenId eos_;
  int max_len_;
};

// Throws std::invalid_argument on an empty eval set.
EvalReport Evaluate(const GreedyPolicy& policy,
                    std::span<const Problem> eval_set,
                    const RewardScorer& scorer, const std::string& label);
EvalReport Evaluate(const PolicyParams& params,
                    std::span<const Problem> eval_set,
                    const RewardScorer& scorer, int max_len,
                    const std::string& label);

struct Datasets {
  std::vector<Problem> sft_problems;
  std::vector<Trace> sft_traces;
  std::vector<Problem> grpo_problems;
  std::vector<Problem> eval_problems;
};

// One train pool from the data seed: the first sft_traces problems feed SFT,
// the rest feed GRPO. The eval set is drawn disjoint from the whole pool.
Datasets BuildDatasets(const RunConfig& config, const Vocabulary& vocab);
// Writes data/{sft_traces,grpo_prompts,eval_problems}.jsonl under `out`.
void WriteDatasets(const Datasets& data, const Vocabulary& vocab,
                   const std::filesystem::path& out);

RewardScorer MakeScorer(const RunConfig& config, const Vocabulary& vocab);

// Holds <out>/.forge.lock for its lifetime; a second holder gets a
// StageError.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& out);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct PipelineResult {
  std::vector<EvalReport> reports;  // base, sft (unless skipped), grpo
  std::vector<SftEpochRecord> sft_history;
  std::vector<StepDiagnostics> grpo_diagnostics;
};

// Stages: data, base (init + eval), sft, grpo, eval. Artifacts under `out`:
//   config.json                  effective merged config
//   data/*.jsonl                 datasets
//   checkpoints/{base,sft,grpo}.ckpt (+ sft_adapters.ckpt in lora mode)
//   diagnostics/{sft_loss,grpo}.jsonl
//   curves/*.csv
//   report/comparison.{txt,jsonl}
// Failures surface as StageError or NumericalError after earlier artifacts
// have been written.
PipelineResult RunPipeline(const RunConfig& config,
                           const std::filesystem::path& out);

// Single-stage entry points used by the CLI subcommands.
void RunGenData(const RunConfig& config, const std::filesystem::path& out);
EvalReport RunEval(const RunConfig& config,
                   const std::filesystem::path& checkpoint,
                   const std::filesystem::path& out);
SftResult RunSftStage(const RunConfig& config,
                      const std::filesystem::path& out);
GrpoResult RunGrpoStage(const RunConfig& config,
                        const std::optional<std::filesystem::path>& checkpoint,
                        const std::filesystem::path& out);

enum class RewardComponent { kAccuracy, kFormat, kReflection };
RewardComponent ParseRewardComponent(std::string_view name);  // acc|fmt|refl
std::string_view RewardComponentName(RewardComponent c);

struct AblationArm {
  std::string name;  // "control" or "ablated"
  RewardWeights weights;
  EvalReport final_report;
  std::vector<double> refl_curve;
  double final_decile_refl = 0.0;
};

struct AblationReport {
  std::set<RewardComponent> zeroed;
  AblationArm control;
  AblationArm ablated;
  double refl_ratio = 0.0;  // control / ablated final-decile refl (inf if 0)
  double refl_delta = 0.0;  // control - ablated final-decile refl
  double control_spearman = 0.0;  // smoothed control refl curve vs step
};

// Shared data, init and SFT, then two GRPO runs from the same start with the
// same seeds; the ablated arm has the selected lambdas set to zero. Writes
// ablation/{control,ablated}/ and report/ablation.{txt,jsonl} under `out`.
AblationReport RunAblation(const RunConfig& config,
                           const std::set<RewardComponent>& zeroed,
                           const std::filesystem::path& out);

// Mean of the last ceil(n/10) values.
double FinalDecileMean(std::span<const double> series);
// Trailing moving average with window max(1, n/10).
std::vector<double> Smooth(std::span<const double> series);
// Spearman rank correlation with tie-averaged ranks; 0 when either side is
// constant.
double Spearman(std::span<const double> x, std::span<const double> y);

// One CSV per series (refl_mean, reward_mean, kl, clip_fraction) with header
// "step,value". Throws std::runtime_error naming a missing file.
void ExportCurves(const std::filesystem::path& diagnostics,
                  const std::filesystem::path& out_dir);

// Scores a trace corpus (JSON Lines with "target" and "answer", or "prompt"
// to derive the answer) into a score file, one line per trace.
void ScoreTraces(const RunConfig& config, const std::filesystem::path& traces,
                 const std::filesystem::path& out);

}  // namespace forge

#endif  // FORGE_PIPELINE_H_
