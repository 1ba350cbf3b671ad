#ifndef FORGE_GRPO_H_
#define FORGE_GRPO_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "forge/policy.h"
#include "forge/rewards.h"
#include "forge/tasks.h"

namespace forge {

struct GrpoHyper {
  double epsilon = 0.2;  // clip width
  double beta = 0.04;    // KL coefficient
  RewardWeights weights;
  double eps_std = 1e-4;
  int group_size = 8;
  double learning_rate = 1e-3;
  int total_steps = 300;
  int prompts_per_step = 4;
  int inner_updates = 1;
  int ref_refresh_interval = 0;  // 0 = reference stays at the start policy
  int eval_interval = 50;        // 0 = no scheduled evaluation
  DecodeOptions decode;

  void Validate() const;  // throws std::invalid_argument
};

// One prompt with G completions sampled from a frozen snapshot.
struct Group {
  TokenSeq prompt;
  std::string answer;
  std::vector<Completion> completions;
  std::vector<RewardBreakdown> breakdowns;
  std::vector<double> advantages;
  std::vector<double> old_logprobs;

  bool operator==(const Group&) const = default;
};

Group RolloutGroup(const PolicyParams& old_params, const Problem& problem,
                   int group_size, const DecodeOptions& decode,
                   const RewardScorer& scorer, double eps_std, Rng& rng);

// Mean over all tokens of exp(d) - d - 1 with d = log pi_ref(t) - log pi(t).
double KlEstimate(const PolicyParams& params, const PolicyParams& ref_params,
                  std::span<const Completion> completions);

// min(rho * adv, clip(rho, 1 - eps, 1 + eps) * adv)
double ClippedSurrogate(double ratio, double advantage, double epsilon);

struct ObjectiveResult {
  double objective = 0.0;  // J
  double surrogate = 0.0;  // mean clipped surrogate
  double kl = 0.0;
  double clip_fraction = 0.0;
  int clamped = 0;  // completions whose log-ratio hit the +-10 clamp
};

// J = (1/N) sum_i min(rho_i A_i, clip(rho_i) A_i) - beta * KL, with
// rho_i = exp(clamp(log pi(a_i|x) - old_logprob_i, -10, 10)).
// Throws NumericalError naming the completion on a non-finite log-ratio.
ObjectiveResult GrpoObjective(const PolicyParams& params,
                              const PolicyParams& old_params,
                              const PolicyParams& ref_params,
                              std::span<const Group> groups,
                              const GrpoHyper& hyper);

// dJ/dtheta with advantages and old log-probs held constant.
Gradient GrpoGradient(const PolicyParams& params,
                      const PolicyParams& old_params,
                      const PolicyParams& ref_params,
                      std::span<const Group> groups, const GrpoHyper& hyper);

// Both of the above from one set of forward passes.
std::pair<ObjectiveResult, Gradient> GrpoObjectiveWithGradient(
    const PolicyParams& params, const PolicyParams& old_params,
    const PolicyParams& ref_params, std::span<const Group> groups,
    const GrpoHyper& hyper);

struct StepDiagnostics {
  int step = 0;
  double objective = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double acc_mean = 0.0;
  double fmt_mean = 0.0;
  double refl_mean = 0.0;
  int clamped = 0;
  std::optional<double> eval_acc;

  bool operator==(const StepDiagnostics&) const = default;
};

struct GrpoSinks {
  std::function<void(const StepDiagnostics&)> on_step;
  // Receives the last finite parameters before a NumericalError propagates.
  std::function<void(const PolicyParams&)> on_failure;
  // Scheduled evaluation; returns greedy eval accuracy.
  std::function<double(const PolicyParams&)> evaluate;
};

struct GrpoResult {
  PolicyParams params;
  std::vector<StepDiagnostics> diagnostics;
};

// Each step: snapshot old <- params, sample prompts, roll out groups, run
// `inner_updates` Adam ascent steps on J. Rewards use hyper.weights. All
// randomness derives from `seed`.
GrpoResult TrainGrpo(const PolicyParams& start,
                     std::span<const Problem> problems, const GrpoHyper& hyper,
                     const Vocabulary& vocab, const ReflectionLexicon& lexicon,
                     std::uint64_t seed, const GrpoSinks& sinks = {});

}  // namespace forge

#endif  // FORGE_GRPO_H_
