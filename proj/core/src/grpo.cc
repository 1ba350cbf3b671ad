#include "forge/grpo.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "forge/errors.h"
#include "forge/optimizer.h"

namespace forge {
namespace {

constexpr double kLogRatioClamp = 10.0;

struct CompletionTerms {
  double ratio = 1.0;
  bool clamped = false;
  bool clipped = false;          // clipped branch strictly smaller
  bool surrogate_live = false;   // surrogate has a nonzero derivative
  double surrogate = 0.0;
  std::vector<double> log_delta;  // log pi_ref(t) - log pi(t)
};

double Clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

// Evaluates J and, when `grad` is non-null, accumulates dJ/dtheta into it.
ObjectiveResult Evaluate(const PolicyParams& params,
                         const PolicyParams& ref_params,
                         std::span<const Group> groups, const GrpoHyper& hyper,
                         Gradient* grad) {
  if (groups.empty()) throw std::invalid_argument("grpo: no groups");
  std::size_t n = 0;
  std::size_t total_tokens = 0;
  for (const auto& g : groups) {
    if (g.completions.size() != g.advantages.size() ||
        g.completions.size() != g.old_logprobs.size()) {
      throw std::invalid_argument("grpo: group lists have different lengths");
    }
    n += g.completions.size();
    for (const auto& c : g.completions) total_tokens += c.tokens.size();
  }
  if (n == 0) throw std::invalid_argument("grpo: groups hold no completions");

  std::vector<std::vector<CompletionTerms>> terms(groups.size());
  ObjectiveResult res;
  double kl_sum = 0.0;
  int clipped = 0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    for (std::size_t i = 0; i < g.completions.size(); ++i) {
      const Completion& c = g.completions[i];
      CompletionTerms t;
      const SequenceLogprob cur = SequenceLogProb(params, c.prompt, c.tokens);
      const double log_ratio = cur.total - g.old_logprobs[i];
      if (!std::isfinite(log_ratio)) {
        throw NumericalError("non-finite log-ratio for group " +
                             std::to_string(gi) + " completion " +
                             std::to_string(i));
      }
      t.clamped = std::abs(log_ratio) > kLogRatioClamp;
      t.ratio = std::exp(Clip(log_ratio, -kLogRatioClamp, kLogRatioClamp));
      const double adv = g.advantages[i];
      const double unclipped = t.ratio * adv;
      const double clipped_v =
          Clip(t.ratio, 1.0 - hyper.epsilon, 1.0 + hyper.epsilon) * adv;
      t.clipped = clipped_v < unclipped;
      t.surrogate = std::min(unclipped, clipped_v);
      t.surrogate_live = !t.clipped && !t.clamped && adv != 0.0;
      res.surrogate += t.surrogate;
      clipped += t.clipped ? 1 : 0;
      res.clamped += t.clamped ? 1 : 0;

      const SequenceLogprob ref = SequenceLogProb(ref_params, c.prompt, c.tokens);
      t.log_delta.resize(c.tokens.size());
      for (std::size_t k = 0; k < c.tokens.size(); ++k) {
        const double d = ref.per_token[k] - cur.per_token[k];
        t.log_delta[k] = d;
        kl_sum += std::exp(d) - d - 1.0;
      }
      terms[gi].push_back(std::move(t));
    }
  }
  res.surrogate /= static_cast<double>(n);
  res.kl = total_tokens > 0 ? kl_sum / static_cast<double>(total_tokens) : 0.0;
  res.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n);
  res.objective = res.surrogate - hyper.beta * res.kl;
  if (!std::isfinite(res.objective)) {
    throw NumericalError("non-finite GRPO objective");
  }

  if (grad != nullptr) {
    // d/dtheta of rho*A is A*rho*dlogpi; d/dtheta of -beta*k_t is
    // beta*(exp(d_t) - 1)*dlogpi_t, with each term under its own mean.
    std::vector<std::vector<double>> weights;
    std::vector<TokenWeightedSequence> items;
    weights.reserve(n);
    items.reserve(n);
    const double inv_n = 1.0 / static_cast<double>(n);
    const double kl_scale =
        total_tokens > 0 ? hyper.beta / static_cast<double>(total_tokens) : 0.0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const Group& g = groups[gi];
      for (std::size_t i = 0; i < g.completions.size(); ++i) {
        const auto& t = terms[gi][i];
        const Completion& c = g.completions[i];
        const double seq_w =
            t.surrogate_live ? g.advantages[i] * t.ratio * inv_n : 0.0;
        std::vector<double> w(c.tokens.size(), seq_w);
        if (kl_scale != 0.0) {
          for (std::size_t k = 0; k < w.size(); ++k) {
            w[k] += kl_scale * (std::exp(t.log_delta[k]) - 1.0);
          }
        }
        weights.push_back(std::move(w));
        items.push_back({c.prompt, c.tokens, weights.back()});
      }
    }
    *grad = GradTokenWeightedLogprob(params, items);
  }
  return res;
}

void CheckOld(const PolicyParams& params, const PolicyParams& old_params) {
  if (!(params.dims == old_params.dims)) {
    throw std::invalid_argument("grpo: old policy has different dims");
  }
}

}  // namespace

void GrpoHyper::Validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw std::invalid_argument("grpo epsilon must lie in (0, 1)");
  }
  if (!(beta >= 0.0)) throw std::invalid_argument("grpo beta must be >= 0");
  if (group_size < 2) throw std::invalid_argument("grpo group_size must be >= 2");
  if (inner_updates < 1) {
    throw std::invalid_argument("grpo inner_updates must be >= 1");
  }
  if (prompts_per_step < 1) {
    throw std::invalid_argument("grpo prompts_per_step must be >= 1");
  }
  if (total_steps < 0) throw std::invalid_argument("grpo total_steps must be >= 0");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("grpo learning_rate must be > 0");
  }
  if (ref_refresh_interval < 0 || eval_interval < 0) {
    throw std::invalid_argument("grpo intervals must be >= 0");
  }
  if (!(eps_std > 0.0)) throw std::invalid_argument("eps_std must be > 0");
  weights.Validate();
}

Group RolloutGroup(const PolicyParams& old_params, const Problem& problem,
                   int group_size, const DecodeOptions& decode,
                   const RewardScorer& scorer, double eps_std, Rng& rng) {
  if (group_size < 2) throw std::invalid_argument("group size must be >= 2");
  Group g;
  g.prompt = problem.prompt_tokens;
  g.answer = problem.answer;
  std::vector<double> rewards;
  for (int i = 0; i < group_size; ++i) {
    Completion c = SampleCompletion(old_params, problem.prompt_tokens, decode,
                                    scorer.vocab().eos(), rng);
    RewardBreakdown b = scorer.Score(c.tokens, problem.answer);
    rewards.push_back(b.composite);
    g.old_logprobs.push_back(c.total_logprob);
    g.breakdowns.push_back(b);
    g.completions.push_back(std::move(c));
  }
  g.advantages = GroupAdvantages(rewards, eps_std);
  return g;
}

double KlEstimate(const PolicyParams& params, const PolicyParams& ref_params,
                  std::span<const Completion> completions) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& c : completions) {
    if (c.tokens.empty()) continue;
    const auto cur = SequenceLogProb(params, c.prompt, c.tokens);
    const auto ref = SequenceLogProb(ref_params, c.prompt, c.tokens);
    for (std::size_t k = 0; k < c.tokens.size(); ++k) {
      const double d = ref.per_token[k] - cur.per_token[k];
      sum += std::exp(d) - d - 1.0;
    }
    count += c.tokens.size();
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

double ClippedSurrogate(double ratio, double advantage, double epsilon) {
  return std::min(ratio * advantage,
                  Clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage);
}

ObjectiveResult GrpoObjective(const PolicyParams& params,
                              const PolicyParams& old_params,
                              const PolicyParams& ref_params,
                              std::span<const Group> groups,
                              const GrpoHyper& hyper) {
  CheckOld(params, old_params);
  return Evaluate(params, ref_params, groups, hyper, nullptr);
}

Gradient GrpoGradient(const PolicyParams& params,
                      const PolicyParams& old_params,
                      const PolicyParams& ref_params,
                      std::span<const Group> groups, const GrpoHyper& hyper) {
  return GrpoObjectiveWithGradient(params, old_params, ref_params, groups, hyper)
      .second;
}

std::pair<ObjectiveResult, Gradient> GrpoObjectiveWithGradient(
    const PolicyParams& params, const PolicyParams& old_params,
    const PolicyParams& ref_params, std::span<const Group> groups,
    const GrpoHyper& hyper) {
  CheckOld(params, old_params);
  Gradient grad(params.dims);
  ObjectiveResult res = Evaluate(params, ref_params, groups, hyper, &grad);
  return {res, std::move(grad)};
}

GrpoResult TrainGrpo(const PolicyParams& start,
                     std::span<const Problem> problems, const GrpoHyper& hyper,
                     const Vocabulary& vocab, const ReflectionLexicon& lexicon,
                     std::uint64_t seed, const GrpoSinks& sinks) {
  hyper.Validate();
  if (problems.empty()) throw std::invalid_argument("grpo: no problems");
  if (!start.AllFinite()) {
    throw NumericalError("GRPO start parameters are not finite");
  }
  const RewardScorer scorer(vocab, lexicon, hyper.weights);
  GrpoResult result{start, {}};
  PolicyParams& params = result.params;
  PolicyParams ref = start;
  Adam adam(AdamOptions{.learning_rate = hyper.learning_rate});

  for (int step = 0; step < hyper.total_steps; ++step) {
    if (hyper.ref_refresh_interval > 0 && step > 0 &&
        step % hyper.ref_refresh_interval == 0) {
      ref = params;
    }
    const PolicyParams old = params;
    Rng pick(DeriveSeed(seed, "grpo_prompts", static_cast<std::uint64_t>(step)));
    std::vector<Group> groups;
    groups.reserve(hyper.prompts_per_step);
    for (int k = 0; k < hyper.prompts_per_step; ++k) {
      const Problem& p = problems[pick.Below(problems.size())];
      Rng rng(DeriveSeed(
          seed, "grpo_rollout",
          static_cast<std::uint64_t>(step) * hyper.prompts_per_step + k));
      groups.push_back(RolloutGroup(old, p, hyper.group_size, hyper.decode,
                                    scorer, hyper.eps_std, rng));
    }

    StepDiagnostics diag;
    diag.step = step;
    try {
      for (int u = 0; u < hyper.inner_updates; ++u) {
        auto [obj, grad] =
            GrpoObjectiveWithGradient(params, old, ref, groups, hyper);
        if (u == 0) {
          diag.objective = obj.objective;
          diag.kl = obj.kl;
          diag.clip_fraction = obj.clip_fraction;
          diag.clamped = obj.clamped;
        }
        if (!grad.AllFinite()) throw NumericalError("non-finite GRPO gradient");
        PolicyParams next = params;
        auto p_tensors = next.Tensors();
        auto g_tensors = std::as_const(grad).Tensors();
        adam.Ascend(p_tensors, g_tensors);
        if (!next.AllFinite()) {
          throw NumericalError("non-finite parameters after GRPO update");
        }
        params = std::move(next);
      }
    } catch (const NumericalError&) {
      if (sinks.on_failure) sinks.on_failure(params);
      throw;
    }

    std::size_t n = 0;
    double sum = 0.0, sum_acc = 0.0, sum_fmt = 0.0, sum_refl = 0.0;
    for (const auto& g : groups) {
      for (const auto& b : g.breakdowns) {
        sum += b.composite;
        sum_acc += b.r_acc;
        sum_fmt += b.r_fmt;
        sum_refl += b.r_refl;
        ++n;
      }
    }
    const double dn = static_cast<double>(n);
    diag.reward_mean = sum / dn;
    double var = 0.0;
    for (const auto& g : groups) {
      for (const auto& b : g.breakdowns) {
        var += (b.composite - diag.reward_mean) * (b.composite - diag.reward_mean);
      }
    }
    diag.reward_std = std::sqrt(var / dn);
    diag.acc_mean = sum_acc / dn;
    diag.fmt_mean = sum_fmt / dn;
    diag.refl_mean = sum_refl / dn;
    if (sinks.evaluate && hyper.eval_interval > 0 &&
        ((step + 1) % hyper.eval_interval == 0 || step + 1 == hyper.total_steps)) {
      diag.eval_acc = sinks.evaluate(params);
    }
    if (sinks.on_step) sinks.on_step(diag);
    result.diagnostics.push_back(diag);
  }
  return result;
}

}  // namespace forge
