#ifndef FORGE_REWARDS_H_
#define FORGE_REWARDS_H_

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forge/vocabulary.h"

namespace forge {

enum class ReflectionDim {
  kVerification = 0,
  kBacktracking,
  kSubgoal,
  kBackwardChaining
};
inline constexpr std::size_t kNumReflectionDims = 4;
inline constexpr std::array<std::string_view, kNumReflectionDims>
    kReflectionDimNames = {"verification", "backtracking", "subgoal",
                           "backward_chaining"};

// Marker tokens per cognitive dimension. Sets are pairwise disjoint.
struct ReflectionLexicon {
  std::string version;
  std::array<std::vector<std::string>, kNumReflectionDims> markers;

  // "lexicon-v1": verification {check, verify}, backtracking {wait, mistake,
  // redo}, subgoal {first, step, goal}, backward chaining {need, backwards}.
  static ReflectionLexicon Default();
  // Looks up a lexicon by version; throws std::invalid_argument if unknown.
  static ReflectionLexicon ByVersion(std::string_view version);
  // Throws if sets overlap or a marker is missing from `vocab`.
  void Validate(const Vocabulary& vocab) const;
};

// Weights of the composite reward acc*R_acc + fmt*R_fmt + refl*R_refl.
struct RewardWeights {
  double accuracy = 1.0;
  double format = 0.5;
  double reflection = 0.5;

  void Validate() const;  // rejects negative or non-finite weights
};

struct RewardBreakdown {
  double r_acc = 0.0;
  double r_fmt = 0.0;
  double r_refl = 0.0;
  std::array<bool, kNumReflectionDims> dims{};
  double composite = 0.0;

  bool operator==(const RewardBreakdown&) const = default;
};

struct ReflectionScore {
  double value = 0.0;
  std::array<bool, kNumReflectionDims> dims{};
};

// Content strictly inside the first <answer> ... </answer> pair (the first
// closing tag, paired with the nearest opening tag before it), joined
// without separators and with <sp> tokens dropped.
std::optional<std::string> ExtractAnswer(std::span<const TokenId> tokens,
                                         const Vocabulary& vocab);

// Strips leading zeros and maps "-0" to "0" for strings of the form -?[0-9]+;
// anything else is returned unchanged.
std::string CanonicalizeAnswer(std::string_view answer);

double AccuracyReward(std::span<const TokenId> tokens,
                      std::string_view canonical_answer,
                      const Vocabulary& vocab);

// 1 iff tokens are exactly
//   <think> B* </think> <answer> [-] D+ </answer> <eos>
// where B holds no structural token and D are digit tokens.
double FormatReward(std::span<const TokenId> tokens, const Vocabulary& vocab);

// Per-dimension marker presence inside the think span of a well-formatted
// sequence; value = (number of present dimensions) / 4.
ReflectionScore ReflectionReward(std::span<const TokenId> tokens,
                                 const ReflectionLexicon& lexicon,
                                 const Vocabulary& vocab);

double CompositeReward(double r_acc, double r_fmt, double r_refl,
                       const RewardWeights& weights);

// Group-normalized advantages (r - mean) / (std + eps_std) with population
// std; all zero when the std is exactly zero. Throws when fewer than 2.
std::vector<double> GroupAdvantages(std::span<const double> rewards,
                                    double eps_std = 1e-4);

// Scores completions with a fixed lexicon and weights.
class RewardScorer {
 public:
  RewardScorer(const Vocabulary& vocab, ReflectionLexicon lexicon,
               RewardWeights weights);

  RewardBreakdown Score(std::span<const TokenId> tokens,
                        std::string_view canonical_answer) const;

  const Vocabulary& vocab() const { return *vocab_; }
  const ReflectionLexicon& lexicon() const { return lexicon_; }
  const RewardWeights& weights() const { return weights_; }

 private:
  const Vocabulary* vocab_;
  ReflectionLexicon lexicon_;
  RewardWeights weights_;
};

}  // namespace forge

#endif  // FORGE_REWARDS_H_
