#ifndef FORGE_TASKS_H_
#define FORGE_TASKS_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forge/rng.h"
#include "forge/vocabulary.h"

namespace forge {

// Proportions of 1-, 2- and 3-operation problems.
struct DifficultyMix {
  double one_op = 0.5;
  double two_op = 0.3;
  double three_op = 0.2;

  void Validate() const;  // throws std::invalid_argument
};

// "<a> <op> <b> ... =" over operands 0-99 with +, - and *.
struct Problem {
  std::int64_t id = 0;
  TokenSeq prompt_tokens;
  std::string answer;  // canonical integer, e.g. "-85"
  int difficulty = 1;  // operation count

  bool operator==(const Problem&) const = default;
};

enum class TraceStyle { kPlain, kReflective };

std::string_view TraceStyleName(TraceStyle style);
TraceStyle ParseTraceStyle(std::string_view name);

// Reference completion for SFT:
//   <think> ... </think> <answer> N </answer> <eos>
struct Trace {
  std::int64_t problem_id = 0;
  TokenSeq prompt;
  TokenSeq tokens;
  TraceStyle style = TraceStyle::kPlain;

  bool operator==(const Trace&) const = default;
};

// XOR-ed into the train seed to obtain the eval seed.
inline constexpr std::uint64_t kEvalSeedSalt = 0x5eed0e7a15eed0e7ULL;

// Expression parsed back from prompt tokens.
struct Expression {
  std::vector<long long> operands;
  std::vector<char> ops;  // '+', '-', '*'
};

// One reduction "lhs op rhs = result"; multiplications first, then
// additions/subtractions, each left to right.
struct ReductionStep {
  long long lhs;
  char op;
  long long rhs;
  long long result;
};

Expression ParseExpression(std::span<const TokenId> prompt,
                           const Vocabulary& vocab);
std::vector<ReductionStep> Reduce(const Expression& expr);

// Pure in (seed, id, mix): problem candidate `id` of a dataset.
Problem RenderProblem(std::uint64_t seed, std::int64_t id,
                      const DifficultyMix& mix, const Vocabulary& vocab);

// Candidates 0, 1, 2, ... with duplicate prompts skipped; ids are candidate
// indices, so they may have gaps.
std::vector<Problem> GenDataset(std::uint64_t seed, std::size_t n,
                                const DifficultyMix& mix,
                                const Vocabulary& vocab);

// Uses seed ^ kEvalSeedSalt and rejects any prompt found in `exclude`.
std::vector<Problem> GenEvalDataset(std::uint64_t train_seed, std::size_t n,
                                    const DifficultyMix& mix,
                                    const Vocabulary& vocab,
                                    std::span<const Problem> exclude);

// Reflective traces carry markers from at least two reflection dimensions
// inside the think span; plain traces carry none.
Trace SynthTrace(const Problem& problem, TraceStyle style, Rng& rng,
                 const Vocabulary& vocab);

}  // namespace forge

#endif  // FORGE_TASKS_H_
