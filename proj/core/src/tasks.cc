#include "forge/tasks.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>

namespace forge {
namespace {

constexpr std::array<char, 3> kOps = {'+', '-', '*'};

long long Apply(long long a, char op, long long b) {
  switch (op) {
    case '+':
      return a + b;
    case '-':
      return a - b;
    case '*':
      return a * b;
  }
  throw std::invalid_argument(std::string("unknown operator '") + op + "'");
}

void Append(TokenSeq& out, const TokenSeq& more) {
  out.insert(out.end(), more.begin(), more.end());
}

void AppendStep(TokenSeq& out, const Vocabulary& v, long long lhs, char op,
                long long rhs, long long result) {
  Append(out, v.Number(lhs));
  out.push_back(v.Id(std::string(1, op)));
  Append(out, v.Number(rhs));
  out.push_back(v.Id("="));
  Append(out, v.Number(result));
}

enum Dim { kVerification = 0, kBacktracking, kSubgoal, kBackwardChaining };

}  // namespace

void DifficultyMix::Validate() const {
  if (one_op < 0 || two_op < 0 || three_op < 0 ||
      std::abs(one_op + two_op + three_op - 1.0) > 1e-9) {
    throw std::invalid_argument(
        "difficulty proportions must be non-negative and sum to 1");
  }
}

std::string_view TraceStyleName(TraceStyle style) {
  return style == TraceStyle::kPlain ? "plain" : "reflective";
}

TraceStyle ParseTraceStyle(std::string_view name) {
  if (name == "plain") return TraceStyle::kPlain;
  if (name == "reflective") return TraceStyle::kReflective;
  throw std::invalid_argument("unknown trace style '" + std::string(name) + "'");
}

Expression ParseExpression(std::span<const TokenId> prompt,
                           const Vocabulary& vocab) {
  Expression expr;
  std::size_t i = 0;
  auto number = [&]() {
    bool neg = false;
    if (i < prompt.size() && prompt[i] == vocab.minus()) {
      neg = true;
      ++i;
    }
    const std::size_t start = i;
    long long value = 0;
    while (i < prompt.size() && vocab.DigitValue(prompt[i]) >= 0) {
      value = value * 10 + vocab.DigitValue(prompt[i]);
      ++i;
    }
    if (i == start) {
      throw std::invalid_argument("expected a number in prompt '" +
                                  vocab.Detokenize(prompt) + "'");
    }
    return neg ? -value : value;
  };
  expr.operands.push_back(number());
  while (i < prompt.size()) {
    const std::string& sym = vocab.Symbol(prompt[i]);
    if (sym == "=") {
      if (i + 1 != prompt.size()) break;
      return expr;
    }
    if (sym != "+" && sym != "-" && sym != "*") break;
    expr.ops.push_back(sym[0]);
    ++i;
    expr.operands.push_back(number());
  }
  throw std::invalid_argument("malformed prompt '" + vocab.Detokenize(prompt) +
                              "'");
}

std::vector<ReductionStep> Reduce(const Expression& expr) {
  std::vector<long long> vals = expr.operands;
  std::vector<char> ops = expr.ops;
  std::vector<ReductionStep> steps;
  for (std::size_t i = 0; i < ops.size();) {
    if (ops[i] != '*') {
      ++i;
      continue;
    }
    const long long r = vals[i] * vals[i + 1];
    steps.push_back({vals[i], '*', vals[i + 1], r});
    vals[i] = r;
    vals.erase(vals.begin() + static_cast<std::ptrdiff_t>(i) + 1);
    ops.erase(ops.begin() + static_cast<std::ptrdiff_t>(i));
  }
  while (!ops.empty()) {
    const long long r = Apply(vals[0], ops[0], vals[1]);
    steps.push_back({vals[0], ops[0], vals[1], r});
    vals[0] = r;
    vals.erase(vals.begin() + 1);
    ops.erase(ops.begin());
  }
  return steps;
}

Problem RenderProblem(std::uint64_t seed, std::int64_t id,
                      const DifficultyMix& mix, const Vocabulary& vocab) {
  Rng rng(DeriveSeed(seed, "problem", static_cast<std::uint64_t>(id)));
  const double u = rng.Uniform();
  int num_ops = 3;
  if (u < mix.one_op) {
    num_ops = 1;
  } else if (u < mix.one_op + mix.two_op) {
    num_ops = 2;
  }
  Expression expr;
  expr.operands.push_back(static_cast<long long>(rng.Below(100)));
  for (int k = 0; k < num_ops; ++k) {
    expr.ops.push_back(kOps[rng.Below(kOps.size())]);
    expr.operands.push_back(static_cast<long long>(rng.Below(100)));
  }
  Problem p;
  p.id = id;
  p.difficulty = num_ops;
  Append(p.prompt_tokens, vocab.Number(expr.operands[0]));
  for (int k = 0; k < num_ops; ++k) {
    p.prompt_tokens.push_back(vocab.Id(std::string(1, expr.ops[k])));
    Append(p.prompt_tokens, vocab.Number(expr.operands[k + 1]));
  }
  p.prompt_tokens.push_back(vocab.Id("="));
  p.answer = std::to_string(Reduce(expr).back().result);
  return p;
}

namespace {

std::vector<Problem> Generate(std::uint64_t seed, std::size_t n,
                              const DifficultyMix& mix, const Vocabulary& vocab,
                              const std::set<TokenSeq>& exclude) {
  if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
  mix.Validate();
  std::vector<Problem> out;
  out.reserve(n);
  std::set<TokenSeq> seen;
  const std::int64_t max_candidates = static_cast<std::int64_t>(n) * 50 + 1000;
  for (std::int64_t id = 0; out.size() < n; ++id) {
    if (id >= max_candidates) {
      throw std::runtime_error("could not draw enough distinct problems");
    }
    Problem p = RenderProblem(seed, id, mix, vocab);
    if (exclude.count(p.prompt_tokens) != 0) continue;
    if (!seen.insert(p.prompt_tokens).second) continue;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<Problem> GenDataset(std::uint64_t seed, std::size_t n,
                                const DifficultyMix& mix,
                                const Vocabulary& vocab) {
  return Generate(seed, n, mix, vocab, {});
}

std::vector<Problem> GenEvalDataset(std::uint64_t train_seed, std::size_t n,
                                    const DifficultyMix& mix,
                                    const Vocabulary& vocab,
                                    std::span<const Problem> exclude) {
  std::set<TokenSeq> ex;
  for (const auto& p : exclude) ex.insert(p.prompt_tokens);
  return Generate(train_seed ^ kEvalSeedSalt, n, mix, vocab, ex);
}

Trace SynthTrace(const Problem& problem, TraceStyle style, Rng& rng,
                 const Vocabulary& vocab) {
  const auto steps = Reduce(ParseExpression(problem.prompt_tokens, vocab));
  const long long result = steps.back().result;

  std::array<bool, 4> dims{};
  if (style == TraceStyle::kReflective) {
    std::array<int, 4> order = {0, 1, 2, 3};
    for (int i = 3; i > 0; --i) {
      std::swap(order[i], order[rng.Below(static_cast<std::uint64_t>(i) + 1)]);
    }
    const int count = 2 + static_cast<int>(rng.Below(3));
    for (int i = 0; i < count; ++i) dims[order[i]] = true;
  }

  Trace t;
  t.problem_id = problem.id;
  t.prompt = problem.prompt_tokens;
  t.style = style;
  TokenSeq& out = t.tokens;
  const TokenId comma = vocab.Id(",");
  out.push_back(vocab.think_open());
  if (dims[kBackwardChaining]) {
    // State the unknown up front and close on it at the end.
    out.push_back(vocab.Id("need"));
    out.push_back(vocab.Id("x"));
    out.push_back(comma);
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    if (i > 0) out.push_back(comma);
    if (dims[kSubgoal]) out.push_back(vocab.Id(i == 0 ? "first" : "step"));
    if (i == 0 && dims[kBacktracking]) {
      const long long off = rng.Bernoulli(0.5) ? 1 : -1;
      AppendStep(out, vocab, s.lhs, s.op, s.rhs, s.result + off);
      out.push_back(vocab.Id("wait"));
    }
    AppendStep(out, vocab, s.lhs, s.op, s.rhs, s.result);
  }
  if (dims[kVerification]) {
    out.push_back(comma);
    out.push_back(vocab.Id("check"));
    Append(out, vocab.Number(result));
    out.push_back(vocab.Id("ok"));
  }
  if (dims[kBackwardChaining]) {
    out.push_back(comma);
    out.push_back(vocab.Id("so"));
    out.push_back(vocab.Id("x"));
    out.push_back(vocab.Id("="));
    Append(out, vocab.Number(result));
  }
  out.push_back(vocab.think_close());
  out.push_back(vocab.answer_open());
  Append(out, vocab.Number(result));
  out.push_back(vocab.answer_close());
  out.push_back(vocab.eos());
  return t;
}

}  // namespace forge
