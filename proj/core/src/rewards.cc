#include "forge/rewards.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace forge {

ReflectionLexicon ReflectionLexicon::Default() {
  return {"lexicon-v1",
          {{{"check", "verify"},
            {"wait", "mistake", "redo"},
            {"first", "step", "goal"},
            {"need", "backwards"}}}};
}

ReflectionLexicon ReflectionLexicon::ByVersion(std::string_view version) {
  if (version == "lexicon-v1") return Default();
  throw std::invalid_argument("unknown lexicon version '" +
                              std::string(version) + "'");
}

void ReflectionLexicon::Validate(const Vocabulary& vocab) const {
  std::set<std::string> all;
  for (const auto& set : markers) {
    for (const auto& m : set) {
      if (!vocab.Find(m)) {
        throw std::invalid_argument("lexicon marker '" + m +
                                    "' is not a vocabulary symbol");
      }
      if (!all.insert(m).second) {
        throw std::invalid_argument("lexicon marker '" + m +
                                    "' appears in two dimensions");
      }
    }
  }
}

void RewardWeights::Validate() const {
  for (double w : {accuracy, format, reflection}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::invalid_argument("reward weights must be finite and >= 0");
    }
  }
}

std::optional<std::string> ExtractAnswer(std::span<const TokenId> tokens,
                                         const Vocabulary& vocab) {
  std::optional<std::size_t> open;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == vocab.answer_open()) {
      open = i;
    } else if (tokens[i] == vocab.answer_close() && open) {
      std::string out;
      for (std::size_t j = *open + 1; j < i; ++j) {
        if (tokens[j] == vocab.space()) continue;
        out += vocab.Symbol(tokens[j]);
      }
      return out;
    }
  }
  return std::nullopt;
}

std::string CanonicalizeAnswer(std::string_view answer) {
  std::string_view body = answer;
  const bool neg = !body.empty() && body.front() == '-';
  if (neg) body.remove_prefix(1);
  if (body.empty()) return std::string(answer);
  for (char c : body) {
    if (c < '0' || c > '9') return std::string(answer);
  }
  const std::size_t nz = body.find_first_not_of('0');
  if (nz == std::string_view::npos) return "0";
  return (neg ? "-" : "") + std::string(body.substr(nz));
}

double AccuracyReward(std::span<const TokenId> tokens,
                      std::string_view canonical_answer,
                      const Vocabulary& vocab) {
  auto extracted = ExtractAnswer(tokens, vocab);
  if (!extracted) return 0.0;
  return CanonicalizeAnswer(*extracted) == CanonicalizeAnswer(canonical_answer)
             ? 1.0
             : 0.0;
}

double FormatReward(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::size_t i = 0;
  const std::size_t n = tokens.size();
  if (n == 0 || tokens[i++] != vocab.think_open()) return 0.0;
  while (i < n && tokens[i] != vocab.think_close()) {
    if (vocab.IsStructural(tokens[i])) return 0.0;
    ++i;
  }
  if (i == n) return 0.0;
  ++i;  // </think>
  if (i == n || tokens[i++] != vocab.answer_open()) return 0.0;
  if (i < n && tokens[i] == vocab.minus()) ++i;
  const std::size_t digits_start = i;
  while (i < n && vocab.DigitValue(tokens[i]) >= 0) ++i;
  if (i == digits_start) return 0.0;
  if (i == n || tokens[i++] != vocab.answer_close()) return 0.0;
  if (i == n || tokens[i++] != vocab.eos()) return 0.0;
  return i == n ? 1.0 : 0.0;
}

ReflectionScore ReflectionReward(std::span<const TokenId> tokens,
                                 const ReflectionLexicon& lexicon,
                                 const Vocabulary& vocab) {
  ReflectionScore score;
  if (FormatReward(tokens, vocab) != 1.0) return score;
  // A valid format starts with <think> and has exactly one </think>.
  for (std::size_t i = 1; tokens[i] != vocab.think_close(); ++i) {
    const std::string& sym = vocab.Symbol(tokens[i]);
    for (std::size_t d = 0; d < kNumReflectionDims; ++d) {
      for (const auto& m : lexicon.markers[d]) {
        if (m == sym) score.dims[d] = true;
      }
    }
  }
  int count = 0;
  for (bool b : score.dims) count += b ? 1 : 0;
  score.value = count / 4.0;
  return score;
}

double CompositeReward(double r_acc, double r_fmt, double r_refl,
                       const RewardWeights& weights) {
  weights.Validate();
  return weights.accuracy * r_acc + weights.format * r_fmt +
         weights.reflection * r_refl;
}

std::vector<double> GroupAdvantages(std::span<const double> rewards,
                                    double eps_std) {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::invalid_argument("group size must be >= 2");
  std::vector<double> adv(g, 0.0);
  // Identical rewards carry no signal; the rounded mean of such a group can
  // differ from its members, so test for it directly.
  if (std::all_of(rewards.begin(), rewards.end(),
                  [&](double r) { return r == rewards[0]; })) {
    return adv;
  }
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std_dev = std::sqrt(var / static_cast<double>(g));
  if (std_dev == 0.0) return adv;
  for (std::size_t i = 0; i < g; ++i) {
    adv[i] = (rewards[i] - mean) / (std_dev + eps_std);
  }
  return adv;
}

RewardScorer::RewardScorer(const Vocabulary& vocab, ReflectionLexicon lexicon,
                           RewardWeights weights)
    : vocab_(&vocab), lexicon_(std::move(lexicon)), weights_(weights) {
  lexicon_.Validate(vocab);
  weights_.Validate();
}

RewardBreakdown RewardScorer::Score(std::span<const TokenId> tokens,
                                    std::string_view canonical_answer) const {
  RewardBreakdown b;
  b.r_acc = AccuracyReward(tokens, canonical_answer, *vocab_);
  b.r_fmt = FormatReward(tokens, *vocab_);
  const auto refl = ReflectionReward(tokens, lexicon_, *vocab_);
  b.r_refl = refl.value;
  b.dims = refl.dims;
  b.composite = CompositeReward(b.r_acc, b.r_fmt, b.r_refl, weights_);
  return b;
}

}  // namespace forge
