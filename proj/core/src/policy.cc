#include "forge/policy.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace forge {
namespace {

struct Activations {
  std::vector<double> input;   // C*d_e
  std::vector<double> hidden;  // tanh output, h
  std::vector<double> logits;  // V
};

void CheckContext(const PolicyDims& dims, std::span<const TokenId> context) {
  if (context.size() != static_cast<std::size_t>(dims.context)) {
    throw std::invalid_argument("context window has " +
                                std::to_string(context.size()) +
                                " tokens, expected " +
                                std::to_string(dims.context));
  }
  for (TokenId t : context) {
    if (t < 0 || t >= dims.vocab) {
      throw std::out_of_range("token id " + std::to_string(t) +
                              " outside vocabulary of size " +
                              std::to_string(dims.vocab));
    }
  }
}

void CheckTokens(const PolicyDims& dims, std::span<const TokenId> tokens) {
  for (TokenId t : tokens) {
    if (t < 0 || t >= dims.vocab) {
      throw std::out_of_range("token id " + std::to_string(t) +
                              " outside vocabulary of size " +
                              std::to_string(dims.vocab));
    }
  }
}

void Forward(const PolicyParams& p, std::span<const TokenId> context,
             Activations& act) {
  const auto& d = p.dims;
  act.input.resize(d.input());
  for (int k = 0; k < d.context; ++k) {
    auto row = p.embedding.Row(context[k]);
    std::copy(row.begin(), row.end(), act.input.begin() + k * d.embed);
  }
  act.hidden.assign(p.b1.begin(), p.b1.end());
  for (int i = 0; i < d.input(); ++i) {
    const double x = act.input[i];
    if (x == 0.0) continue;
    auto w = p.w1.Row(i);
    for (int j = 0; j < d.hidden; ++j) act.hidden[j] += x * w[j];
  }
  for (double& h : act.hidden) h = std::tanh(h);
  act.logits.assign(p.b2.begin(), p.b2.end());
  for (int j = 0; j < d.hidden; ++j) {
    const double a = act.hidden[j];
    auto w = p.w2.Row(j);
    for (int v = 0; v < d.vocab; ++v) act.logits[v] += a * w[v];
  }
}

// Accumulates into `grad` the gradient of `weight * log p(target)` at one
// position, given that position's activations.
void BackwardPosition(const PolicyParams& p, std::span<const TokenId> context,
                      const Activations& act, TokenId target, double weight,
                      Gradient& grad, std::vector<double>& scratch_logits,
                      std::vector<double>& scratch_hidden,
                      std::vector<double>& scratch_input) {
  const auto& d = p.dims;
  // dlogits = weight * (onehot(target) - softmax)
  const double lse = LogSumExp(act.logits);
  scratch_logits.resize(d.vocab);
  for (int v = 0; v < d.vocab; ++v) {
    scratch_logits[v] = -weight * std::exp(act.logits[v] - lse);
  }
  scratch_logits[target] += weight;

  for (int v = 0; v < d.vocab; ++v) grad.b2[v] += scratch_logits[v];
  scratch_hidden.assign(d.hidden, 0.0);
  for (int j = 0; j < d.hidden; ++j) {
    const double a = act.hidden[j];
    auto gw = grad.w2.Row(j);
    auto w = p.w2.Row(j);
    double da = 0.0;
    for (int v = 0; v < d.vocab; ++v) {
      gw[v] += a * scratch_logits[v];
      da += w[v] * scratch_logits[v];
    }
    scratch_hidden[j] = da * (1.0 - a * a);
  }
  for (int j = 0; j < d.hidden; ++j) grad.b1[j] += scratch_hidden[j];
  scratch_input.assign(d.input(), 0.0);
  for (int i = 0; i < d.input(); ++i) {
    const double x = act.input[i];
    auto gw = grad.w1.Row(i);
    auto w = p.w1.Row(i);
    double dx = 0.0;
    for (int j = 0; j < d.hidden; ++j) {
      gw[j] += x * scratch_hidden[j];
      dx += w[j] * scratch_hidden[j];
    }
    scratch_input[i] = dx;
  }
  for (int k = 0; k < d.context; ++k) {
    auto ge = grad.embedding.Row(context[k]);
    for (int e = 0; e < d.embed; ++e) ge[e] += scratch_input[k * d.embed + e];
  }
}

}  // namespace

void PolicyDims::Validate() const {
  if (vocab < 1 || embed < 1 || context < 1 || hidden < 1) {
    throw std::invalid_argument("policy dims must all be >= 1");
  }
}

template <class Tag>
bool ParamTensors<Tag>::AllFinite() const {
  for (auto t : Tensors()) {
    for (double v : t) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template struct ParamTensors<ParamsTag>;
template struct ParamTensors<GradientTag>;

Gradient& Gradient::operator+=(const Gradient& other) {
  AddScaled(other, 1.0);
  return *this;
}

void Gradient::AddScaled(const Gradient& other, double scale) {
  if (!(dims == other.dims)) {
    throw std::invalid_argument("gradient shape mismatch");
  }
  auto dst = Tensors();
  auto src = other.Tensors();
  for (std::size_t t = 0; t < kNumTensors; ++t) {
    for (std::size_t i = 0; i < dst[t].size(); ++i) {
      dst[t][i] += scale * src[t][i];
    }
  }
}

void Gradient::Scale(double factor) {
  for (auto t : Tensors()) {
    for (double& v : t) v *= factor;
  }
}

bool Gradient::IsZero() const {
  for (auto t : Tensors()) {
    for (double v : t) {
      if (v != 0.0) return false;
    }
  }
  return true;
}

PolicyParams InitParams(std::uint64_t seed, const PolicyDims& dims) {
  PolicyParams p = PolicyParams::Zeros(dims);
  Rng rng(DeriveSeed(seed, "init_params"));
  auto fill = [&rng](Matrix& m, int fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : m.data) v = rng.Uniform(-s, s);
  };
  fill(p.embedding, dims.vocab);
  fill(p.w1, dims.input());
  fill(p.w2, dims.hidden);
  return p;
}

TokenSeq ContextWindow(std::span<const TokenId> prompt,
                       std::span<const TokenId> tokens, std::size_t pos,
                       int context) {
  TokenSeq window(context, kPadToken);
  // History is prompt ++ tokens[0, pos).
  const std::size_t history = prompt.size() + pos;
  for (int k = 0; k < context; ++k) {
    const std::size_t back = static_cast<std::size_t>(context - k);
    if (back > history) continue;
    const std::size_t idx = history - back;
    window[k] = idx < prompt.size() ? prompt[idx] : tokens[idx - prompt.size()];
  }
  return window;
}

std::vector<double> NextTokenLogits(const PolicyParams& params,
                                    std::span<const TokenId> context) {
  CheckContext(params.dims, context);
  Activations act;
  Forward(params, context, act);
  return std::move(act.logits);
}

double LogSumExp(std::span<const double> values) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> LogSoftmax(std::span<const double> logits) {
  const double lse = LogSumExp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

SequenceLogprob SequenceLogProb(const PolicyParams& params,
                                std::span<const TokenId> prompt,
                                std::span<const TokenId> tokens) {
  if (tokens.empty()) {
    throw std::invalid_argument("sequence_logprob needs at least one token");
  }
  CheckTokens(params.dims, prompt);
  CheckTokens(params.dims, tokens);
  SequenceLogprob out;
  out.per_token.reserve(tokens.size());
  Activations act;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    TokenSeq ctx = ContextWindow(prompt, tokens, t, params.dims.context);
    Forward(params, ctx, act);
    const double lp = act.logits[tokens[t]] - LogSumExp(act.logits);
    out.per_token.push_back(lp);
    out.total += lp;
  }
  return out;
}

Completion SampleCompletion(const PolicyParams& params,
                            std::span<const TokenId> prompt,
                            const DecodeOptions& decode, TokenId eos,
                            Rng& rng) {
  constexpr TokenId pad = kPadToken;
  if (decode.max_len < 1) {
    throw std::invalid_argument("decode max_len must be >= 1");
  }
  if (!decode.greedy && !(decode.temperature > 0.0)) {
    throw std::invalid_argument("sampling temperature must be > 0");
  }
  CheckTokens(params.dims, prompt);
  const int vocab = params.dims.vocab;
  Completion c;
  c.prompt.assign(prompt.begin(), prompt.end());
  Activations act;
  std::vector<double> weights(vocab);
  while (static_cast<int>(c.tokens.size()) < decode.max_len) {
    TokenSeq ctx =
        ContextWindow(prompt, c.tokens, c.tokens.size(), params.dims.context);
    Forward(params, ctx, act);
    const double lse = LogSumExp(act.logits);
    TokenId next = -1;
    if (decode.greedy) {
      double best = -std::numeric_limits<double>::infinity();
      for (int v = 0; v < vocab; ++v) {
        if (v == pad) continue;
        if (act.logits[v] > best) {
          best = act.logits[v];
          next = v;
        }
      }
    } else {
      double m = -std::numeric_limits<double>::infinity();
      for (int v = 0; v < vocab; ++v) {
        if (v != pad) m = std::max(m, act.logits[v] / decode.temperature);
      }
      double total = 0.0;
      for (int v = 0; v < vocab; ++v) {
        weights[v] =
            v == pad ? 0.0 : std::exp(act.logits[v] / decode.temperature - m);
        total += weights[v];
      }
      double u = rng.Uniform() * total;
      for (int v = 0; v < vocab; ++v) {
        if (weights[v] == 0.0) continue;
        next = v;
        u -= weights[v];
        if (u < 0.0) break;
      }
    }
    const double lp = act.logits[next] - lse;
    c.tokens.push_back(next);
    c.per_token_logprob.push_back(lp);
    c.total_logprob += lp;
    if (next == eos) break;
  }
  return c;
}

Gradient GradTokenWeightedLogprob(
    const PolicyParams& params, std::span<const TokenWeightedSequence> items) {
  Gradient grad(params.dims);
  Activations act;
  std::vector<double> s_logits, s_hidden, s_input;
  for (const auto& item : items) {
    if (item.token_weights.size() != item.tokens.size()) {
      throw std::invalid_argument("token_weights length differs from tokens");
    }
    CheckTokens(params.dims, item.prompt);
    CheckTokens(params.dims, item.tokens);
    for (std::size_t t = 0; t < item.tokens.size(); ++t) {
      const double w = item.token_weights[t];
      if (!std::isfinite(w)) {
        throw std::invalid_argument("non-finite sequence weight");
      }
      if (w == 0.0) continue;
      TokenSeq ctx =
          ContextWindow(item.prompt, item.tokens, t, params.dims.context);
      Forward(params, ctx, act);
      BackwardPosition(params, ctx, act, item.tokens[t], w, grad, s_logits,
                       s_hidden, s_input);
    }
  }
  return grad;
}

Gradient GradWeightedLogprob(const PolicyParams& params,
                             std::span<const WeightedSequence> items) {
  std::vector<std::vector<double>> weights;
  std::vector<TokenWeightedSequence> expanded;
  weights.reserve(items.size());
  expanded.reserve(items.size());
  for (const auto& item : items) {
    weights.emplace_back(item.tokens.size(), item.weight);
    expanded.push_back({item.prompt, item.tokens, weights.back()});
  }
  return GradTokenWeightedLogprob(params, expanded);
}

}  // namespace forge
