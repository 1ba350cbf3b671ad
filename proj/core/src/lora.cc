#include "forge/lora.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace forge {
namespace {

const Matrix& BaseMatrix(const PolicyParams& p, LoraTarget target) {
  switch (target) {
    case LoraTarget::kEmbedding:
      return p.embedding;
    case LoraTarget::kW1:
      return p.w1;
    case LoraTarget::kW2:
      return p.w2;
  }
  throw std::invalid_argument("bad lora target");
}

Matrix& BaseMatrix(PolicyParams& p, LoraTarget target) {
  return const_cast<Matrix&>(
      BaseMatrix(static_cast<const PolicyParams&>(p), target));
}

const LoraAdapter* FindAdapter(std::span<const LoraAdapter> adapters,
                               LoraTarget target) {
  const LoraAdapter* found = nullptr;
  for (const auto& a : adapters) {
    if (a.target != target) continue;
    if (found != nullptr) {
      throw std::invalid_argument("duplicate lora target " +
                                  std::string(LoraTargetName(target)));
    }
    found = &a;
  }
  return found;
}

void CheckAdapterShape(const PolicyDims& dims, const LoraAdapter& a) {
  auto [d, k] = TargetShape(dims, a.target);
  const auto r = static_cast<std::size_t>(a.rank);
  if (a.b.rows != d || a.b.cols != r || a.a.rows != k || a.a.cols != r) {
    throw std::invalid_argument("lora adapter shape does not match target " +
                                std::string(LoraTargetName(a.target)));
  }
}

// out[c] += scale * sum_q (x B)[q] A[c][q]
void AddLowRank(std::span<const double> x, const LoraAdapter& ad,
                std::span<double> out) {
  const std::size_t r = static_cast<std::size_t>(ad.rank);
  std::vector<double> xb(r, 0.0);
  for (std::size_t i = 0; i < ad.b.rows; ++i) {
    for (std::size_t q = 0; q < r; ++q) xb[q] += x[i] * ad.b(i, q);
  }
  for (std::size_t c = 0; c < ad.a.rows; ++c) {
    double s = 0.0;
    for (std::size_t q = 0; q < r; ++q) s += xb[q] * ad.a(c, q);
    out[c] += ad.scale * s;
  }
}

}  // namespace

std::string_view LoraTargetName(LoraTarget target) {
  switch (target) {
    case LoraTarget::kEmbedding:
      return "E";
    case LoraTarget::kW1:
      return "W1";
    case LoraTarget::kW2:
      return "W2";
  }
  return "?";
}

LoraTarget ParseLoraTarget(std::string_view name) {
  if (name == "E") return LoraTarget::kEmbedding;
  if (name == "W1") return LoraTarget::kW1;
  if (name == "W2") return LoraTarget::kW2;
  throw std::invalid_argument("unknown lora target '" + std::string(name) +
                              "' (expected E, W1 or W2)");
}

Matrix LoraAdapter::Delta() const {
  Matrix delta(rows(), cols());
  for (std::size_t i = 0; i < rows(); ++i) {
    for (std::size_t j = 0; j < cols(); ++j) {
      double s = 0.0;
      for (int q = 0; q < rank; ++q) s += b(i, q) * a(j, q);
      delta(i, j) = scale * s;
    }
  }
  return delta;
}

std::pair<std::size_t, std::size_t> TargetShape(const PolicyDims& dims,
                                                LoraTarget target) {
  switch (target) {
    case LoraTarget::kEmbedding:
      return {dims.vocab, dims.embed};
    case LoraTarget::kW1:
      return {dims.input(), dims.hidden};
    case LoraTarget::kW2:
      return {dims.hidden, dims.vocab};
  }
  throw std::invalid_argument("bad lora target");
}

LoraAdapter InitAdapter(std::uint64_t seed, const PolicyDims& dims,
                        LoraTarget target, int rank, double scale) {
  auto [d, k] = TargetShape(dims, target);
  if (rank < 1 || static_cast<std::size_t>(rank) > std::min(d, k)) {
    throw std::invalid_argument(
        "lora rank " + std::to_string(rank) + " outside [1, min(" +
        std::to_string(d) + ", " + std::to_string(k) + ")] for target " +
        std::string(LoraTargetName(target)));
  }
  LoraAdapter ad;
  ad.target = target;
  ad.rank = rank;
  ad.scale = scale > 0.0 ? scale : 1.0 / rank;
  ad.a = Matrix(k, rank);
  ad.b = Matrix(d, rank);
  Rng rng(DeriveSeed(seed, "lora", static_cast<std::uint64_t>(target)));
  const double s = 1.0 / std::sqrt(static_cast<double>(k));
  for (double& v : ad.a.data) v = rng.Uniform(-s, s);
  return ad;
}

Matrix EffectiveWeight(const Matrix& base, const LoraAdapter& adapter) {
  if (base.rows != adapter.rows() || base.cols != adapter.cols() ||
      adapter.a.cols != static_cast<std::size_t>(adapter.rank) ||
      adapter.b.cols != static_cast<std::size_t>(adapter.rank)) {
    throw std::invalid_argument("effective_weight: adapter shape mismatch");
  }
  Matrix out = base;
  Matrix delta = adapter.Delta();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += delta.data[i];
  return out;
}

PolicyParams Merge(const PolicyParams& params,
                   std::span<const LoraAdapter> adapters) {
  std::set<LoraTarget> seen;
  for (const auto& a : adapters) {
    if (!seen.insert(a.target).second) {
      throw std::invalid_argument("duplicate lora target " +
                                  std::string(LoraTargetName(a.target)));
    }
    CheckAdapterShape(params.dims, a);
  }
  PolicyParams merged = params;
  for (const auto& a : adapters) {
    BaseMatrix(merged, a.target) = EffectiveWeight(BaseMatrix(params, a.target), a);
  }
  return merged;
}

std::vector<double> AdaptedLogits(const PolicyParams& params,
                                  std::span<const LoraAdapter> adapters,
                                  std::span<const TokenId> context) {
  const auto& d = params.dims;
  if (context.size() != static_cast<std::size_t>(d.context)) {
    throw std::invalid_argument("context window has wrong length");
  }
  for (const auto& a : adapters) CheckAdapterShape(d, a);
  const LoraAdapter* emb = FindAdapter(adapters, LoraTarget::kEmbedding);
  const LoraAdapter* l1 = FindAdapter(adapters, LoraTarget::kW1);
  const LoraAdapter* l2 = FindAdapter(adapters, LoraTarget::kW2);

  std::vector<double> x(d.input(), 0.0);
  for (int k = 0; k < d.context; ++k) {
    const TokenId t = context[k];
    if (t < 0 || t >= d.vocab) {
      throw std::out_of_range("token id " + std::to_string(t) +
                              " outside vocabulary");
    }
    std::span<double> slot(x.data() + k * d.embed, d.embed);
    for (int e = 0; e < d.embed; ++e) slot[e] = params.embedding(t, e);
    if (emb != nullptr) {
      // One-hot row selection: (e_t B) A^T = B[t] A^T.
      std::vector<double> onehot(d.vocab, 0.0);
      onehot[t] = 1.0;
      AddLowRank(onehot, *emb, slot);
    }
  }
  std::vector<double> hidden(params.b1);
  for (int i = 0; i < d.input(); ++i) {
    for (int j = 0; j < d.hidden; ++j) hidden[j] += x[i] * params.w1(i, j);
  }
  if (l1 != nullptr) AddLowRank(x, *l1, hidden);
  for (double& h : hidden) h = std::tanh(h);
  std::vector<double> logits(params.b2);
  for (int j = 0; j < d.hidden; ++j) {
    for (int v = 0; v < d.vocab; ++v) logits[v] += hidden[j] * params.w2(j, v);
  }
  if (l2 != nullptr) AddLowRank(hidden, *l2, logits);
  return logits;
}

SequenceLogprob AdaptedSequenceLogProb(const PolicyParams& params,
                                       std::span<const LoraAdapter> adapters,
                                       std::span<const TokenId> prompt,
                                       std::span<const TokenId> tokens) {
  if (tokens.empty()) {
    throw std::invalid_argument("sequence_logprob needs at least one token");
  }
  SequenceLogprob out;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    TokenSeq ctx = ContextWindow(prompt, tokens, t, params.dims.context);
    std::vector<double> logits = AdaptedLogits(params, adapters, ctx);
    if (tokens[t] < 0 || tokens[t] >= params.dims.vocab) {
      throw std::out_of_range("token id outside vocabulary");
    }
    const double lp = logits[tokens[t]] - LogSumExp(logits);
    out.per_token.push_back(lp);
    out.total += lp;
  }
  return out;
}

std::vector<AdapterGradient> AdapterGrad(
    const PolicyParams& params, std::span<const LoraAdapter> adapters,
    std::span<const WeightedSequence> items) {
  // d/dB f(W + s B A^T) = s G A and d/dA = s G^T B, where G is the gradient
  // with respect to the effective weight.
  const PolicyParams merged = Merge(params, adapters);
  const Gradient dense = GradWeightedLogprob(merged, items);
  std::vector<AdapterGradient> out;
  out.reserve(adapters.size());
  for (const auto& ad : adapters) {
    const Matrix* g = nullptr;
    switch (ad.target) {
      case LoraTarget::kEmbedding:
        g = &dense.embedding;
        break;
      case LoraTarget::kW1:
        g = &dense.w1;
        break;
      case LoraTarget::kW2:
        g = &dense.w2;
        break;
    }
    const std::size_t r = static_cast<std::size_t>(ad.rank);
    AdapterGradient ag{Matrix(ad.a.rows, r), Matrix(ad.b.rows, r)};
    for (std::size_t i = 0; i < ad.rows(); ++i) {
      for (std::size_t j = 0; j < ad.cols(); ++j) {
        const double gij = (*g)(i, j) * ad.scale;
        if (gij == 0.0) continue;
        for (std::size_t q = 0; q < r; ++q) {
          ag.b(i, q) += gij * ad.a(j, q);
          ag.a(j, q) += gij * ad.b(i, q);
        }
      }
    }
    out.push_back(std::move(ag));
  }
  return out;
}

std::size_t TrainableParameterCount(std::span<const LoraAdapter> adapters) {
  std::size_t n = 0;
  for (const auto& a : adapters) n += a.TrainableCount();
  return n;
}

std::size_t FullParameterCount(std::span<const LoraAdapter> adapters) {
  std::size_t n = 0;
  for (const auto& a : adapters) n += a.rows() * a.cols();
  return n;
}

}  // namespace forge
