#ifndef FORGE_LORA_H_
#define FORGE_LORA_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "forge/policy.h"

namespace forge {

// Weight matrices an adapter may attach to. Bias vectors are never adapted.
enum class LoraTarget { kEmbedding, kW1, kW2 };

std::string_view LoraTargetName(LoraTarget target);  // "E", "W1", "W2"
LoraTarget ParseLoraTarget(std::string_view name);   // throws on unknown

// Rank-r update of a d x k matrix: delta = scale * B * A^T with
// B in R^{d x r} and A in R^{k x r}.
struct LoraAdapter {
  LoraTarget target = LoraTarget::kW1;
  int rank = 1;
  double scale = 1.0;
  Matrix a;  // k x r
  Matrix b;  // d x r

  std::size_t rows() const { return b.rows; }  // d
  std::size_t cols() const { return a.rows; }  // k
  // Number of trainable values, r * (d + k).
  std::size_t TrainableCount() const { return a.data.size() + b.data.size(); }
  Matrix Delta() const;

  bool operator==(const LoraAdapter&) const = default;
};

// (d, k) of the targeted matrix.
std::pair<std::size_t, std::size_t> TargetShape(const PolicyDims& dims,
                                                LoraTarget target);

// A ~ U(-1/sqrt(k), 1/sqrt(k)), B = 0, so the initial delta is exactly zero.
// A non-positive `scale` selects the default 1/r. Throws std::invalid_argument
// when rank < 1 or rank > min(d, k).
LoraAdapter InitAdapter(std::uint64_t seed, const PolicyDims& dims,
                        LoraTarget target, int rank, double scale = 0.0);

// base + scale * B * A^T. Throws std::invalid_argument on shape mismatch.
Matrix EffectiveWeight(const Matrix& base, const LoraAdapter& adapter);

// Replaces every targeted matrix with its effective weight. Throws on
// duplicate targets or shape mismatch.
PolicyParams Merge(const PolicyParams& params,
                   std::span<const LoraAdapter> adapters);

// Forward pass that keeps the adapters factored: x W + scale (x B) A^T.
std::vector<double> AdaptedLogits(const PolicyParams& params,
                                  std::span<const LoraAdapter> adapters,
                                  std::span<const TokenId> context);

SequenceLogprob AdaptedSequenceLogProb(const PolicyParams& params,
                                       std::span<const LoraAdapter> adapters,
                                       std::span<const TokenId> prompt,
                                       std::span<const TokenId> tokens);

struct AdapterGradient {
  Matrix a;
  Matrix b;
};

// Gradient of sum_i w_i log pi(tokens_i | prompt_i) with respect to each
// adapter's (A, B); result is parallel to `adapters`. Base weights get none.
std::vector<AdapterGradient> AdapterGrad(
    const PolicyParams& params, std::span<const LoraAdapter> adapters,
    std::span<const WeightedSequence> items);

std::size_t TrainableParameterCount(std::span<const LoraAdapter> adapters);
// Values a full-parameter update of the same matrices would train, sum d*k.
std::size_t FullParameterCount(std::span<const LoraAdapter> adapters);

}  // namespace forge

#endif  // FORGE_LORA_H_
