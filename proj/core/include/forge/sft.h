#ifndef FORGE_SFT_H_
#define FORGE_SFT_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "forge/lora.h"
#include "forge/policy.h"
#include "forge/tasks.h"

namespace forge {

enum class SftMode { kFull, kLora };

struct LoraSettings {
  int rank = 4;
  double scale = 0.0;  // <= 0 means 1/rank
  std::vector<LoraTarget> targets = {LoraTarget::kW1, LoraTarget::kW2};

  bool operator==(const LoraSettings&) const = default;
};

struct SftConfig {
  SftMode mode = SftMode::kFull;
  std::optional<LoraSettings> lora;  // present iff mode == kLora
  double learning_rate = 1e-3;
  int epochs = 5;
  int batch_size = 16;
  std::uint64_t seed = 0;

  void Validate() const;  // throws std::invalid_argument
};

struct SftEpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean per-token NLL over the epoch's batches
};

struct SftResult {
  PolicyParams base;
  std::vector<LoraAdapter> adapters;  // empty in full mode
  std::vector<SftEpochRecord> history;

  PolicyParams Merged() const { return Merge(base, adapters); }
};

struct SftSinks {
  std::function<void(const SftEpochRecord&)> on_epoch;
  // Receives the last finite state before a NumericalError propagates.
  std::function<void(const SftResult&)> on_failure;
};

// Mean over traces of -log pi(target | prompt) / len(target). Uses the
// factored adapter forward pass when `adapters` is non-empty.
double NllLoss(const PolicyParams& params,
               std::span<const LoraAdapter> adapters,
               std::span<const Trace> batch);

// Teacher-forced training with Adam. Full mode updates every tensor; lora
// mode updates only adapter factors and leaves `start` bit-identical.
SftResult TrainSft(const PolicyParams& start, std::span<const Trace> traces,
                   const SftConfig& config, const SftSinks& sinks = {});

}  // namespace forge

#endif  // FORGE_SFT_H_
