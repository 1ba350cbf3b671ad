#ifndef FORGE_CONFIG_H_
#define FORGE_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "forge/grpo.h"
#include "forge/policy.h"
#include "forge/rewards.h"
#include "forge/sft.h"
#include "forge/tasks.h"

namespace forge {

// Every random stream of a run derives from one of these.
//   master  -> policy init, SFT shuffling, LoRA init
//   data    -> problems, trace styles and trace contents
//   rollout -> GRPO prompt picks and group sampling
struct Seeds {
  std::uint64_t master = 1;
  std::uint64_t data = 2;
  std::uint64_t rollout = 3;
};

struct DataConfig {
  std::size_t sft_traces = 2000;
  std::size_t grpo_prompts = 1000;
  std::size_t eval_problems = 200;
  DifficultyMix mix;
  double reflective_fraction = 0.3;  // share of SFT traces in reflective style
};

struct RewardConfig {
  std::string lexicon_version = "lexicon-v1";
};

struct StageToggles {
  bool skip_sft = false;
  bool use_lora = false;
};

// The full, serializable description of a run. Key paths are
// "<section>.<key>", e.g. "grpo.beta" or "rewards.lambda_refl"; see
// SerializeRunConfig for the complete list.
struct RunConfig {
  Seeds seeds;
  PolicyDims dims;
  DataConfig data;
  SftConfig sft;     // mode/lora/seed are filled from stages and seeds
  LoraSettings lora;
  GrpoHyper grpo;    // also carries the reward weights and eps_std
  RewardConfig rewards;
  StageToggles stages;
  int eval_max_len = 96;

  // SftConfig with mode, lora settings and seed resolved.
  SftConfig ResolvedSft() const;
  std::uint64_t InitSeed() const;
  void Validate() const;  // throws ConfigError
};

// Missing keys keep their defaults; unknown keys or wrong types throw
// ConfigError.
RunConfig ParseRunConfig(std::string_view text);
RunConfig LoadRunConfig(const std::filesystem::path& path);
// Deterministic, pretty-printed JSON with every key present.
std::string SerializeRunConfig(const RunConfig& config);

// Applies "section.key=value"; value is read as JSON when it parses, else as
// a string. Throws ConfigError on unknown keys or bad values.
void ApplyOverride(RunConfig& config, std::string_view assignment);

}  // namespace forge

#endif  // FORGE_CONFIG_H_
