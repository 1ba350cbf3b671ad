#ifndef FORGE_JSONL_H_
#define FORGE_JSONL_H_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "forge/grpo.h"
#include "forge/rewards.h"
#include "forge/sft.h"
#include "forge/tasks.h"
#include "forge/vocabulary.h"

namespace forge {

// Record layouts (one JSON object per line, text form for token fields):
//   problem     {"id", "prompt", "answer", "difficulty"}
//   trace       {"id", "prompt", "answer", "target", "style"}
//   diagnostics {"step", "J", "kl", "clip_fraction", "reward_mean",
//                "reward_std", "acc_mean", "fmt_mean", "refl_mean",
//                ["clamped"], ["eval_acc"]}
//   sft epoch   {"epoch", "loss"}
//   score       {"id", "r_acc", "r_fmt", "r_refl", "dims", "composite"}

std::string ProblemJson(const Problem& p, const Vocabulary& vocab);
Problem ParseProblemJson(const std::string& line, const Vocabulary& vocab);

std::string TraceJson(const Trace& t, const std::string& answer,
                      const Vocabulary& vocab);
Trace ParseTraceJson(const std::string& line, const Vocabulary& vocab);

std::string DiagnosticsJson(const StepDiagnostics& d);
StepDiagnostics ParseDiagnosticsJson(const std::string& line);

std::string SftEpochJson(const SftEpochRecord& r);

std::string ScoreJson(const std::string& id, const RewardBreakdown& b);

// Renders a double exactly as the JSON records do.
std::string JsonNumber(double v);

// Line-oriented file helpers. ReadLines skips blank lines and throws
// std::runtime_error naming a missing file.
std::vector<std::string> ReadLines(const std::filesystem::path& path);
void WriteLines(const std::filesystem::path& path,
                std::span<const std::string> lines);

}  // namespace forge

#endif  // FORGE_JSONL_H_
