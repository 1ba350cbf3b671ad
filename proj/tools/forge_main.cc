// forge: command-line driver for the training pipeline.
//
//   forge <subcommand> --config <path> [--set key=value ...] --out <dir>
//
// Exit codes: 0 success, 2 config error, 3 stage failure, 4 numerical
// failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "forge/config.h"
#include "forge/errors.h"
#include "forge/pipeline.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitNumerical = 4;

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

void AddCommon(CLI::App* cmd, CommonArgs& args, bool needs_out = true) {
  cmd->add_option("--config", args.config, "Run config (JSON)");
  cmd->add_option("--set", args.overrides, "Override a config key: section.key=value");
  auto* out = cmd->add_option("--out", args.out, "Output directory");
  if (needs_out) out->required();
}

forge::RunConfig LoadConfig(const CommonArgs& args) {
  forge::RunConfig config;
  if (!args.config.empty()) config = forge::LoadRunConfig(args.config);
  for (const auto& o : args.overrides) forge::ApplyOverride(config, o);
  config.Validate();
  return config;
}

void PrintReport(const forge::EvalReport& r) {
  std::cout << forge::kEvalSetLabel << " " << r.label << ": accuracy "
            << r.accuracy << ", format_rate " << r.format_rate
            << ", refl_mean " << r.refl_mean << ", n " << r.n << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forge: reflection-reward GRPO training on synthetic arithmetic"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string checkpoint;
  std::string diagnostics;
  std::string traces;
  std::string zero = "refl";

  auto* gen = app.add_subcommand("gen-data", "Write the datasets");
  AddCommon(gen, args);
  auto* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  AddCommon(eval, args);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  auto* sft = app.add_subcommand("sft", "Initialize and run supervised fine-tuning");
  AddCommon(sft, args);
  auto* grpo = app.add_subcommand("grpo", "Run GRPO from a checkpoint or a fresh init");
  AddCommon(grpo, args);
  grpo->add_option("--checkpoint", checkpoint, "Starting checkpoint");
  auto* run = app.add_subcommand("run", "Full pipeline: init, sft, grpo, eval");
  AddCommon(run, args);
  auto* ablate = app.add_subcommand("ablate", "Paired GRPO runs with zeroed reward terms");
  AddCommon(ablate, args);
  ablate->add_option("--zero", zero, "Comma list from acc,fmt,refl (may be empty)");
  auto* curves = app.add_subcommand("export-curves", "Diagnostics to CSV curves");
  AddCommon(curves, args);
  curves->add_option("--diagnostics", diagnostics, "GRPO diagnostics JSON Lines")
      ->required();
  auto* score = app.add_subcommand("score-traces", "Score a trace corpus");
  AddCommon(score, args);
  score->add_option("--traces", traces, "Trace corpus JSON Lines")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const forge::RunConfig config = LoadConfig(args);
    const fs::path out = args.out;
    if (gen->parsed()) {
      forge::RunGenData(config, out);
    } else if (eval->parsed()) {
      PrintReport(forge::RunEval(config, checkpoint, out));
    } else if (sft->parsed()) {
      const auto result = forge::RunSftStage(config, out);
      for (const auto& r : result.history) {
        std::cout << "epoch " << r.epoch << " loss " << r.loss << "\n";
      }
    } else if (grpo->parsed()) {
      std::optional<fs::path> start;
      if (!checkpoint.empty()) start = checkpoint;
      const auto result = forge::RunGrpoStage(config, start, out);
      std::cout << "grpo: " << result.diagnostics.size() << " steps\n";
    } else if (run->parsed()) {
      const auto result = forge::RunPipeline(config, out);
      for (const auto& r : result.reports) PrintReport(r);
    } else if (ablate->parsed()) {
      std::set<forge::RewardComponent> zeroed;
      std::stringstream ss(zero);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) zeroed.insert(forge::ParseRewardComponent(item));
      }
      const auto report = forge::RunAblation(config, zeroed, out);
      PrintReport(report.control.final_report);
      PrintReport(report.ablated.final_report);
      std::cout << "final-decile refl: control " << report.control.final_decile_refl
                << ", ablated " << report.ablated.final_decile_refl
                << "; spearman " << report.control_spearman << "\n";
    } else if (curves->parsed()) {
      forge::ExportCurves(diagnostics, out);
    } else if (score->parsed()) {
      forge::ScoreTraces(config, traces, out);
    }
  } catch (const forge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const forge::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const forge::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
