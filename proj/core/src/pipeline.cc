#include "forge/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "forge/errors.h"
#include "forge/jsonl.h"

namespace forge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Runs one stage; numerical failures keep their type, anything else becomes a
// StageError naming the stage.
template <class F>
auto InStage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const NumericalError& e) {
    throw NumericalError("stage '" + stage + "': " + e.what());
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void SaveParams(const fs::path& path, const PolicyParams& params,
                std::vector<LoraAdapter> adapters = {}) {
  SaveCheckpoint(path, Checkpoint{Vocabulary::Default(), params,
                                  std::move(adapters)});
}

std::string EvalReportJson(const EvalReport& r) {
  json j = {{"eval", kEvalSetLabel},
            {"label", r.label},
            {"accuracy", r.accuracy},
            {"format_rate", r.format_rate},
            {"refl_mean", r.refl_mean},
            {"n", r.n}};
  return j.dump();
}

std::string Fixed(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << v;
  return ss.str();
}

std::string ComparisonTable(std::span<const EvalReport> reports) {
  std::size_t width = 5;
  for (const auto& r : reports) width = std::max(width, r.label.size());
  std::ostringstream ss;
  ss << kEvalSetLabel << "\n";
  ss << std::left << std::setw(static_cast<int>(width)) << "model"
     << std::right << std::setw(10) << "accuracy" << std::setw(13)
     << "format_rate" << std::setw(11) << "refl_mean" << std::setw(6) << "n"
     << "\n";
  for (const auto& r : reports) {
    ss << std::left << std::setw(static_cast<int>(width)) << r.label
       << std::right << std::setw(10) << Fixed(r.accuracy) << std::setw(13)
       << Fixed(r.format_rate) << std::setw(11) << Fixed(r.refl_mean)
       << std::setw(6) << r.n << "\n";
  }
  return ss.str();
}

void WriteComparison(const fs::path& out, std::span<const EvalReport> reports) {
  WriteText(out / "report" / "comparison.txt", ComparisonTable(reports));
  std::vector<std::string> lines;
  for (const auto& r : reports) lines.push_back(EvalReportJson(r));
  WriteLines(out / "report" / "comparison.jsonl", lines);
}

void WriteDiagnostics(const fs::path& path,
                      std::span<const StepDiagnostics> diag) {
  std::vector<std::string> lines;
  lines.reserve(diag.size());
  for (const auto& d : diag) lines.push_back(DiagnosticsJson(d));
  WriteLines(path, lines);
}

void WriteSftHistory(const fs::path& path,
                     std::span<const SftEpochRecord> history) {
  std::vector<std::string> lines;
  for (const auto& r : history) lines.push_back(SftEpochJson(r));
  WriteLines(path, lines);
}

PolicyParams Init(const RunConfig& config) {
  return InitParams(config.InitSeed(), config.dims);
}

SftResult TrainSftStage(const RunConfig& config, const PolicyParams& base,
                        const Datasets& data, const fs::path& out) {
  SftSinks sinks;
  sinks.on_failure = [&](const SftResult& last) {
    SaveParams(out / "checkpoints" / "sft_last_finite.ckpt", last.base,
               last.adapters);
  };
  SftResult sft = TrainSft(base, data.sft_traces, config.ResolvedSft(), sinks);
  WriteSftHistory(out / "diagnostics" / "sft_loss.jsonl", sft.history);
  SaveParams(out / "checkpoints" / "sft.ckpt", sft.Merged());
  if (!sft.adapters.empty()) {
    SaveParams(out / "checkpoints" / "sft_adapters.ckpt", sft.base,
               sft.adapters);
  }
  return sft;
}

GrpoResult TrainGrpoStage(const RunConfig& config, const PolicyParams& start,
                          const Datasets& data, const RewardScorer& scorer,
                          const fs::path& dir, const fs::path& ckpt) {
  GrpoSinks sinks;
  sinks.on_failure = [&](const PolicyParams& last) {
    SaveParams(dir / "checkpoints" / "grpo_last_finite.ckpt", last);
  };
  sinks.evaluate = [&](const PolicyParams& p) {
    return Evaluate(p, data.eval_problems, scorer, config.eval_max_len, "grpo")
        .accuracy;
  };
  GrpoResult result =
      TrainGrpo(start, data.grpo_problems, config.grpo, scorer.vocab(),
                scorer.lexicon(), config.seeds.rollout, sinks);
  const fs::path diag = dir / "diagnostics" / "grpo.jsonl";
  WriteDiagnostics(diag, result.diagnostics);
  ExportCurves(diag, dir / "curves");
  SaveParams(ckpt, result.params);
  return result;
}

std::string JsonRatio(double v) {
  return std::isfinite(v) ? JsonNumber(v) : (v > 0 ? "inf" : "nan");
}

}  // namespace

ParamsGreedyPolicy::ParamsGreedyPolicy(const PolicyParams& params,
                                       const Vocabulary& vocab, int max_len)
    : params_(&params), eos_(vocab.eos()), max_len_(max_len) {}

TokenSeq ParamsGreedyPolicy::Complete(const Problem& problem) const {
  DecodeOptions decode;
  decode.greedy = true;
  decode.max_len = max_len_;
  Rng unused(0);
  return SampleCompletion(*params_, problem.prompt_tokens, decode, eos_, unused)
      .tokens;
}

EvalReport Evaluate(const GreedyPolicy& policy,
                    std::span<const Problem> eval_set,
                    const RewardScorer& scorer, const std::string& label) {
  if (eval_set.empty()) throw std::invalid_argument("eval set is empty");
  EvalReport r;
  r.label = label;
  r.n = eval_set.size();
  for (const auto& p : eval_set) {
    const TokenSeq tokens = policy.Complete(p);
    const RewardBreakdown b = scorer.Score(tokens, p.answer);
    r.accuracy += b.r_acc;
    r.format_rate += b.r_fmt;
    r.refl_mean += b.r_refl;
  }
  const double n = static_cast<double>(r.n);
  r.accuracy /= n;
  r.format_rate /= n;
  r.refl_mean /= n;
  return r;
}

EvalReport Evaluate(const PolicyParams& params,
                    std::span<const Problem> eval_set,
                    const RewardScorer& scorer, int max_len,
                    const std::string& label) {
  return Evaluate(ParamsGreedyPolicy(params, scorer.vocab(), max_len),
                  eval_set, scorer, label);
}

Datasets BuildDatasets(const RunConfig& config, const Vocabulary& vocab) {
  const auto& dc = config.data;
  const std::vector<Problem> pool = GenDataset(
      config.seeds.data, dc.sft_traces + dc.grpo_prompts, dc.mix, vocab);
  Datasets d;
  d.sft_problems.assign(pool.begin(),
                        pool.begin() + static_cast<std::ptrdiff_t>(dc.sft_traces));
  d.grpo_problems.assign(
      pool.begin() + static_cast<std::ptrdiff_t>(dc.sft_traces), pool.end());
  d.eval_problems =
      GenEvalDataset(config.seeds.data, dc.eval_problems, dc.mix, vocab, pool);
  Rng rng(DeriveSeed(config.seeds.data, "trace"));
  for (const auto& p : d.sft_problems) {
    const TraceStyle style = rng.Bernoulli(dc.reflective_fraction)
                                 ? TraceStyle::kReflective
                                 : TraceStyle::kPlain;
    d.sft_traces.push_back(SynthTrace(p, style, rng, vocab));
  }
  return d;
}

void WriteDatasets(const Datasets& data, const Vocabulary& vocab,
                   const fs::path& out) {
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < data.sft_traces.size(); ++i) {
    lines.push_back(
        TraceJson(data.sft_traces[i], data.sft_problems[i].answer, vocab));
  }
  WriteLines(out / "data" / "sft_traces.jsonl", lines);
  lines.clear();
  for (const auto& p : data.grpo_problems) lines.push_back(ProblemJson(p, vocab));
  WriteLines(out / "data" / "grpo_prompts.jsonl", lines);
  lines.clear();
  for (const auto& p : data.eval_problems) lines.push_back(ProblemJson(p, vocab));
  WriteLines(out / "data" / "eval_problems.jsonl", lines);
}

RewardScorer MakeScorer(const RunConfig& config, const Vocabulary& vocab) {
  return RewardScorer(vocab,
                      ReflectionLexicon::ByVersion(config.rewards.lexicon_version),
                      config.grpo.weights);
}

OutputLock::OutputLock(const fs::path& out) : path_(out / ".forge.lock") {
  fs::create_directories(out);
  std::FILE* f = std::fopen(path_.string().c_str(), "wx");
  if (f == nullptr) {
    path_.clear();
    throw StageError("lock", "output directory " + out.string() +
                                 " is in use by another run (" +
                                 (out / ".forge.lock").string() + " exists)");
  }
  std::fclose(f);
}

OutputLock::~OutputLock() {
  if (path_.empty()) return;
  std::error_code ec;
  fs::remove(path_, ec);
}

PipelineResult RunPipeline(const RunConfig& config, const fs::path& out) {
  config.Validate();
  OutputLock lock(out);
  const Vocabulary vocab = Vocabulary::Default();
  const RewardScorer scorer = MakeScorer(config, vocab);
  WriteText(out / "config.json", SerializeRunConfig(config));

  const Datasets data = InStage("data", [&] {
    Datasets d = BuildDatasets(config, vocab);
    WriteDatasets(d, vocab, out);
    return d;
  });

  PipelineResult result;
  const PolicyParams base = InStage("base", [&] {
    PolicyParams p = Init(config);
    SaveParams(out / "checkpoints" / "base.ckpt", p);
    result.reports.push_back(Evaluate(p, data.eval_problems, scorer,
                                      config.eval_max_len, "base"));
    WriteComparison(out, result.reports);
    return p;
  });

  PolicyParams start = base;
  if (!config.stages.skip_sft) {
    start = InStage("sft", [&] {
      SftResult sft = TrainSftStage(config, base, data, out);
      result.sft_history = sft.history;
      PolicyParams merged = sft.Merged();
      result.reports.push_back(Evaluate(merged, data.eval_problems, scorer,
                                        config.eval_max_len, "sft"));
      WriteComparison(out, result.reports);
      return merged;
    });
  }

  const PolicyParams tuned = InStage("grpo", [&] {
    GrpoResult g = TrainGrpoStage(config, start, data, scorer, out,
                                  out / "checkpoints" / "grpo.ckpt");
    result.grpo_diagnostics = std::move(g.diagnostics);
    return std::move(g.params);
  });

  InStage("eval", [&] {
    result.reports.push_back(Evaluate(tuned, data.eval_problems, scorer,
                                      config.eval_max_len, "grpo"));
    WriteComparison(out, result.reports);
  });
  return result;
}

void RunGenData(const RunConfig& config, const fs::path& out) {
  config.Validate();
  OutputLock lock(out);
  const Vocabulary vocab = Vocabulary::Default();
  WriteText(out / "config.json", SerializeRunConfig(config));
  InStage("data", [&] { WriteDatasets(BuildDatasets(config, vocab), vocab, out); });
}

EvalReport RunEval(const RunConfig& config, const fs::path& checkpoint,
                   const fs::path& out) {
  config.Validate();
  OutputLock lock(out);
  const Vocabulary vocab = Vocabulary::Default();
  const RewardScorer scorer = MakeScorer(config, vocab);
  const Datasets data = InStage("data", [&] { return BuildDatasets(config, vocab); });
  return InStage("eval", [&] {
    const Checkpoint ckpt = LoadCheckpoint(checkpoint);
    const PolicyParams params = Merge(ckpt.params, ckpt.adapters);
    EvalReport r = Evaluate(params, data.eval_problems, scorer,
                            config.eval_max_len, checkpoint.stem().string());
    WriteLines(out / "report" / "eval.jsonl",
               std::vector<std::string>{EvalReportJson(r)});
    return r;
  });
}

SftResult RunSftStage(const RunConfig& config, const fs::path& out) {
  config.Validate();
  OutputLock lock(out);
  const Vocabulary vocab = Vocabulary::Default();
  WriteText(out / "config.json", SerializeRunConfig(config));
  const Datasets data = InStage("data", [&] { return BuildDatasets(config, vocab); });
  const PolicyParams base = InStage("base", [&] {
    PolicyParams p = Init(config);
    SaveParams(out / "checkpoints" / "base.ckpt", p);
    return p;
  });
  return InStage("sft", [&] { return TrainSftStage(config, base, data, out); });
}

GrpoResult RunGrpoStage(const RunConfig& config,
                        const std::optional<fs::path>& checkpoint,
                        const fs::path& out) {
  config.Validate();
  OutputLock lock(out);
  const Vocabulary vocab = Vocabulary::Default();
  const RewardScorer scorer = MakeScorer(config, vocab);
  WriteText(out / "config.json", SerializeRunConfig(config));
  const Datasets data = InStage("data", [&] { return BuildDatasets(config, vocab); });
  const PolicyParams start = InStage("base", [&] {
    if (!checkpoint) return Init(config);
    const Checkpoint ckpt = LoadCheckpoint(*checkpoint);
    return Merge(ckpt.params, ckpt.adapters);
  });
  return InStage("grpo", [&] {
    return TrainGrpoStage(config, start, data, scorer, out,
                          out / "checkpoints" / "grpo.ckpt");
  });
}

RewardComponent ParseRewardComponent(std::string_view name) {
  if (name == "acc") return RewardComponent::kAccuracy;
  if (name == "fmt") return RewardComponent::kFormat;
  if (name == "refl") return RewardComponent::kReflection;
  throw ConfigError("unknown reward component '" + std::string(name) +
                    "' (expected acc, fmt or refl)");
}

std::string_view RewardComponentName(RewardComponent c) {
  switch (c) {
    case RewardComponent::kAccuracy:
      return "acc";
    case RewardComponent::kFormat:
      return "fmt";
    case RewardComponent::kReflection:
      return "refl";
  }
  return "?";
}

double FinalDecileMean(std::span<const double> series) {
  if (series.empty()) return 0.0;
  const std::size_t k = (series.size() + 9) / 10;
  double sum = 0.0;
  for (std::size_t i = series.size() - k; i < series.size(); ++i) sum += series[i];
  return sum / static_cast<double>(k);
}

std::vector<double> Smooth(std::span<const double> series) {
  const std::size_t window = std::max<std::size_t>(1, series.size() / 10);
  std::vector<double> out(series.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    sum += series[i];
    if (i >= window) sum -= series[i - window];
    out[i] = sum / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

namespace {

std::vector<double> Ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double Spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("Spearman needs equal-length series");
  }
  if (x.size() < 2) return 0.0;
  const auto rx = Ranks(x), ry = Ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

AblationReport RunAblation(const RunConfig& config,
                           const std::set<RewardComponent>& zeroed,
                           const fs::path& out) {
  config.Validate();
  OutputLock lock(out);
  const Vocabulary vocab = Vocabulary::Default();
  WriteText(out / "config.json", SerializeRunConfig(config));

  const Datasets data = InStage("data", [&] {
    Datasets d = BuildDatasets(config, vocab);
    WriteDatasets(d, vocab, out);
    return d;
  });
  const PolicyParams base = InStage("base", [&] {
    PolicyParams p = Init(config);
    SaveParams(out / "checkpoints" / "base.ckpt", p);
    return p;
  });
  PolicyParams start = base;
  if (!config.stages.skip_sft) {
    start = InStage("sft", [&] {
      return TrainSftStage(config, base, data, out).Merged();
    });
  }

  RunConfig ablated_config = config;
  for (RewardComponent c : zeroed) {
    switch (c) {
      case RewardComponent::kAccuracy:
        ablated_config.grpo.weights.accuracy = 0.0;
        break;
      case RewardComponent::kFormat:
        ablated_config.grpo.weights.format = 0.0;
        break;
      case RewardComponent::kReflection:
        ablated_config.grpo.weights.reflection = 0.0;
        break;
    }
  }

  auto run_arm = [&](const RunConfig& arm_config, const std::string& name) {
    return InStage("grpo:" + name, [&] {
      const RewardScorer scorer = MakeScorer(arm_config, vocab);
      const fs::path dir = out / "ablation" / name;
      WriteText(dir / "config.json", SerializeRunConfig(arm_config));
      GrpoResult g = TrainGrpoStage(arm_config, start, data, scorer, dir,
                                    dir / "checkpoints" / "grpo.ckpt");
      AblationArm arm;
      arm.name = name;
      arm.weights = arm_config.grpo.weights;
      // Arms are compared on a common scorer so the reflection metric is
      // measured the same way whatever the training weights were.
      arm.final_report = Evaluate(g.params, data.eval_problems,
                                  MakeScorer(config, vocab),
                                  config.eval_max_len, name);
      for (const auto& d : g.diagnostics) arm.refl_curve.push_back(d.refl_mean);
      arm.final_decile_refl = FinalDecileMean(arm.refl_curve);
      return arm;
    });
  };

  AblationReport report;
  report.zeroed = zeroed;
  report.control = run_arm(config, "control");
  report.ablated = run_arm(ablated_config, "ablated");
  const double c = report.control.final_decile_refl;
  const double a = report.ablated.final_decile_refl;
  report.refl_delta = c - a;
  if (a > 0.0) {
    report.refl_ratio = c / a;
  } else {
    report.refl_ratio = c > 0.0 ? std::numeric_limits<double>::infinity()
                                : std::numeric_limits<double>::quiet_NaN();
  }
  std::vector<double> steps(report.control.refl_curve.size());
  for (std::size_t i = 0; i < steps.size(); ++i) steps[i] = static_cast<double>(i);
  report.control_spearman = Spearman(Smooth(report.control.refl_curve), steps);

  InStage("report", [&] {
    std::string zero_list;
    for (RewardComponent comp : zeroed) {
      if (!zero_list.empty()) zero_list += ",";
      zero_list += RewardComponentName(comp);
    }
    std::vector<std::string> lines;
    std::vector<EvalReport> finals;
    for (const AblationArm* arm : {&report.control, &report.ablated}) {
      json j = {{"arm", arm->name},
                {"lambda_acc", arm->weights.accuracy},
                {"lambda_fmt", arm->weights.format},
                {"lambda_refl", arm->weights.reflection},
                {"final", json::parse(EvalReportJson(arm->final_report))},
                {"final_decile_refl", arm->final_decile_refl},
                {"refl_curve", arm->refl_curve}};
      lines.push_back(j.dump());
      finals.push_back(arm->final_report);
    }
    json summary = {{"zeroed", zero_list},
                    {"refl_delta", report.refl_delta},
                    {"refl_ratio", std::isfinite(report.refl_ratio)
                                       ? json(report.refl_ratio)
                                       : json(JsonRatio(report.refl_ratio))},
                    {"control_spearman", report.control_spearman}};
    lines.push_back(summary.dump());
    WriteLines(out / "report" / "ablation.jsonl", lines);

    std::ostringstream txt;
    txt << "ablation (zeroed: " << (zero_list.empty() ? "none" : zero_list)
        << ")\n\n"
        << ComparisonTable(finals) << "\n"
        << "final-decile refl_mean  control " << Fixed(c) << "  ablated "
        << Fixed(a) << "\n"
        << "refl delta (control - ablated)  " << Fixed(report.refl_delta) << "\n"
        << "refl ratio (control / ablated)  "
        << (std::isfinite(report.refl_ratio) ? Fixed(report.refl_ratio)
                                             : JsonRatio(report.refl_ratio))
        << "\n"
        << "spearman(smoothed control refl_mean, step)  "
        << Fixed(report.control_spearman) << "\n";
    WriteText(out / "report" / "ablation.txt", txt.str());
  });
  return report;
}

void ExportCurves(const fs::path& diagnostics, const fs::path& out_dir) {
  if (!fs::exists(diagnostics)) {
    throw std::runtime_error("diagnostics file " + diagnostics.string() +
                             " does not exist");
  }
  const std::vector<std::string> lines = ReadLines(diagnostics);
  const char* series[] = {"refl_mean", "reward_mean", "kl", "clip_fraction"};
  std::vector<std::string> csv[4];
  for (auto& c : csv) c.push_back("step,value");
  for (const auto& line : lines) {
    const json j = json::parse(line);
    const std::string step = j.at("step").dump();
    for (int s = 0; s < 4; ++s) {
      csv[s].push_back(step + "," + j.at(series[s]).dump());
    }
  }
  for (int s = 0; s < 4; ++s) {
    WriteLines(out_dir / (std::string(series[s]) + ".csv"), csv[s]);
  }
}

void ScoreTraces(const RunConfig& config, const fs::path& traces,
                 const fs::path& out) {
  const Vocabulary vocab = Vocabulary::Default();
  const RewardScorer scorer = MakeScorer(config, vocab);
  std::vector<std::string> scores;
  std::size_t index = 0;
  for (const auto& line : ReadLines(traces)) {
    const json j = json::parse(line);
    std::string answer;
    if (j.contains("answer")) {
      answer = j.at("answer").get<std::string>();
    } else {
      const TokenSeq prompt = vocab.Tokenize(j.at("prompt").get<std::string>());
      answer = std::to_string(Reduce(ParseExpression(prompt, vocab)).back().result);
    }
    const TokenSeq target = vocab.Tokenize(j.at("target").get<std::string>());
    std::string id = std::to_string(index);
    if (j.contains("id")) {
      id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    }
    scores.push_back(ScoreJson(id, scorer.Score(target, answer)));
    ++index;
  }
  WriteLines(out, scores);
}

}  // namespace forge
