#include "forge/jsonl.h"

#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace forge {

using nlohmann::json;

namespace {

json Parse(const std::string& line) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("malformed JSON line: ") + e.what());
  }
}

}  // namespace

std::string ProblemJson(const Problem& p, const Vocabulary& vocab) {
  json j = {{"id", p.id},
            {"prompt", vocab.Detokenize(p.prompt_tokens)},
            {"answer", p.answer},
            {"difficulty", p.difficulty}};
  return j.dump();
}

Problem ParseProblemJson(const std::string& line, const Vocabulary& vocab) {
  const json j = Parse(line);
  Problem p;
  p.id = j.at("id").get<std::int64_t>();
  p.prompt_tokens = vocab.Tokenize(j.at("prompt").get<std::string>());
  p.answer = j.at("answer").get<std::string>();
  p.difficulty = j.at("difficulty").get<int>();
  return p;
}

std::string TraceJson(const Trace& t, const std::string& answer,
                      const Vocabulary& vocab) {
  json j = {{"id", t.problem_id},
            {"prompt", vocab.Detokenize(t.prompt)},
            {"answer", answer},
            {"target", vocab.Detokenize(t.tokens)},
            {"style", std::string(TraceStyleName(t.style))}};
  return j.dump();
}

Trace ParseTraceJson(const std::string& line, const Vocabulary& vocab) {
  const json j = Parse(line);
  Trace t;
  t.problem_id = j.at("id").get<std::int64_t>();
  t.prompt = vocab.Tokenize(j.at("prompt").get<std::string>());
  t.tokens = vocab.Tokenize(j.at("target").get<std::string>());
  t.style = ParseTraceStyle(j.at("style").get<std::string>());
  return t;
}

std::string DiagnosticsJson(const StepDiagnostics& d) {
  json j = {{"step", d.step},
            {"J", d.objective},
            {"kl", d.kl},
            {"clip_fraction", d.clip_fraction},
            {"reward_mean", d.reward_mean},
            {"reward_std", d.reward_std},
            {"acc_mean", d.acc_mean},
            {"fmt_mean", d.fmt_mean},
            {"refl_mean", d.refl_mean}};
  if (d.clamped > 0) j["clamped"] = d.clamped;
  if (d.eval_acc) j["eval_acc"] = *d.eval_acc;
  return j.dump();
}

StepDiagnostics ParseDiagnosticsJson(const std::string& line) {
  const json j = Parse(line);
  StepDiagnostics d;
  d.step = j.at("step").get<int>();
  d.objective = j.at("J").get<double>();
  d.kl = j.at("kl").get<double>();
  d.clip_fraction = j.at("clip_fraction").get<double>();
  d.reward_mean = j.at("reward_mean").get<double>();
  d.reward_std = j.at("reward_std").get<double>();
  d.acc_mean = j.at("acc_mean").get<double>();
  d.fmt_mean = j.at("fmt_mean").get<double>();
  d.refl_mean = j.at("refl_mean").get<double>();
  if (j.contains("clamped")) d.clamped = j.at("clamped").get<int>();
  if (j.contains("eval_acc")) d.eval_acc = j.at("eval_acc").get<double>();
  return d;
}

std::string SftEpochJson(const SftEpochRecord& r) {
  return json{{"epoch", r.epoch}, {"loss", r.loss}}.dump();
}

std::string ScoreJson(const std::string& id, const RewardBreakdown& b) {
  json dims = json::object();
  for (std::size_t d = 0; d < kNumReflectionDims; ++d) {
    dims[std::string(kReflectionDimNames[d])] = b.dims[d];
  }
  return json{{"id", id},
              {"r_acc", b.r_acc},
              {"r_fmt", b.r_fmt},
              {"r_refl", b.r_refl},
              {"dims", dims},
              {"composite", b.composite}}
      .dump();
}

std::string JsonNumber(double v) { return json(v).dump(); }

std::vector<std::string> ReadLines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

void WriteLines(const std::filesystem::path& path,
                std::span<const std::string> lines) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace forge
