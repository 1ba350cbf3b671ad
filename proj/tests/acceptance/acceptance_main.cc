// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "forge/checkpoint.h"
#include "forge/config.h"
#include "forge/grpo.h"
#include "forge/jsonl.h"
#include "forge/lora.h"
#include "forge/pipeline.h"
#include "forge/sft.h"
#include "support/test_support.h"

namespace fs = std::filesystem;
using namespace forge;
using forge::testing::CentralDifference;
using forge::testing::RelativeError;

namespace {

// Pinned tolerances and thresholds.
constexpr double kFdStep = 1e-5;
constexpr double kFdRelTol = 1e-4;
constexpr double kFdFloor = 1e-5;
constexpr std::size_t kFdCoordinates = 120;
constexpr double kFdBudgetSeconds = 60.0;
constexpr double kIdentityTol = 1e-9;
constexpr int kAdvantageGroups = 1000;
constexpr double kCenterTol = 1e-9;
constexpr double kShiftTol = 1e-9;
constexpr int kLoraContexts = 100;
constexpr double kLoraTol = 1e-9;
constexpr std::size_t kMinFixtures = 30;
constexpr double kSmokeBudgetSeconds = 600.0;
constexpr double kMinCompositeGain = 0.2;
constexpr double kMinSpearman = 0.5;
constexpr double kMinReflRatio = 1.5;

const Vocabulary& V() { return Vocabulary::Default(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void Require(bool cond, const std::string& what) {
    if (!cond) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::string Num(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Checks `analytic` against central differences of f at the given
// coordinates of `tensors`; returns the worst relative error.
double WorstFdError(std::vector<std::span<double>> tensors,
                    const std::vector<std::span<const double>>& analytic,
                    const std::function<double()>& f, std::uint64_t seed,
                    std::size_t* checked) {
  std::vector<std::size_t> sizes;
  for (auto t : tensors) sizes.push_back(t.size());
  double worst = 0.0;
  for (const auto& c : forge::testing::SpreadCoordinates(sizes, kFdCoordinates, seed)) {
    const double num = CentralDifference(tensors[c.tensor][c.index], f, kFdStep);
    worst = std::max(worst, RelativeError(analytic[c.tensor][c.index], num, kFdFloor));
    ++*checked;
  }
  return worst;
}

std::vector<Group> VarianceGroups(const PolicyParams& old, std::uint64_t seed) {
  const auto problems = GenDataset(seed, 4, DifficultyMix{}, V());
  const RewardScorer scorer(V(), ReflectionLexicon::Default(), RewardWeights{});
  DecodeOptions decode;
  decode.max_len = 16;
  Rng rng(seed);
  std::vector<Group> groups;
  for (const auto& p : problems) {
    Group g = RolloutGroup(old, p, 6, decode, scorer, 1e-4, rng);
    std::vector<double> rewards;
    for (int i = 0; i < 6; ++i) rewards.push_back(static_cast<double>(i % 3));
    g.advantages = GroupAdvantages(rewards);
    groups.push_back(std::move(g));
  }
  return groups;
}

Outcome GradientCorrectness() {
  Outcome o;
  std::string info;
  const auto start = std::chrono::steady_clock::now();
  const PolicyDims dims;
  const TokenSeq p1 = V().Tokenize("1 2 + 3 4 =");
  const TokenSeq t1 = V().Tokenize("<think> first 1 2 + 3 4 = 4 6 </think> <answer> 4 6 </answer> <eos>");
  const TokenSeq p2 = V().Tokenize("7 * 8 - 9 =");
  const TokenSeq t2 = V().Tokenize("<think> 5 6 - 9 = 4 7 , check 4 7 ok </think> <eos>");

  {
    PolicyParams p = forge::testing::RandomParams(101, dims);
    const std::vector<WeightedSequence> items = {{p1, t1, 0.8}, {p2, t2, -0.6}};
    const Gradient g = GradWeightedLogprob(p, items);
    auto f = [&] {
      return 0.8 * SequenceLogProb(p, p1, t1).total - 0.6 * SequenceLogProb(p, p2, t2).total;
    };
    std::size_t n = 0;
    auto pt = p.Tensors();
    auto gt = g.Tensors();
    const double worst = WorstFdError({pt.begin(), pt.end()}, {gt.begin(), gt.end()}, f, 1, &n);
    o.Require(worst < kFdRelTol && n >= 100, "grad_weighted_logprob worst " + Num(worst));
    info += "policy " + Num(worst) + " over " + std::to_string(n);
  }
  {
    const PolicyParams p = forge::testing::RandomParams(102, dims);
    std::vector<LoraAdapter> adapters;
    Rng rng(103);
    for (LoraTarget t : {LoraTarget::kEmbedding, LoraTarget::kW1, LoraTarget::kW2}) {
      LoraAdapter a = InitAdapter(rng.NextU64(), dims, t, 3);
      for (double& x : a.b.data) x = rng.Uniform(-0.3, 0.3);
      adapters.push_back(std::move(a));
    }
    const std::vector<WeightedSequence> items = {{p1, t1, 1.0}, {p2, t2, 0.5}};
    const auto grads = AdapterGrad(p, adapters, items);
    auto f = [&] {
      return AdaptedSequenceLogProb(p, adapters, p1, t1).total +
             0.5 * AdaptedSequenceLogProb(p, adapters, p2, t2).total;
    };
    std::vector<std::span<double>> tensors;
    std::vector<std::span<const double>> analytic;
    for (std::size_t k = 0; k < adapters.size(); ++k) {
      tensors.push_back(adapters[k].a.data);
      tensors.push_back(adapters[k].b.data);
      analytic.push_back(grads[k].a.data);
      analytic.push_back(grads[k].b.data);
    }
    std::size_t n = 0;
    const double worst = WorstFdError(tensors, analytic, f, 2, &n);
    o.Require(worst < kFdRelTol && n >= 100, "adapter_grad worst " + Num(worst));
    info += ", adapter " + Num(worst) + " over " + std::to_string(n);
  }
  {
    const PolicyParams old = forge::testing::RandomParams(104, dims);
    const PolicyParams ref = forge::testing::Perturb(old, 105, 0.03);
    PolicyParams p = forge::testing::Perturb(old, 106, 0.01);
    const auto groups = VarianceGroups(old, 107);
    GrpoHyper hyper;
    hyper.beta = 0.2;
    const Gradient g = GrpoGradient(p, old, ref, groups, hyper);
    auto f = [&] { return GrpoObjective(p, old, ref, groups, hyper).objective; };
    std::size_t n = 0;
    auto pt = p.Tensors();
    auto gt = g.Tensors();
    const double worst = WorstFdError({pt.begin(), pt.end()}, {gt.begin(), gt.end()}, f, 3, &n);
    o.Require(worst < kFdRelTol && n >= 100, "grpo_gradient worst " + Num(worst));
    info += ", grpo " + Num(worst) + " over " + std::to_string(n);
  }
  const double elapsed = Seconds(start);
  o.Require(elapsed < kFdBudgetSeconds, "took " + Num(elapsed) + " s");
  info += ", " + Num(elapsed) + " s";
  o.detail = o.pass ? "max rel err " + info : o.detail + " | " + info;
  return o;
}

Outcome GrpoIdentities() {
  Outcome o;
  const PolicyParams p = InitParams(201, PolicyDims{});
  const auto groups = VarianceGroups(p, 202);
  const ObjectiveResult r = GrpoObjective(p, p, p, groups, GrpoHyper{});
  std::vector<Completion> all;
  for (const auto& g : groups) all.insert(all.end(), g.completions.begin(), g.completions.end());
  o.Require(std::abs(r.objective) <= kIdentityTol, "J = " + Num(r.objective));
  o.Require(r.clip_fraction == 0.0, "clip_fraction = " + Num(r.clip_fraction));
  o.Require(r.kl == 0.0 && KlEstimate(p, p, all) == 0.0, "kl not exactly 0");
  const double up = ClippedSurrogate(1.5, 1.0, 0.2);
  const double down = ClippedSurrogate(1.5, -1.0, 0.2);
  o.Require(up == 1.2, "rho 1.5, A +1 gave " + Num(up));
  o.Require(down == -1.5, "rho 1.5, A -1 gave " + Num(down));
  if (o.pass) o.detail = "J = " + Num(r.objective) + ", surrogate terms 1.2 / -1.5";
  return o;
}

Outcome AdvantageProperties() {
  Outcome o;
  Rng rng(301);
  int violations = 0;
  for (int i = 0; i < kAdvantageGroups; ++i) {
    const std::size_t g = 2 + rng.Below(15);
    std::vector<double> r(g);
    for (auto& x : r) x = rng.Uniform(-5.0, 5.0);
    const auto a = GroupAdvantages(r);
    double mean = 0.0;
    for (double x : a) mean += x;
    if (std::abs(mean / g) >= kCenterTol) ++violations;

    const double c = rng.Uniform(-20.0, 20.0);
    std::vector<double> shifted = r;
    for (auto& x : shifted) x += c;
    const auto b = GroupAdvantages(shifted);
    for (std::size_t k = 0; k < g; ++k) {
      if (std::abs(a[k] - b[k]) >= kShiftTol) ++violations;
    }

    const std::vector<double> flat(g, rng.Uniform(-5.0, 5.0));
    for (double x : GroupAdvantages(flat)) {
      if (x != 0.0) ++violations;
    }

    for (std::size_t x = 0; x < g; ++x) {
      for (std::size_t y = 0; y < g; ++y) {
        if (r[x] > r[y] && !(a[x] > a[y])) ++violations;
      }
    }
  }
  o.Require(violations == 0, std::to_string(violations) + " violations");
  if (o.pass) o.detail = std::to_string(kAdvantageGroups) + " groups x 4 properties";
  return o;
}

Outcome LoraEquivalence() {
  Outcome o;
  const PolicyDims dims;
  const PolicyParams p = forge::testing::RandomParams(401, dims);
  std::vector<LoraAdapter> adapters;
  Rng rng(402);
  for (LoraTarget t : {LoraTarget::kW1, LoraTarget::kW2}) {
    LoraAdapter a = InitAdapter(rng.NextU64(), dims, t, 4);
    for (double& x : a.b.data) x = rng.Uniform(-0.5, 0.5);
    adapters.push_back(std::move(a));
  }
  const PolicyParams merged = Merge(p, adapters);
  double worst = 0.0;
  for (int i = 0; i < kLoraContexts; ++i) {
    std::vector<TokenId> ctx(dims.context);
    for (auto& t : ctx) t = static_cast<TokenId>(rng.Below(dims.vocab));
    const auto a = NextTokenLogits(merged, ctx);
    const auto b = AdaptedLogits(p, adapters, ctx);
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  o.Require(worst < kLoraTol, "logit gap " + Num(worst));

  struct Shape { int d, k, r; };
  for (const Shape s : {Shape{64, 64, 4}, Shape{32, 48, 2}}) {
    const PolicyDims sd{s.k, 4, 2, s.d};  // W2 is hidden x vocab = d x k
    const LoraAdapter a = InitAdapter(1, sd, LoraTarget::kW2, s.r);
    std::size_t counted = 0;
    for (std::size_t i = 0; i < a.a.rows * a.a.cols; ++i) ++counted;
    for (std::size_t i = 0; i < a.b.rows * a.b.cols; ++i) ++counted;
    const std::vector<LoraAdapter> one = {a};
    const std::size_t want = static_cast<std::size_t>(s.r) * (s.d + s.k);
    o.Require(counted == want && TrainableParameterCount(one) == want,
              "count for (" + std::to_string(s.d) + "," + std::to_string(s.k) + "," +
                  std::to_string(s.r) + ")");
  }

  const auto problems = GenDataset(403, 64, DifficultyMix{}, V());
  Rng trng(404);
  std::vector<Trace> traces;
  for (const auto& pr : problems) traces.push_back(SynthTrace(pr, TraceStyle::kPlain, trng, V()));
  SftConfig cfg;
  cfg.mode = SftMode::kLora;
  cfg.lora = LoraSettings{};
  cfg.epochs = 2;
  cfg.seed = 405;
  const PolicyParams base = InitParams(406, dims);
  const std::string before = SerializeCheckpoint({V(), base, {}});
  const SftResult sft = TrainSft(base, traces, cfg);
  o.Require(SerializeCheckpoint({V(), sft.base, {}}) == before && sft.base == base,
            "base weights changed");
  if (o.pass) o.detail = "max logit gap " + Num(worst) + ", counts 272 / 160, base bit-identical";
  return o;
}

Outcome RewardFixtures() {
  Outcome o;
  const auto fixtures = forge::testing::LoadRewardFixtures();
  const RewardScorer scorer(V(), ReflectionLexicon::Default(), RewardWeights{});
  std::size_t matched = 0;
  bool stuffing = false, outside = false, duplicate = false;
  for (const auto& f : fixtures) {
    const RewardBreakdown b = scorer.Score(V().Tokenize(f.target), f.answer);
    if (b.r_acc == f.r_acc && b.r_fmt == f.r_fmt && b.r_refl == f.r_refl && b.dims == f.dims) {
      ++matched;
    } else {
      o.Require(false, "mismatch on " + f.id);
    }
    stuffing |= f.id.rfind("stuff", 0) == 0;
    outside |= f.id.rfind("markers-", 0) == 0;
    duplicate |= f.id.rfind("dup-", 0) == 0;
  }
  o.Require(fixtures.size() >= kMinFixtures, "only " + std::to_string(fixtures.size()) + " fixtures");
  o.Require(stuffing && outside && duplicate, "anti-gaming cases missing");
  if (o.pass) o.detail = std::to_string(matched) + "/" + std::to_string(fixtures.size()) + " fixtures match";
  return o;
}

#ifdef FORGE_CLI_PATH
int RunCli(const std::string& args) {
  const std::string cmd = std::string("\"") + FORGE_CLI_PATH + "\" " + args + " > /dev/null";
  return std::system(cmd.c_str());
}
#endif

struct CliRuns {
  bool ok = false;
  fs::path first;
  fs::path second;
  double first_seconds = 0.0;
};

CliRuns RunForgeTwice() {
  CliRuns runs;
#ifdef FORGE_CLI_PATH
  const fs::path root = forge::testing::ScratchDir("acceptance_runs");
  const fs::path cfg = root / "run.json";
  std::ofstream(cfg) << SerializeRunConfig(RunConfig{});
  runs.first = root / "a";
  runs.second = root / "b";
  const auto start = std::chrono::steady_clock::now();
  const int a = RunCli("run --config \"" + cfg.string() + "\" --out \"" + runs.first.string() + "\"");
  runs.first_seconds = Seconds(start);
  const int b = RunCli("run --config \"" + cfg.string() + "\" --out \"" + runs.second.string() + "\"");
  runs.ok = a == 0 && b == 0;
#endif
  return runs;
}

Outcome Determinism(const CliRuns& runs) {
  Outcome o;
  o.Require(runs.ok, "forge run failed or was not built");
  if (!runs.ok) return o;
  std::size_t compared = 0;
  for (const char* sub : {"checkpoints", "diagnostics", "report", "curves", "data"}) {
    for (const auto& entry : fs::directory_iterator(runs.first / sub)) {
      const fs::path other = runs.second / sub / entry.path().filename();
      o.Require(fs::exists(other) && Slurp(entry.path()) == Slurp(other),
                "differs: " + std::string(sub) + "/" + entry.path().filename().string());
      ++compared;
    }
  }
  o.Require(compared >= 10, "too few artifacts");
  if (o.pass) o.detail = std::to_string(compared) + " artifacts byte-identical";
  return o;
}

double WindowMean(const std::vector<StepDiagnostics>& d, bool first) {
  const std::size_t k = std::max<std::size_t>(1, d.size() / 10);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += d[first ? i : d.size() - k + i].reward_mean;
  return s / k;
}

Outcome LearningSmoke(const CliRuns& runs) {
  Outcome o;
  o.Require(runs.ok, "forge run failed or was not built");
  if (!runs.ok) return o;
  o.Require(runs.first_seconds < kSmokeBudgetSeconds, "run took " + Num(runs.first_seconds) + " s");

  std::vector<double> losses;
  for (const auto& line : ReadLines(runs.first / "diagnostics" / "sft_loss.jsonl")) {
    losses.push_back(nlohmann::json::parse(line).at("loss").get<double>());
  }
  o.Require(losses.size() >= 2 && losses.back() < losses.front(), "SFT loss did not fall");

  double base_fmt = -1.0, sft_fmt = -1.0;
  for (const auto& line : ReadLines(runs.first / "report" / "comparison.jsonl")) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("label") == "base") base_fmt = j.at("format_rate").get<double>();
    if (j.at("label") == "sft") sft_fmt = j.at("format_rate").get<double>();
  }
  o.Require(sft_fmt > base_fmt, "format rate " + Num(base_fmt) + " -> " + Num(sft_fmt));

  std::vector<StepDiagnostics> diag;
  for (const auto& line : ReadLines(runs.first / "diagnostics" / "grpo.jsonl")) {
    diag.push_back(ParseDiagnosticsJson(line));
  }
  const double gain = diag.empty() ? 0.0 : WindowMean(diag, false) - WindowMean(diag, true);
  o.Require(gain >= kMinCompositeGain, "composite gain " + Num(gain));
  if (o.pass) {
    o.detail = "NLL " + Num(losses.front()) + " -> " + Num(losses.back()) + ", format " +
               Num(base_fmt) + " -> " + Num(sft_fmt) + ", composite gain " + Num(gain) +
               ", " + Num(runs.first_seconds) + " s";
  }
  return o;
}

Outcome ReflectionDynamics() {
  Outcome o;
  const fs::path out = forge::testing::ScratchDir("acceptance_ablation");
  const AblationReport r = RunAblation(RunConfig{}, {RewardComponent::kReflection}, out);
  o.Require(r.control_spearman > kMinSpearman, "spearman " + Num(r.control_spearman));
  o.Require(r.refl_ratio >= kMinReflRatio, "final-decile ratio " + Num(r.refl_ratio));
  const std::string txt = Slurp(out / "report" / "ablation.txt");
  o.Require(txt.find("spearman") != std::string::npos && txt.find("ratio") != std::string::npos,
            "report does not state both values");
  if (o.pass) {
    o.detail = "spearman " + Num(r.control_spearman) + ", final-decile refl " +
               Num(r.control.final_decile_refl) + " vs " + Num(r.ablated.final_decile_refl) +
               " (ratio " + Num(r.refl_ratio) + ")";
  }
  return o;
}

Outcome EvaluationOracle() {
  Outcome o;
  const RunConfig config;
  const Datasets data = BuildDatasets(config, V());
  forge::testing::ReplayPolicy replay;
  Rng rng(901);
  for (const auto& p : data.eval_problems) {
    replay.Add(p.prompt_tokens, SynthTrace(p, TraceStyle::kPlain, rng, V()).tokens);
  }
  const EvalReport r = Evaluate(replay, data.eval_problems, MakeScorer(config, V()), "replay");
  o.Require(r.accuracy == 1.0, "accuracy " + Num(r.accuracy));
  o.Require(r.format_rate == 1.0, "format rate " + Num(r.format_rate));
  if (o.pass) o.detail = "accuracy 1, format rate 1 over " + std::to_string(r.n);
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  CliRuns runs;
  bool runs_done = false;
  auto cli = [&]() -> const CliRuns& {
    if (!runs_done) {
      runs = RunForgeTwice();
      runs_done = true;
    }
    return runs;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", GradientCorrectness},
      {2, "GRPO identities", GrpoIdentities},
      {3, "advantage properties", AdvantageProperties},
      {4, "LoRA equivalence", LoraEquivalence},
      {5, "reward-grammar fixtures", RewardFixtures},
      {6, "determinism", [&] { return Determinism(cli()); }},
      {7, "learning smoke test", [&] { return LearningSmoke(cli()); }},
      {8, "reflection dynamics", ReflectionDynamics},
      {9, "evaluation oracle", EvaluationOracle},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += o.pass ? 0 : 1;
    std::cout << "criterion " << c.id << " " << (o.pass ? "PASS" : "FAIL") << "  "
              << c.name << ": " << o.detail << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
