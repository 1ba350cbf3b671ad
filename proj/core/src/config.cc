#include "forge/config.h"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "forge/errors.h"

namespace forge {

using nlohmann::json;

namespace {

std::string TargetsToString(const std::vector<LoraTarget>& targets) {
  std::string out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (i > 0) out += ",";
    out += LoraTargetName(targets[i]);
  }
  return out;
}

std::vector<LoraTarget> TargetsFromString(const std::string& s) {
  std::vector<LoraTarget> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(ParseLoraTarget(item));
  }
  return out;
}

json ToJson(const RunConfig& c) {
  return json{
      {"seeds",
       {{"master", c.seeds.master}, {"data", c.seeds.data}, {"rollout", c.seeds.rollout}}},
      {"model",
       {{"vocab", c.dims.vocab},
        {"embed", c.dims.embed},
        {"context", c.dims.context},
        {"hidden", c.dims.hidden}}},
      {"data",
       {{"sft_traces", c.data.sft_traces},
        {"grpo_prompts", c.data.grpo_prompts},
        {"eval_problems", c.data.eval_problems},
        {"mix_one_op", c.data.mix.one_op},
        {"mix_two_op", c.data.mix.two_op},
        {"mix_three_op", c.data.mix.three_op},
        {"reflective_fraction", c.data.reflective_fraction}}},
      {"sft",
       {{"learning_rate", c.sft.learning_rate},
        {"epochs", c.sft.epochs},
        {"batch_size", c.sft.batch_size}}},
      {"lora",
       {{"rank", c.lora.rank},
        {"scale", c.lora.scale},
        {"targets", TargetsToString(c.lora.targets)}}},
      {"grpo",
       {{"epsilon", c.grpo.epsilon},
        {"beta", c.grpo.beta},
        {"group_size", c.grpo.group_size},
        {"learning_rate", c.grpo.learning_rate},
        {"total_steps", c.grpo.total_steps},
        {"prompts_per_step", c.grpo.prompts_per_step},
        {"inner_updates", c.grpo.inner_updates},
        {"ref_refresh_interval", c.grpo.ref_refresh_interval},
        {"eval_interval", c.grpo.eval_interval},
        {"max_len", c.grpo.decode.max_len},
        {"temperature", c.grpo.decode.temperature}}},
      {"rewards",
       {{"lambda_acc", c.grpo.weights.accuracy},
        {"lambda_fmt", c.grpo.weights.format},
        {"lambda_refl", c.grpo.weights.reflection},
        {"lexicon_version", c.rewards.lexicon_version},
        {"eps_std", c.grpo.eps_std}}},
      {"stages", {{"skip_sft", c.stages.skip_sft}, {"use_lora", c.stages.use_lora}}},
      {"eval", {{"max_len", c.eval_max_len}}},
  };
}

template <class T>
void Read(const json& section, const char* key, T& out, const std::string& path) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key " + path + "." + key + " has the wrong type");
  }
}

RunConfig FromJson(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const json reference = ToJson(RunConfig{});
  for (const auto& [section, body] : j.items()) {
    if (!reference.contains(section)) {
      throw ConfigError("unknown config section '" + section + "'");
    }
    if (!body.is_object()) {
      throw ConfigError("config section '" + section + "' must be an object");
    }
    for (const auto& [key, value] : body.items()) {
      if (!reference.at(section).contains(key)) {
        throw ConfigError("unknown config key '" + section + "." + key + "'");
      }
    }
  }
  RunConfig c;
  auto sec = [&j](const char* name) {
    return j.contains(name) ? j.at(name) : json::object();
  };
  const json seeds = sec("seeds"), model = sec("model"), data = sec("data"),
             sft = sec("sft"), lora = sec("lora"), grpo = sec("grpo"),
             rewards = sec("rewards"), stages = sec("stages"), eval = sec("eval");
  Read(seeds, "master", c.seeds.master, "seeds");
  Read(seeds, "data", c.seeds.data, "seeds");
  Read(seeds, "rollout", c.seeds.rollout, "seeds");
  Read(model, "vocab", c.dims.vocab, "model");
  Read(model, "embed", c.dims.embed, "model");
  Read(model, "context", c.dims.context, "model");
  Read(model, "hidden", c.dims.hidden, "model");
  Read(data, "sft_traces", c.data.sft_traces, "data");
  Read(data, "grpo_prompts", c.data.grpo_prompts, "data");
  Read(data, "eval_problems", c.data.eval_problems, "data");
  Read(data, "mix_one_op", c.data.mix.one_op, "data");
  Read(data, "mix_two_op", c.data.mix.two_op, "data");
  Read(data, "mix_three_op", c.data.mix.three_op, "data");
  Read(data, "reflective_fraction", c.data.reflective_fraction, "data");
  Read(sft, "learning_rate", c.sft.learning_rate, "sft");
  Read(sft, "epochs", c.sft.epochs, "sft");
  Read(sft, "batch_size", c.sft.batch_size, "sft");
  Read(lora, "rank", c.lora.rank, "lora");
  Read(lora, "scale", c.lora.scale, "lora");
  std::string targets = TargetsToString(c.lora.targets);
  Read(lora, "targets", targets, "lora");
  try {
    c.lora.targets = TargetsFromString(targets);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("lora.targets: ") + e.what());
  }
  Read(grpo, "epsilon", c.grpo.epsilon, "grpo");
  Read(grpo, "beta", c.grpo.beta, "grpo");
  Read(grpo, "group_size", c.grpo.group_size, "grpo");
  Read(grpo, "learning_rate", c.grpo.learning_rate, "grpo");
  Read(grpo, "total_steps", c.grpo.total_steps, "grpo");
  Read(grpo, "prompts_per_step", c.grpo.prompts_per_step, "grpo");
  Read(grpo, "inner_updates", c.grpo.inner_updates, "grpo");
  Read(grpo, "ref_refresh_interval", c.grpo.ref_refresh_interval, "grpo");
  Read(grpo, "eval_interval", c.grpo.eval_interval, "grpo");
  Read(grpo, "max_len", c.grpo.decode.max_len, "grpo");
  Read(grpo, "temperature", c.grpo.decode.temperature, "grpo");
  Read(rewards, "lambda_acc", c.grpo.weights.accuracy, "rewards");
  Read(rewards, "lambda_fmt", c.grpo.weights.format, "rewards");
  Read(rewards, "lambda_refl", c.grpo.weights.reflection, "rewards");
  Read(rewards, "lexicon_version", c.rewards.lexicon_version, "rewards");
  Read(rewards, "eps_std", c.grpo.eps_std, "rewards");
  Read(stages, "skip_sft", c.stages.skip_sft, "stages");
  Read(stages, "use_lora", c.stages.use_lora, "stages");
  Read(eval, "max_len", c.eval_max_len, "eval");
  c.Validate();
  return c;
}

}  // namespace

SftConfig RunConfig::ResolvedSft() const {
  SftConfig s = sft;
  s.mode = stages.use_lora ? SftMode::kLora : SftMode::kFull;
  s.lora = stages.use_lora ? std::optional<LoraSettings>(lora) : std::nullopt;
  s.seed = DeriveSeed(seeds.master, "sft");
  return s;
}

std::uint64_t RunConfig::InitSeed() const {
  return DeriveSeed(seeds.master, "init");
}

void RunConfig::Validate() const {
  try {
    dims.Validate();
    data.mix.Validate();
    grpo.Validate();
    ResolvedSft().Validate();
    ReflectionLexicon::ByVersion(rewards.lexicon_version);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (data.sft_traces < 1 || data.grpo_prompts < 1 || data.eval_problems < 1) {
    throw ConfigError("dataset sizes must be >= 1");
  }
  if (data.reflective_fraction < 0.0 || data.reflective_fraction > 1.0) {
    throw ConfigError("data.reflective_fraction must lie in [0, 1]");
  }
  if (eval_max_len < 1) throw ConfigError("eval.max_len must be >= 1");
}

RunConfig ParseRunConfig(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return FromJson(j);
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseRunConfig(ss.str());
}

std::string SerializeRunConfig(const RunConfig& config) {
  return ToJson(config).dump(2) + "\n";
}

void ApplyOverride(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) +
                      "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  const auto dot = key.find('.');
  if (dot == std::string::npos) {
    throw ConfigError("override key '" + key + "' must be section.key");
  }
  json j = ToJson(config);
  const std::string section = key.substr(0, dot);
  const std::string name = key.substr(dot + 1);
  if (!j.contains(section) || !j.at(section).contains(name)) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  // Strings stay strings even when they look like numbers.
  if (j.at(section).at(name).is_string() && !value.is_string()) {
    value = raw;
  }
  j[section][name] = value;
  config = FromJson(j);
}

}  // namespace forge
