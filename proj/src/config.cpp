#include "diffro/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>

namespace diffro {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::pretrain: return "pretrain";
    case Stage::train_reward: return "train-reward";
    case Stage::diffro: return "diffro";
    case Stage::dpo: return "dpo";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  for (Stage st : {Stage::pretrain, Stage::train_reward, Stage::diffro, Stage::dpo}) {
    if (to_string(st) == s) return st;
  }
  throw ConfigError("unknown stage '" + s + "'");
}

namespace {

void allow_keys(const nlohmann::json& j, const std::string& where,
                std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
      throw ConfigError(where + ": unknown key '" + k + "'");
    }
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults(Stage stage) {
  ExperimentConfig c;
  c.stage = stage;
  const bool rl = stage == Stage::diffro || stage == Stage::dpo;
  c.optim.lr = rl ? 1e-5 : 1e-3;
  if (stage == Stage::dpo) c.reward.tasks = {"asr"};
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  try {
    allow_keys(j, "config",
               {"stage", "seed", "data", "init", "reference", "reward_model", "out", "log",
                "lm", "mtr", "optim", "batch_size", "steps", "checkpoint_every",
                "log_wall_time", "rl", "gumbel", "reward"});
    ExperimentConfig c = defaults(parse_stage(j.value("stage", std::string("pretrain"))));
    read(j, "seed", c.seed);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      allow_keys(d, "data", {"train", "valid"});
      read(d, "train", c.train_data);
      read(d, "valid", c.valid_data);
    }
    read(j, "init", c.init);
    read(j, "reference", c.reference);
    read(j, "reward_model", c.reward_model);
    read(j, "out", c.out);
    read(j, "log", c.log);
    if (j.contains("lm")) {
      allow_keys(j.at("lm"), "lm",
                 {"q", "eos", "max_text", "max_tokens", "width", "heads", "layers", "ffn"});
      c.lm = LmConfig::from_json(j.at("lm"));
    }
    if (j.contains("mtr")) {
      allow_keys(j.at("mtr"), "mtr",
                 {"q", "max_tokens", "max_text", "width", "heads", "enc_layers", "dec_layers",
                  "ffn", "head_hidden"});
      c.mtr = MtrConfig::from_json(j.at("mtr"));
    }
    if (j.contains("optim")) {
      const auto& o = j.at("optim");
      allow_keys(o, "optim", {"lr", "beta1", "beta2", "eps", "clip_norm", "decay_to"});
      read(o, "lr", c.optim.lr);
      read(o, "beta1", c.optim.beta1);
      read(o, "beta2", c.optim.beta2);
      read(o, "eps", c.optim.eps);
      read(o, "clip_norm", c.optim.clip_norm);
      read(o, "decay_to", c.lr_decay_to);
    }
    read(j, "batch_size", c.batch_size);
    read(j, "steps", c.steps);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "log_wall_time", c.log_wall_time);
    if (j.contains("rl")) {
      const auto& r = j.at("rl");
      allow_keys(r, "rl",
                 {"beta", "kl_ceiling", "max_len", "emotion_instr", "quality_target", "dpo_k"});
      read(r, "beta", c.rl.beta);
      read(r, "kl_ceiling", c.rl.kl_ceiling);
      read(r, "max_len", c.rl.max_len);
      read(r, "emotion_instr", c.rl.emotion_instr);
      read(r, "quality_target", c.rl.quality_target);
      read(r, "dpo_k", c.rl.dpo_k);
    }
    if (j.contains("gumbel")) {
      allow_keys(j.at("gumbel"), "gumbel", {"tau", "mode", "noise", "anneal", "tau_final"});
      c.gumbel = GumbelConfig::from_json(j.at("gumbel"));
    }
    if (j.contains("reward")) {
      const auto& r = j.at("reward");
      allow_keys(r, "reward", {"tasks", "weights"});
      read(r, "tasks", c.reward.tasks);
      if (r.contains("weights")) {
        c.reward.weights = r.at("weights").get<std::map<std::string, double>>();
      }
    }
    c.validate();
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = to_string(stage);
  j["seed"] = seed;
  j["data"] = {{"train", train_data}, {"valid", valid_data}};
  j["init"] = init;
  j["reference"] = reference;
  j["reward_model"] = reward_model;
  j["out"] = out;
  j["log"] = log;
  j["lm"] = lm.to_json();
  j["mtr"] = mtr.to_json();
  j["optim"] = {{"lr", optim.lr},
                {"beta1", optim.beta1},
                {"beta2", optim.beta2},
                {"eps", optim.eps},
                {"clip_norm", optim.clip_norm},
                {"decay_to", lr_decay_to}};
  j["batch_size"] = batch_size;
  j["steps"] = steps;
  j["checkpoint_every"] = checkpoint_every;
  j["log_wall_time"] = log_wall_time;
  j["rl"] = {{"beta", rl.beta},
             {"kl_ceiling", rl.kl_ceiling},
             {"max_len", rl.max_len},
             {"emotion_instr", rl.emotion_instr},
             {"quality_target", rl.quality_target},
             {"dpo_k", rl.dpo_k}};
  j["gumbel"] = gumbel.to_json();
  nlohmann::ordered_json w = nlohmann::ordered_json::object();
  for (const auto& [k, v] : reward.weights) w[k] = v;
  j["reward"] = {{"tasks", reward.tasks}, {"weights", w}};
  return j;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (!(optim.lr > 0.0) || !std::isfinite(optim.lr)) fail("optim.lr must be positive");
  if (!(lr_decay_to > 0.0 && lr_decay_to <= 1.0)) fail("optim.decay_to must be in (0, 1]");
  if (batch_size == 0) fail("batch_size must be positive");
  if (rl.beta < 0.0) fail("rl.beta must be >= 0");
  if (!(rl.kl_ceiling > 0.0)) fail("rl.kl_ceiling must be positive");
  if (rl.max_len == 0) fail("rl.max_len must be positive");
  if (rl.emotion_instr != "none" && rl.emotion_instr != "random") {
    fail("rl.emotion_instr must be none or random");
  }
  if (rl.quality_target < 0 || rl.quality_target > toy::kNumQuality) {
    fail("rl.quality_target must be 0 (off) or 1..5");
  }
  if (stage == Stage::dpo && rl.dpo_k < 2) fail("rl.dpo_k must be >= 2");
  if (lm.q != mtr.q) fail("lm.q and mtr.q differ");
  try {
    gumbel.validate();
    reward.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (stage == Stage::diffro || stage == Stage::dpo) {
    if (init.empty()) fail("init checkpoint required for " + to_string(stage));
    if (reward_model.empty()) fail("reward_model required for " + to_string(stage));
  }
}

void ExperimentConfig::check_inputs(const std::filesystem::path& workdir) const {
  auto need = [&](const std::string& what, const std::string& p) {
    if (p.empty()) return;
    if (!std::filesystem::exists(workdir / p)) {
      throw ConfigError(what + " not found: " + (workdir / p).string());
    }
  };
  if (stage == Stage::pretrain || stage == Stage::train_reward) need("train data", train_data);
  if (stage != Stage::pretrain && stage != Stage::train_reward) {
    need("train data", train_data);
    need("init checkpoint", init);
    need("reference checkpoint", reference);
    need("reward model", reward_model);
  }
}

}  // namespace diffro
