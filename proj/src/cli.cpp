#include "diffro/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "diffro/checkpoint.hpp"
#include "diffro/config.hpp"
#include "diffro/eval.hpp"
#include "diffro/training.hpp"

namespace diffro {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t env_seed(std::uint64_t fallback) {
  const char* s = std::getenv("DIFFRO_SEED");
  if (s == nullptr || *s == '\0') return fallback;
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw UsageError(std::string("DIFFRO_SEED is not an integer: ") + s);
  }
}

struct Common {
  std::string workdir = ".";
  std::optional<std::uint64_t> seed;
  std::uint64_t resolved_seed(std::uint64_t fallback) const {
    return seed ? *seed : env_seed(fallback);
  }
};

struct GenData {
  std::size_t n = 0;
  std::string out, split = "train", config;
  std::optional<std::size_t> min_len, max_len;
};

struct StageArgs {
  std::string config, out;
  std::optional<std::size_t> steps;
  bool resume = false;
};

struct EvalArgs {
  std::vector<std::string> systems;
  std::string data = "data/test.jsonl";
  std::string checkpoints = "checkpoints";
  std::string reward_model = "checkpoints/mtr.ckpt";
  std::string reference = "checkpoints/sft.ckpt";
  std::string out = "reports/eval.csv";
  std::string json;
  std::size_t emotion_n = 100;
  std::size_t limit = 0;
  std::vector<int> quality_targets;
};

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

struct ExportArgs {
  std::string checkpoint, out;
};

int gen_data(const Common& c, const GenData& g, std::ostream& out) {
  toy::DatasetConfig dc;
  if (!g.config.empty()) {
    std::ifstream in(fs::path(c.workdir) / g.config);
    if (!in) throw ConfigError("cannot open dataset config " + g.config);
    try {
      dc = toy::DatasetConfig::from_json(nlohmann::json::parse(in));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("dataset config: ") + e.what());
    }
  }
  if (g.min_len) dc.min_len = *g.min_len;
  if (g.max_len) dc.max_len = *g.max_len;
  if (g.n == 0) throw UsageError("--n must be >= 1");
  const auto data = toy::make_dataset(g.n, g.split, dc, c.resolved_seed(1));
  const fs::path path = fs::path(c.workdir) / g.out;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  toy::write_jsonl(path, data);
  out << "wrote " << data.size() << " utterances to " << g.out << '\n';
  return 0;
}

int run_stage_cmd(const Common& c, Stage stage, const StageArgs& a, std::ostream& out) {
  const fs::path workdir = c.workdir;
  std::ifstream in(workdir / a.config);
  if (!in) throw ConfigError("cannot open config " + (workdir / a.config).string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  if (!j.contains("stage")) j["stage"] = to_string(stage);
  auto cfg = ExperimentConfig::from_json(j);
  if (cfg.stage != stage) {
    throw ConfigError("config stage '" + to_string(cfg.stage) + "' does not match command '" +
                      to_string(stage) + "'");
  }
  cfg.seed = c.resolved_seed(cfg.seed);
  if (a.steps) cfg.steps = *a.steps;
  if (!a.out.empty()) cfg.out = a.out;
  const RunSummary s = run_stage(cfg, workdir, a.resume);
  out << to_string(stage) << ": " << s.steps_run << " steps, final loss " << s.final_loss;
  if (s.early_stopped) out << " (early stop: " << s.stop_reason << ")";
  out << ", checkpoint " << cfg.out << '\n';
  return 0;
}

fs::path system_checkpoint(const fs::path& workdir, const EvalArgs& a, const std::string& spec,
                           std::string& name) {
  const auto eq = spec.find('=');
  if (eq != std::string::npos) {
    name = spec.substr(0, eq);
    return workdir / spec.substr(eq + 1);
  }
  name = spec;
  return workdir / a.checkpoints / (spec + ".ckpt");
}

int eval_cmd(const Common& c, const EvalArgs& a, std::ostream& out) {
  const fs::path workdir = c.workdir;
  auto texts = toy::read_texts(workdir / a.data);
  if (a.limit && texts.size() > a.limit) texts.resize(a.limit);
  if (texts.empty()) throw std::invalid_argument("eval: empty dataset " + a.data);
  auto mtr = load_mtr(workdir / a.reward_model);
  auto reference = load_policy(workdir / a.reference);
  const toy::Codebook codebook;
  EvalOptions opt;
  opt.emotion_per_class = a.emotion_n;
  opt.seed = c.resolved_seed(1);
  EvalReport rep;
  for (const auto& spec : a.systems) {
    std::string name;
    const auto path = system_checkpoint(workdir, a, spec, name);
    auto policy = load_policy(path);
    rep.rows.push_back(evaluate_system(name, *policy, *reference, *mtr, texts, codebook, opt));
    for (int t : a.quality_targets) {
      const auto q = eval_quality_tracking(*policy, *mtr, texts, t, codebook, opt.seed);
      out << name << ": quality target " << t << " -> expected level " << q.expected_level
          << " (oracle " << q.oracle_level << ", noise fraction " << q.noise_fraction << ")\n";
    }
  }
  const fs::path csv = workdir / a.out;
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  std::ofstream(csv) << rep.to_csv();
  if (!a.json.empty()) {
    const fs::path jp = workdir / a.json;
    if (jp.has_parent_path()) fs::create_directories(jp.parent_path());
    std::ofstream(jp) << rep.to_json().dump(2) << '\n';
  }
  out << rep.to_text();
  return 0;
}

int report_cmd(const Common& c, const ReportArgs& a, std::ostream& out) {
  EvalReport rep;
  for (const auto& in : a.inputs) rep.merge(EvalReport::load(fs::path(c.workdir) / in));
  if (!a.out.empty()) {
    const fs::path p = fs::path(c.workdir) / a.out;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream(p) << rep.to_csv();
  }
  out << rep.to_text();
  return 0;
}

int export_cmd(const Common& c, const ExportArgs& a, std::ostream& out) {
  export_weights(fs::path(c.workdir) / a.checkpoint, fs::path(c.workdir) / a.out);
  out << "exported " << a.checkpoint << " to " << a.out << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DiffRO toy pipeline: data generation, training, RL fine-tuning and evaluation",
               "diffro"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--workdir", common.workdir, "Directory all paths are relative to")
      ->capture_default_str();
  app.add_option("--seed", common.seed, "Seed (overrides DIFFRO_SEED and config)");

  GenData gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a toy dataset as JSON Lines");
  gen->add_option("--n", gd.n, "Number of utterances")->required();
  gen->add_option("--out", gd.out, "Output path")->required();
  gen->add_option("--split", gd.split, "Split name; each split draws from its own stream")
      ->capture_default_str();
  gen->add_option("--config", gd.config, "Dataset config JSON");
  gen->add_option("--min-len", gd.min_len, "Minimum text length");
  gen->add_option("--max-len", gd.max_len, "Maximum text length");

  std::map<Stage, StageArgs> stage_args;
  std::map<Stage, CLI::App*> stage_cmds;
  const std::pair<Stage, const char*> stages[] = {
      {Stage::pretrain, "Supervised next-token training of the policy LM"},
      {Stage::train_reward, "Train the multi-task reward model"},
      {Stage::diffro, "Differentiable reward optimization of a pretrained policy"},
      {Stage::dpo, "Direct preference optimization baseline"}};
  for (const auto& [st, help] : stages) {
    auto& a = stage_args[st];
    auto* cmd = app.add_subcommand(to_string(st), help);
    cmd->add_option("--config", a.config, "Experiment config JSON")->required();
    cmd->add_option("--steps", a.steps, "Override the step count");
    cmd->add_option("--out", a.out, "Override the output checkpoint");
    cmd->add_flag("--resume", a.resume, "Resume from the output checkpoint if it exists");
    stage_cmds[st] = cmd;
  }

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate systems and write a CSV report");
  ev->add_option("--system", ea.systems,
                 "System name (checkpoints/<name>.ckpt) or name=path; repeatable")
      ->required();
  ev->add_option("--data", ea.data, "Held-out texts")->capture_default_str();
  ev->add_option("--checkpoints", ea.checkpoints, "Checkpoint directory")->capture_default_str();
  ev->add_option("--reward-model", ea.reward_model, "Frozen reward model")->capture_default_str();
  ev->add_option("--reference", ea.reference, "Reference policy for KL drift")
      ->capture_default_str();
  ev->add_option("--out", ea.out, "CSV output")->capture_default_str();
  ev->add_option("--json", ea.json, "Optional JSON output");
  ev->add_option("--emotion-n", ea.emotion_n, "Prompts per emotion")->capture_default_str();
  ev->add_option("--limit", ea.limit, "Use only the first N texts");
  ev->add_option("--quality-target", ea.quality_targets,
                 "Also report quality tracking for these targets");

  ExportArgs xa;
  auto* ex = app.add_subcommand("export-weights", "Write the portable JSON weight dump");
  ex->add_option("--checkpoint", xa.checkpoint, "Native checkpoint")->required();
  ex->add_option("--out", xa.out, "JSON output")->required();

  ReportArgs ra;
  auto* rp = app.add_subcommand("report", "Merge CSV/JSON eval reports into one table");
  rp->add_option("--input", ra.inputs, "Report file; repeatable")->required();
  rp->add_option("--out", ra.out, "Merged CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << '\n' << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) return gen_data(common, gd, out);
    for (const auto& [st, cmd] : stage_cmds) {
      if (cmd->parsed()) return run_stage_cmd(common, st, stage_args[st], out);
    }
    if (ev->parsed()) return eval_cmd(common, ea, out);
    if (ex->parsed()) return export_cmd(common, xa, out);
    if (rp->parsed()) return report_cmd(common, ra, out);
  } catch (const UsageError& e) {
    err << "error[usage]: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "error[config]: " << e.what() << '\n';
    return 3;
  } catch (const TrainingDiverged& e) {
    err << "error[diverged]: " << e.what() << '\n';
    return 1;
  } catch (const CheckpointError& e) {
    err << "error[checkpoint]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error[runtime]: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace diffro
