#include "diffro/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace diffro {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'R', 'O', 'C', 'K', 'P', 'T'};

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return is;
}

CheckpointInfo read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[8];
  if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  CheckpointInfo info;
  info.version = io::read_u64(is);
  if (info.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path.string() + " has version " +
                          std::to_string(info.version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  info.kind = io::read_str(is);
  info.config = nlohmann::json::parse(io::read_str(is));
  return info;
}

}  // namespace

std::string optimizer_bytes(const Adam& opt) {
  std::ostringstream os(std::ios::binary);
  opt.write(os);
  return os.str();
}

void restore_optimizer(Adam& opt, const std::string& bytes) {
  if (bytes.empty()) throw CheckpointError("checkpoint carries no optimizer state");
  std::istringstream is(bytes, std::ios::binary);
  opt.read(is);
}

void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const nlohmann::json& config, const ParameterSet& params,
                     const TrainState* state) {
  auto tmp = path;
  tmp += ".tmp";
  {
    auto os = open_out(tmp);
    os.write(kMagic, 8);
    io::write_u64(os, kCheckpointVersion);
    io::write_str(os, kind);
    io::write_str(os, config.dump());
    params.write(os);
    io::write_u64(os, state ? 1 : 0);
    if (state) {
      io::write_u64(os, state->step);
      io::write_u64(os, state->rng.seed);
      io::write_u64(os, state->rng.stream);
      io::write_u64(os, state->rng.cursor);
      io::write_u64(os, state->rng.lane);
      io::write_str(os, state->optimizer);
    }
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_header(is, path);
}

CheckpointInfo load_checkpoint(const std::filesystem::path& path, const std::string& kind,
                               ParameterSet& params, TrainState* state) {
  auto is = open_in(path);
  auto info = read_header(is, path);
  if (info.kind != kind) {
    throw CheckpointError(path.string() + " holds a " + info.kind + " model, expected " + kind);
  }
  try {
    params.read(is);
    info.has_state = io::read_u64(is) != 0;
    if (info.has_state && state) {
      state->step = io::read_u64(is);
      state->rng.seed = io::read_u64(is);
      state->rng.stream = io::read_u64(is);
      state->rng.cursor = io::read_u64(is);
      state->rng.lane = static_cast<std::uint32_t>(io::read_u64(is));
      state->optimizer = io::read_str(is);
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + ": " + e.what());
  }
  return info;
}

void save_policy(const std::filesystem::path& path, const PolicyLM& lm, const TrainState* state) {
  save_checkpoint(path, "policy", lm.config().to_json(), lm.params(), state);
}

std::unique_ptr<PolicyLM> load_policy(const std::filesystem::path& path, TrainState* state) {
  auto info = read_checkpoint_info(path);
  auto lm = std::make_unique<PolicyLM>(LmConfig::from_json(info.config));
  load_checkpoint(path, "policy", lm->params(), state);
  return lm;
}

void save_mtr(const std::filesystem::path& path, const MtrModel& mtr, const TrainState* state) {
  save_checkpoint(path, "mtr", mtr.config().to_json(), mtr.params(), state);
}

std::unique_ptr<MtrModel> load_mtr(const std::filesystem::path& path, TrainState* state) {
  auto info = read_checkpoint_info(path);
  auto m = std::make_unique<MtrModel>(MtrConfig::from_json(info.config));
  load_checkpoint(path, "mtr", m->params(), state);
  return m;
}

void export_weights(const std::filesystem::path& checkpoint, const std::filesystem::path& out) {
  const auto info = read_checkpoint_info(checkpoint);
  nlohmann::ordered_json j;
  j["kind"] = info.kind;
  if (info.kind == "policy") {
    auto lm = load_policy(checkpoint);
    j["config"] = lm->config().to_json();
    j["params"] = lm->params().to_json();
  } else if (info.kind == "mtr") {
    auto m = load_mtr(checkpoint);
    j["config"] = m->config().to_json();
    j["params"] = m->params().to_json();
  } else {
    throw CheckpointError("unknown checkpoint kind " + info.kind);
  }
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream os(out);
  if (!os) throw CheckpointError("cannot write " + out.string());
  os << j.dump() << '\n';
}

namespace {

nlohmann::json read_dump(const std::filesystem::path& path, const std::string& kind) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("cannot open weight dump " + path.string());
  auto j = nlohmann::json::parse(is);
  if (j.value("kind", std::string()) != kind) {
    throw CheckpointError(path.string() + " is not a " + kind + " weight dump");
  }
  return j;
}

}  // namespace

std::unique_ptr<PolicyLM> import_policy_json(const std::filesystem::path& path) {
  const auto j = read_dump(path, "policy");
  auto lm = std::make_unique<PolicyLM>(LmConfig::from_json(j.at("config")));
  lm->params().load_json(j.at("params"));
  return lm;
}

std::unique_ptr<MtrModel> import_mtr_json(const std::filesystem::path& path) {
  const auto j = read_dump(path, "mtr");
  auto m = std::make_unique<MtrModel>(MtrConfig::from_json(j.at("config")));
  m->params().load_json(j.at("params"));
  return m;
}

}  // namespace diffro
