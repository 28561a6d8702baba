#pragma once

// Flat key = value configuration covering the model, the synthetic world, and
// the training harness. One file, one namespace of keys; every key has a
// default. `#` starts a comment.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sdb/core.hpp"
#include "sdb/model.hpp"
#include "sdb/nav_world.hpp"

namespace sdb {

struct TrainConfig {
  int iterations = 600;
  int batch_size = 4;
  double learning_rate = 0.2;
  double dagger_mix = 0.5;     // initial probability of following the policy sample
  bool dagger_anneal = true;   // anneal linearly to 1.0 over training
  int eval_every = 0;          // 0 disables periodic held-out evaluation
  int log_every = 10;          // CSV row cadence in iterations
  DemMode dem = DemMode::HSG;
  SsmMode ssm = SsmMode::Stable;
  std::string optimizer = "sgd";  // sgd | adam
  double noise_sigma = 1.0;
  bool detach_cue_head = false;
  std::string drop_cues;  // subset of the letters A, C, S
  int train_graphs = 40;
  int eval_graphs = 10;
  std::string log_path = "train_log.csv";
  std::string checkpoint_path = "model.ckpt";
  bool fp64 = false;
  std::vector<std::uint64_t> seeds;  // ablation grid seeds; empty = {model seed}

  void validate() const {
    if (iterations < 0 || batch_size < 1) throw ValidationError("iterations/batch_size out of range");
    if (dagger_mix < 0.0 || dagger_mix > 1.0) throw ValidationError("dagger_mix must be in [0,1]");
    if (learning_rate <= 0.0) throw ValidationError("learning_rate must be positive");
    if (optimizer != "sgd" && optimizer != "adam") throw ValidationError("optimizer must be sgd or adam");
    if (noise_sigma < 0.0) throw ValidationError("noise_sigma must be >= 0");
    for (char c : drop_cues)
      if (c != 'A' && c != 'C' && c != 'S') throw ValidationError("drop_cues may only contain A, C, S");
    if (train_graphs < 1 || eval_graphs < 1) throw ValidationError("graph counts must be positive");
  }

  std::array<bool, 3> drop_mask() const {
    std::array<bool, 3> m{false, false, false};
    for (char c : drop_cues) {
      if (c == 'A') m[0] = true;
      if (c == 'C') m[1] = true;
      if (c == 'S') m[2] = true;
    }
    return m;
  }

  PipelineOptions pipeline_options() const {
    PipelineOptions o;
    o.dem = dem;
    o.ssm = ssm;
    o.detach_cue_head = detach_cue_head;
    o.drop_cues = drop_mask();
    o.noise_sigma = noise_sigma;
    return o;
  }
};

struct Config {
  ModelConfig model;
  WorldConfig world;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config: expected boolean, got '" + v + "'");
}

inline DemMode parse_dem(const std::string& v) {
  if (v == "HSG" || v == "hsg") return DemMode::HSG;
  if (v == "Noise" || v == "noise") return DemMode::Noise;
  throw ValidationError("config: dem_mode must be HSG or Noise");
}

inline SsmMode parse_ssm(const std::string& v) {
  if (v == "Stable" || v == "stable") return SsmMode::Stable;
  if (v == "Rand" || v == "rand") return SsmMode::Rand;
  throw ValidationError("config: ssm_mode must be Stable or Rand");
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  return out;
}

}  // namespace detail

inline void apply_config_entry(Config& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  auto as_int = [&] { return std::stoi(value); };
  auto as_double = [&] { return std::stod(value); };
  // model
  if (key == "hypotheses") cfg.model.hypotheses = as_int();
  else if (key == "rank") cfg.model.rank = as_int();
  else if (key == "hidden_dim") cfg.model.hidden_dim = as_int();
  else if (key == "env_dim") cfg.model.env_dim = as_int();
  else if (key == "state_dim") cfg.model.state_dim = as_int();
  else if (key == "max_instruction_len") cfg.model.max_instruction_len = as_int();
  else if (key == "max_episode_len") cfg.model.max_episode_len = as_int();
  else if (key == "num_landmarks") cfg.model.num_landmarks = as_int();
  else if (key == "num_distractors") cfg.model.num_distractors = as_int();
  else if (key == "gpsi_hidden") cfg.model.gpsi_hidden = as_int();
  else if (key == "success_threshold") cfg.model.success_threshold = as_double();
  else if (key == "lambda_agr") cfg.model.lambda_agr = as_double();
  else if (key == "lambda_sm") cfg.model.lambda_sm = as_double();
  else if (key == "lambda_div") cfg.model.lambda_div = as_double();
  else if (key == "seed") cfg.model.seed = std::stoull(value);
  // world
  else if (key == "min_nodes") cfg.world.min_nodes = as_int();
  else if (key == "max_nodes") cfg.world.max_nodes = as_int();
  else if (key == "min_hops") cfg.world.min_hops = as_int();
  else if (key == "distractor_rate") cfg.world.distractor_rate = as_double();
  else if (key == "random_edge_lengths") cfg.world.random_edge_lengths = parse_bool(value);
  else if (key == "connect_radius") cfg.world.connect_radius = as_double();
  else if (key == "feature_jitter") cfg.world.feature_jitter = as_double();
  // training
  else if (key == "iterations") cfg.train.iterations = as_int();
  else if (key == "batch_size") cfg.train.batch_size = as_int();
  else if (key == "learning_rate") cfg.train.learning_rate = as_double();
  else if (key == "dagger_mix") cfg.train.dagger_mix = as_double();
  else if (key == "dagger_anneal") cfg.train.dagger_anneal = parse_bool(value);
  else if (key == "eval_every") cfg.train.eval_every = as_int();
  else if (key == "log_every") cfg.train.log_every = as_int();
  else if (key == "dem_mode") cfg.train.dem = detail::parse_dem(value);
  else if (key == "ssm_mode") cfg.train.ssm = detail::parse_ssm(value);
  else if (key == "optimizer") cfg.train.optimizer = value;
  else if (key == "noise_sigma") cfg.train.noise_sigma = as_double();
  else if (key == "detach_cue_head") cfg.train.detach_cue_head = parse_bool(value);
  else if (key == "drop_cues") cfg.train.drop_cues = value;
  else if (key == "train_graphs") cfg.train.train_graphs = as_int();
  else if (key == "eval_graphs") cfg.train.eval_graphs = as_int();
  else if (key == "log_path") cfg.train.log_path = value;
  else if (key == "checkpoint_path") cfg.train.checkpoint_path = value;
  else if (key == "fp64") cfg.train.fp64 = parse_bool(value);
  else if (key == "seeds") cfg.train.seeds = detail::parse_seed_list(value);
  else throw ValidationError("config: unknown key '" + key + "'");
}

inline void apply_config_text(Config& cfg, std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    apply_config_entry(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline Config load_config(const std::string& path, Config base = Config{}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open '" + path + "'");
  apply_config_text(base, in);
  return base;
}

inline std::string serialize_config(const Config& cfg) {
  std::ostringstream out;
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "# model\n";
  out << "hypotheses = " << cfg.model.hypotheses << "\n";
  out << "rank = " << cfg.model.rank << "\n";
  out << "hidden_dim = " << cfg.model.hidden_dim << "\n";
  out << "env_dim = " << cfg.model.env_dim << "\n";
  out << "state_dim = " << cfg.model.state_dim << "\n";
  out << "max_instruction_len = " << cfg.model.max_instruction_len << "\n";
  out << "max_episode_len = " << cfg.model.max_episode_len << "\n";
  out << "num_landmarks = " << cfg.model.num_landmarks << "\n";
  out << "num_distractors = " << cfg.model.num_distractors << "\n";
  out << "gpsi_hidden = " << cfg.model.gpsi_hidden << "\n";
  out << "success_threshold = " << cfg.model.success_threshold << "\n";
  out << "lambda_agr = " << cfg.model.lambda_agr << "\n";
  out << "lambda_sm = " << cfg.model.lambda_sm << "\n";
  out << "lambda_div = " << cfg.model.lambda_div << "\n";
  out << "seed = " << cfg.model.seed << "\n";
  out << "# world\n";
  out << "min_nodes = " << cfg.world.min_nodes << "\n";
  out << "max_nodes = " << cfg.world.max_nodes << "\n";
  out << "min_hops = " << cfg.world.min_hops << "\n";
  out << "distractor_rate = " << cfg.world.distractor_rate << "\n";
  out << "random_edge_lengths = " << b(cfg.world.random_edge_lengths) << "\n";
  out << "connect_radius = " << cfg.world.connect_radius << "\n";
  out << "feature_jitter = " << cfg.world.feature_jitter << "\n";
  out << "# training\n";
  out << "iterations = " << cfg.train.iterations << "\n";
  out << "batch_size = " << cfg.train.batch_size << "\n";
  out << "learning_rate = " << cfg.train.learning_rate << "\n";
  out << "dagger_mix = " << cfg.train.dagger_mix << "\n";
  out << "dagger_anneal = " << b(cfg.train.dagger_anneal) << "\n";
  out << "eval_every = " << cfg.train.eval_every << "\n";
  out << "log_every = " << cfg.train.log_every << "\n";
  out << "dem_mode = " << to_string(cfg.train.dem) << "\n";
  out << "ssm_mode = " << to_string(cfg.train.ssm) << "\n";
  out << "optimizer = " << cfg.train.optimizer << "\n";
  out << "noise_sigma = " << cfg.train.noise_sigma << "\n";
  out << "detach_cue_head = " << b(cfg.train.detach_cue_head) << "\n";
  out << "drop_cues = " << cfg.train.drop_cues << "\n";
  out << "train_graphs = " << cfg.train.train_graphs << "\n";
  out << "eval_graphs = " << cfg.train.eval_graphs << "\n";
  out << "log_path = " << cfg.train.log_path << "\n";
  out << "checkpoint_path = " << cfg.train.checkpoint_path << "\n";
  out << "fp64 = " << b(cfg.train.fp64) << "\n";
  if (!cfg.train.seeds.empty()) {
    out << "seeds = ";
    for (std::size_t i = 0; i < cfg.train.seeds.size(); ++i)
      out << (i ? "," : "") << cfg.train.seeds[i];
    out << "\n";
  }
  return out.str();
}

}  // namespace sdb
