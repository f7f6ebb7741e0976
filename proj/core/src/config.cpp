#include "softmoe/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace softmoe {

namespace {

const std::vector<std::pair<const char*, const char*>>& default_entries() {
  static const std::vector<std::pair<const char*, const char*>> kDefaults = {
      {"seed", "42"},
      // backbone
      {"model.image_size", "32"},
      {"model.patch", "4"},
      {"model.channels", "1"},
      {"model.depth", "4"},
      {"model.d", "64"},
      {"model.heads", "4"},
      {"model.d_mlp", "256"},
      {"model.classes", "8"},
      // MoE placement and routing
      {"moe.layers", "2-3"},
      {"moe.router", "soft"},
      {"routing.variant", "uniform"},
      {"moe.n", "16"},
      {"moe.p", "1"},
      {"moe.k", "1"},
      {"moe.c", "1.0"},
      {"moe.bpr", "false"},
      {"moe.group_size", "1"},
      {"moe.normalize", "true"},
      // training
      {"train.steps", "500"},
      {"train.batch", "8"},
      {"train.lr", "1e-3"},
      {"train.warmup_frac", "0.05"},
      {"train.schedule", "cosine"},
      {"train.weight_decay", "0.01"},
      {"train.aux_weight", "0.01"},
      {"train.checkpoint_every", "0"},
      {"train.eval_every", "0"},
      {"train.eval_size", "256"},
      {"train.stop_at_acc", "0"},
      {"train.train_size", "0"},
      {"data.noise", "0.25"},
      // dropping sweep
      {"sweep.routers", "tokens_choice,experts_choice"},
      {"sweep.experts", "8,16,32,64,128"},
      {"sweep.c", "1.0,1.125"},
      {"sweep.k", "1"},
      {"sweep.bpr", "false,true"},
      {"sweep.tokens", "256"},
      {"sweep.trials", "100"},
      // collapse study
      {"collapse.dims", "64,256,1024,4096"},
      {"collapse.trials", "50"},
      {"collapse.tokens", "256"},
      {"collapse.slots", "256"},
      // throughput bench
      {"bench.routers", "soft,tokens_choice"},
      {"bench.experts", "8,64,256"},
      {"bench.slots", "256"},
      {"bench.tokens", "256"},
      {"bench.d", "64"},
      {"bench.d_mlp", "128"},
      {"bench.reps", "20"},
      {"bench.warmup", "3"},
      // flop tables
      {"flops.model", "vit-s16"},
      {"flops.resolution", "224"},
      // checkpoint inspection
      {"inspect.checkpoint", ""},
      {"inspect.samples", "8"},
  };
  return kDefaults;
}

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (const auto& [k, v] : default_entries()) values_[k] = v;
}

bool ExperimentConfig::has(const std::string& key) const {
  return values_.count(key) != 0;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  it->second = value;
}

void ExperimentConfig::set_kv(const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + kv + "' is not of the form key=value");
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

void ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        " has no '=': '" + line + "'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string ExperimentConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

long ExperimentConfig::get_long(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    size_t pos = 0;
    const long out = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double ExperimentConfig::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool ExperimentConfig::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::string> ExperimentConfig::get_string_list(
    const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<long> ExperimentConfig::get_long_list(const std::string& key) const {
  std::vector<long> out;
  for (const std::string& item : get_string_list(key)) {
    const size_t dash = item.find('-', 1);  // allow ranges like "4-7"
    try {
      if (dash != std::string::npos) {
        const long lo = std::stol(item.substr(0, dash));
        const long hi = std::stol(item.substr(dash + 1));
        if (hi < lo) throw std::invalid_argument("");
        for (long v = lo; v <= hi; ++v) out.push_back(v);
      } else {
        out.push_back(std::stol(item));
      }
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' has a bad integer entry '" + item + "'");
    }
  }
  return out;
}

std::vector<double> ExperimentConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& item : get_string_list(key)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' has a bad number entry '" + item + "'");
    }
  }
  return out;
}

std::string ExperimentConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) {  // std::map keeps keys sorted
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

uint64_t ExperimentConfig::seed() const {
  return static_cast<uint64_t>(get_long("seed"));
}

EncoderConfig ExperimentConfig::encoder_config() const {
  EncoderConfig cfg;
  cfg.image_size = get_long("model.image_size");
  cfg.patch = get_long("model.patch");
  cfg.channels = get_long("model.channels");
  cfg.depth = get_long("model.depth");
  cfg.d = get_long("model.d");
  cfg.heads = get_long("model.heads");
  cfg.d_mlp = get_long("model.d_mlp");
  cfg.classes = get_long("model.classes");
  cfg.moe.layers = get_long_list("moe.layers");
  try {
    cfg.moe.router = parse_router(get_string("moe.router"));
    cfg.moe.variant = parse_variant(get_string("routing.variant"));
  } catch (const UsageError& e) {
    throw ConfigError(std::string(e.what()));
  }
  cfg.moe.experts = get_long("moe.n");
  cfg.moe.slots_per_expert = get_long("moe.p");
  cfg.moe.top_k = get_long("moe.k");
  cfg.moe.capacity = get_double("moe.c");
  cfg.moe.bpr = get_bool("moe.bpr");
  cfg.moe.group_size = get_long("moe.group_size");
  cfg.moe.normalize = get_bool("moe.normalize");
  return cfg;
}

SynthTask ExperimentConfig::synth_task() const {
  SynthTask task;
  task.seed = seed();
  task.classes = get_long("model.classes");
  task.image_size = get_long("model.image_size");
  task.channels = get_long("model.channels");
  task.noise = get_double("data.noise");
  return task;
}

TrainHyper ExperimentConfig::train_hyper() const {
  TrainHyper h;
  h.steps = get_long("train.steps");
  h.batch = get_long("train.batch");
  h.lr = get_double("train.lr");
  h.warmup_frac = get_double("train.warmup_frac");
  try {
    h.schedule = parse_schedule(get_string("train.schedule"));
  } catch (const UsageError& e) {
    throw ConfigError(std::string(e.what()));
  }
  h.weight_decay = get_double("train.weight_decay");
  h.aux_weight = get_double("train.aux_weight");
  h.checkpoint_every = get_long("train.checkpoint_every");
  h.eval_every = get_long("train.eval_every");
  h.eval_size = get_long("train.eval_size");
  h.stop_at_acc = get_double("train.stop_at_acc");
  h.train_size = get_long("train.train_size");
  return h;
}

SweepConfig ExperimentConfig::sweep_config() const {
  SweepConfig cfg;
  cfg.routers = get_string_list("sweep.routers");
  cfg.expert_counts = get_long_list("sweep.experts");
  cfg.capacity_mults = get_double_list("sweep.c");
  cfg.ks = get_long_list("sweep.k");
  cfg.bprs.clear();
  for (const std::string& b : get_string_list("sweep.bpr")) {
    if (b == "true" || b == "1") cfg.bprs.push_back(1);
    else if (b == "false" || b == "0") cfg.bprs.push_back(0);
    else throw ConfigError("key 'sweep.bpr' has a bad entry '" + b + "'");
  }
  cfg.group_tokens = get_long("sweep.tokens");
  cfg.trials = get_long("sweep.trials");
  return cfg;
}

BenchGrid ExperimentConfig::bench_grid() const {
  BenchGrid grid;
  grid.routers = get_string_list("bench.routers");
  grid.expert_counts = get_long_list("bench.experts");
  grid.total_slots = get_long("bench.slots");
  grid.tokens = get_long("bench.tokens");
  grid.d = get_long("bench.d");
  grid.d_mlp = get_long("bench.d_mlp");
  grid.reps = get_long("bench.reps");
  grid.warmup = get_long("bench.warmup");
  return grid;
}

}  // namespace softmoe
