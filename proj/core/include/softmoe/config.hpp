#pragma once

#include <map>
#include <string>
#include <vector>

#include "softmoe/bench.hpp"
#include "softmoe/encoder.hpp"
#include "softmoe/sparse_router.hpp"
#include "softmoe/train.hpp"

namespace softmoe {

/// Configuration problem: unknown key, bad value, unreadable file. The
/// message always names the offending key or file.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` experiment configuration with `#` comments and dotted
/// keys. Every key must be registered; unknown keys are rejected.
class ExperimentConfig {
 public:
  ExperimentConfig();  // defaults

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  /// Parses a single "key=value" token (the --set form).
  void set_kv(const std::string& kv);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  long get_long(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Comma lists; long lists also accept "a-b" ranges ("4-7,11").
  std::vector<long> get_long_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  /// Sorted `key = value` dump of every key (defaults plus overrides).
  std::string resolved() const;

  uint64_t seed() const;
  EncoderConfig encoder_config() const;
  SynthTask synth_task() const;
  TrainHyper train_hyper() const;
  SweepConfig sweep_config() const;
  BenchGrid bench_grid() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace softmoe
