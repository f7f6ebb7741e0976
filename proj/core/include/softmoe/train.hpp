#pragma once

#include <functional>
#include <string>
#include <vector>

#include "softmoe/encoder.hpp"
#include "softmoe/rng.hpp"

namespace softmoe {

/// Deterministic label-balanced synthetic classification task: class
/// prototypes plus Gaussian pixel noise, linearly separable for small noise.
/// sample(i) depends only on (seed, i).
struct SynthTask {
  uint64_t seed = 1;
  long classes = 8;
  long image_size = 32;
  long channels = 1;
  double noise = 0.25;

  Tensor prototype(long cls) const;
  std::pair<Tensor, int> sample(long index) const;
  std::vector<std::pair<Tensor, int>> make_batch(long first_index, long count,
                                                 long wrap = 0) const;
};

enum class LrSchedule { kCosine, kInvSqrt };
LrSchedule parse_schedule(const std::string& name);

struct TrainHyper {
  long steps = 500;
  long batch = 8;
  double lr = 1e-3;
  double warmup_frac = 0.05;
  LrSchedule schedule = LrSchedule::kCosine;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double aux_weight = 0.01;
  long checkpoint_every = 0;  // 0 = final checkpoint only (when out_dir set)
  long eval_every = 0;        // 0 = never evaluate mid-run
  long eval_size = 256;
  double stop_at_acc = 0.0;   // stop once eval accuracy exceeds this; 0 = off
  long train_size = 0;        // 0 = procedurally unbounded sample stream
  std::string out_dir;        // empty = no checkpoints
};

double learning_rate(const TrainHyper& hyper, long step);

struct StepMetrics {
  long step = 0;
  double loss = 0.0;
  double acc = 0.0;
  double drop_rate = 0.0;
  double aux_loss = 0.0;
  double wall_ms = 0.0;
};

/// Optimizer moments, step counter and data-order rng for one run.
struct TrainState {
  std::vector<Tensor> adam_m;  // aligned with Encoder::param_refs() order
  std::vector<Tensor> adam_v;
  long step = 0;
  Rng rng{0};
  bool stopped_early = false;
  double last_eval_acc = 0.0;
};

TrainState init_train_state(Encoder& model, uint64_t seed);

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

EvalResult evaluate(const Encoder& model,
                    const std::vector<std::pair<Tensor, int>>& data,
                    long batch = 16);

/// Fixed held-out set drawn from a disjoint index range of the task stream.
std::vector<std::pair<Tensor, int>> eval_set(const SynthTask& task, long count);

using StepCallback =
    std::function<void(const StepMetrics&, const Encoder::ForwardResult&)>;

/// AdamW steps with warmup + schedule; per-step metrics via callback.
/// Throws NumericError with the failing step in the message if the loss or
/// any activation goes non-finite.
void train(Encoder& model, TrainState& state, const SynthTask& task,
           const TrainHyper& hyper, const StepCallback& callback = nullptr);

}  // namespace softmoe
