#include "softmoe/train.hpp"

#include <chrono>
#include <cmath>

#include "softmoe/checkpoint.hpp"

namespace softmoe {

Tensor SynthTask::prototype(long cls) const {
  Rng rng = Rng::fork(seed, 0x70726f74ULL, static_cast<uint64_t>(cls));
  return normal_tensor(rng, channels == 1
                                ? std::vector<long>{image_size, image_size}
                                : std::vector<long>{image_size, image_size, channels});
}

std::pair<Tensor, int> SynthTask::sample(long index) const {
  const int label = static_cast<int>(index % classes);
  Tensor img = prototype(label);
  Rng rng = Rng::fork(seed, 0x73616d70ULL, static_cast<uint64_t>(index));
  for (long i = 0; i < img.numel(); ++i) img.at(i) += noise * rng.normal();
  return {std::move(img), label};
}

std::vector<std::pair<Tensor, int>> SynthTask::make_batch(long first_index,
                                                          long count,
                                                          long wrap) const {
  std::vector<std::pair<Tensor, int>> out;
  out.reserve(static_cast<size_t>(count));
  for (long j = 0; j < count; ++j) {
    long idx = first_index + j;
    if (wrap > 0) idx %= wrap;
    out.push_back(sample(idx));
  }
  return out;
}

LrSchedule parse_schedule(const std::string& name) {
  if (name == "cosine") return LrSchedule::kCosine;
  if (name == "inv_sqrt") return LrSchedule::kInvSqrt;
  throw UsageError("unknown lr schedule '" + name + "'");
}

double learning_rate(const TrainHyper& hyper, long step) {
  const long warmup = std::max<long>(1, std::lround(hyper.warmup_frac *
                                                    static_cast<double>(hyper.steps)));
  if (step < warmup)
    return hyper.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (hyper.schedule == LrSchedule::kInvSqrt)
    return hyper.lr * std::sqrt(static_cast<double>(warmup) /
                                static_cast<double>(step + 1));
  const double span = std::max<long>(1, hyper.steps - warmup);
  const double progress = static_cast<double>(step - warmup) / span;
  return hyper.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

TrainState init_train_state(Encoder& model, uint64_t seed) {
  TrainState st;
  st.rng = Rng::fork(seed, 0x747261696eULL);
  for (auto& [name, t] : model.param_refs()) {
    st.adam_m.push_back(Tensor::zeros(t->dims()));
    st.adam_v.push_back(Tensor::zeros(t->dims()));
  }
  return st;
}

namespace {

double batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  long correct = 0;
  for (long i = 0; i < logits.rows(); ++i) {
    long best = 0;
    for (long j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

}  // namespace

EvalResult evaluate(const Encoder& model,
                    const std::vector<std::pair<Tensor, int>>& data, long batch) {
  if (data.empty()) throw UsageError("evaluate: empty dataset");
  EvalResult r;
  long done = 0;
  while (done < static_cast<long>(data.size())) {
    const long take = std::min<long>(batch, static_cast<long>(data.size()) - done);
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (long j = 0; j < take; ++j) {
      images.push_back(data[static_cast<size_t>(done + j)].first);
      labels.push_back(data[static_cast<size_t>(done + j)].second);
    }
    Graph g;
    Encoder::ForwardResult fwd = model.forward(g, images);
    Graph::Id loss = g.softmax_cross_entropy(fwd.class_logits, labels);
    r.mean_loss += g.value(loss).at(0) * static_cast<double>(take);
    r.accuracy += batch_accuracy(g.value(fwd.class_logits), labels) *
                  static_cast<double>(take);
    done += take;
  }
  r.mean_loss /= static_cast<double>(data.size());
  r.accuracy /= static_cast<double>(data.size());
  return r;
}

std::vector<std::pair<Tensor, int>> eval_set(const SynthTask& task, long count) {
  // disjoint from the training stream, which counts up from 0
  constexpr long kEvalOffset = 1L << 40;
  return task.make_batch(kEvalOffset, count);
}

void train(Encoder& model, TrainState& state, const SynthTask& task,
           const TrainHyper& hyper, const StepCallback& callback) {
  if (task.image_size != model.config().image_size ||
      task.channels != model.config().channels ||
      task.classes != model.config().classes)
    throw UsageError("train: task spec does not match encoder config");
  auto refs = model.param_refs();
  if (refs.size() != state.adam_m.size())
    throw UsageError("train: state was initialized for a different model");

  for (long local = 0; local < hyper.steps; ++local) {
    const auto t0 = std::chrono::steady_clock::now();
    const long step = state.step;

    auto batch = task.make_batch(step * hyper.batch, hyper.batch, hyper.train_size);
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (auto& [img, lab] : batch) {
      images.push_back(std::move(img));
      labels.push_back(lab);
    }

    Graph g;
    Encoder::ForwardResult fwd;
    Graph::Id objective = -1;
    double loss_value = 0.0;
    try {
      fwd = model.forward(g, images);
      Graph::Id loss = g.softmax_cross_entropy(fwd.class_logits, labels);
      objective = loss;
      if (!fwd.aux_losses.empty() && hyper.aux_weight != 0.0) {
        Graph::Id aux_total = fwd.aux_losses[0];
        for (size_t k = 1; k < fwd.aux_losses.size(); ++k)
          aux_total = g.add(aux_total, fwd.aux_losses[k]);
        const double w = hyper.aux_weight / static_cast<double>(fwd.aux_losses.size());
        objective = g.add(loss, g.mul(aux_total, g.constant(Tensor::scalar(w))));
      }
      loss_value = g.value(loss).at(0);
      g.backward(objective);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " +
                         e.what());
    }

    // AdamW update with decoupled weight decay
    const double lr = learning_rate(hyper, step);
    const double b1 = hyper.adam_beta1, b2 = hyper.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
    const auto& bound = g.params();
    if (bound.size() != refs.size())
      throw UsageError("train: graph bound an unexpected parameter set");
    for (size_t k = 0; k < refs.size(); ++k) {
      Tensor& p = *refs[k].second;
      const Tensor& grad = g.grad(bound[k].second);
      Tensor& m = state.adam_m[k];
      Tensor& v = state.adam_v[k];
      for (long i = 0; i < p.numel(); ++i) {
        const double gi = grad.at(i);
        m.at(i) = b1 * m.at(i) + (1.0 - b1) * gi;
        v.at(i) = b2 * v.at(i) + (1.0 - b2) * gi * gi;
        const double mhat = m.at(i) / bc1;
        const double vhat = v.at(i) / bc2;
        p.at(i) -= lr * (mhat / (std::sqrt(vhat) + hyper.adam_eps) +
                         hyper.weight_decay * p.at(i));
        if (!std::isfinite(p.at(i)))
          throw NumericError("training diverged at step " + std::to_string(step) +
                             ": parameter '" + refs[k].first + "' became non-finite");
      }
    }
    state.step += 1;

    const auto t1 = std::chrono::steady_clock::now();
    StepMetrics metrics;
    metrics.step = step;
    metrics.loss = loss_value;
    metrics.acc = batch_accuracy(g.value(fwd.class_logits), labels);
    metrics.drop_rate = fwd.drop_rate;
    metrics.aux_loss = fwd.aux_loss;
    metrics.wall_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (callback) callback(metrics, fwd);

    if (!hyper.out_dir.empty() && hyper.checkpoint_every > 0 &&
        state.step % hyper.checkpoint_every == 0)
      save_encoder(model, hyper.out_dir + "/ckpt-" + std::to_string(state.step) +
                              ".smoe");

    if (hyper.stop_at_acc > 0.0 && hyper.eval_every > 0 &&
        (state.step % hyper.eval_every == 0 || local == hyper.steps - 1)) {
      EvalResult ev = evaluate(model, eval_set(task, hyper.eval_size));
      state.last_eval_acc = ev.accuracy;
      if (ev.accuracy > hyper.stop_at_acc) {
        state.stopped_early = true;
        break;
      }
    }
  }
  if (!hyper.out_dir.empty()) save_encoder(model, hyper.out_dir + "/ckpt-final.smoe");
}

}  // namespace softmoe
